//! Planar articulated biped: model description, reduced-coordinate rigid-body
//! dynamics and fixed-step semi-implicit Euler integration.
//!
//! Generalized coordinates are the root translation and pitch (when the root
//! floats) followed by one hinge angle per joint, in model-file order. Every
//! segment frame has its origin at the joint connecting it to its parent;
//! positive angles rotate counter-clockwise, so with `x` forward and `y` up a
//! positive hip angle swings the thigh forward (flexion), a negative knee
//! angle flexes the knee and a positive ankle angle dorsiflexes the foot.
//!
//! Equations of motion are assembled from per-segment Jacobians,
//! `M(q) q'' = sum_b J_b^T (m_b g - m_b Jdot_b q') + tau`, and solved with a
//! Cholesky factorization of the 9x9 (for the biped) mass matrix.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contact::{self, CollisionSphere, ContactParams, ContactSphere};
use crate::error::{Error, Result};
use crate::muscle::{self, Muscle, MuscleSpec};
use crate::terrain::Terrain;

pub const MODEL_SCHEMA: &str = "natwalk.model/1";

/// Planar H0918-scale biped: 9 DOFs, 18 muscles, 75 kg, 1.8 m.
pub const DEFAULT_MODEL: &str = include_str!("../assets/h0918_planar.toml");

/// Default joint-limit spring stiffness, N·m/rad.
pub const LIMIT_STIFFNESS: f64 = 50.0;
/// Default joint-limit damping, N·m·s/rad.
pub const LIMIT_DAMPING: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RootKind {
    #[default]
    Floating,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub name: String,
    pub mass: f64,
    /// Planar moment of inertia about the center of mass, kg·m².
    pub inertia: f64,
    pub length: f64,
    /// Center of mass in the segment frame, m.
    pub com: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub parent: String,
    pub child: String,
    /// Joint location in the parent frame; defaults to the parent's distal
    /// end `(0, -length)`.
    #[serde(default)]
    pub offset: Option<[f64; 2]>,
    /// `[lower, upper]` in rad; absent means unlimited.
    #[serde(default)]
    pub limits: Option<[f64; 2]>,
    #[serde(default = "default_limit_stiffness")]
    pub limit_stiffness: f64,
    #[serde(default = "default_limit_damping")]
    pub limit_damping: f64,
}

fn default_limit_stiffness() -> f64 {
    LIMIT_STIFFNESS
}

fn default_limit_damping() -> f64 {
    LIMIT_DAMPING
}

/// Names the joints and foot segment making up one leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegSpec {
    pub name: String,
    pub hip: String,
    pub knee: String,
    pub ankle: String,
    pub foot: String,
}

/// Divergence guard: exceeding either bound aborts the step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bounds {
    pub max_position: f64,
    pub max_velocity: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            max_position: 1e4,
            max_velocity: 1e3,
        }
    }
}

fn default_gravity() -> f64 {
    9.81
}

/// The model file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub schema: String,
    pub name: String,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    #[serde(default)]
    pub root: RootKind,
    pub segments: Vec<SegmentSpec>,
    #[serde(default)]
    pub joints: Vec<JointSpec>,
    #[serde(default)]
    pub muscles: Vec<MuscleSpec>,
    #[serde(default)]
    pub contact_spheres: Vec<ContactSphere>,
    #[serde(default)]
    pub collision_spheres: Vec<CollisionSphere>,
    #[serde(default)]
    pub contact: ContactParams,
    #[serde(default)]
    pub legs: Vec<LegSpec>,
    #[serde(default)]
    pub bounds: Bounds,
}

/// Full dynamic state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    /// Muscle activations in `[0, 1]`.
    pub a: Vec<f64>,
    pub t: f64,
}

/// Forces evaluated at a state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepReport {
    /// Vertical ground reaction force per foot, N.
    pub grf_per_foot: Vec<f64>,
    /// Magnitude of the limit torque per limited joint, N·m.
    pub joint_limit_torques: Vec<f64>,
    /// Horizontal whole-body center-of-mass velocity, m/s.
    pub com_velocity: f64,
    /// Total leg-leg collision force, N.
    pub self_collision_force: f64,
}

/// Force-element switches, mainly for isolating the rigid-body core in tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub gravity: bool,
    pub muscles: bool,
    pub contacts: bool,
    pub joint_limits: bool,
    pub self_collision: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            gravity: true,
            muscles: true,
            contacts: true,
            joint_limits: true,
            self_collision: true,
        }
    }
}

#[derive(Debug, Clone)]
struct Body {
    name: String,
    parent: Option<usize>,
    /// Joint location in the parent frame.
    offset: [f64; 2],
    mass: f64,
    inertia: f64,
    com: [f64; 2],
    /// Rotational dofs moving this body, paired with the body whose origin is
    /// the pivot of that dof.
    chain: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct JointInfo {
    name: String,
    dof: usize,
    limits: Option<[f64; 2]>,
    stiffness: f64,
    damping: f64,
}

#[derive(Debug, Clone)]
struct GroundSphere {
    body: usize,
    offset: [f64; 2],
    radius: f64,
    foot: usize,
}

#[derive(Debug, Clone)]
struct SelfSphere {
    body: usize,
    offset: [f64; 2],
    radius: f64,
    lateral: f64,
}

/// Resolved leg: dof indices and foot index.
#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    pub name: String,
    pub hip: usize,
    pub knee: usize,
    pub ankle: usize,
    pub foot: usize,
}

/// A joint's limit parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimit {
    pub lower: f64,
    pub upper: f64,
    pub stiffness: f64,
    pub damping: f64,
}

/// Restoring torque of a one-sided spring-damper limit. Zero inside the
/// range; outside it the damping contribution may weaken but never reverse
/// the spring.
pub fn joint_limit_torque(angle: f64, angular_velocity: f64, limit: &JointLimit) -> f64 {
    if angle > limit.upper {
        let excess = angle - limit.upper;
        -(limit.stiffness * excess + limit.damping * angular_velocity).max(0.0)
    } else if angle < limit.lower {
        let excess = limit.lower - angle;
        (limit.stiffness * excess - limit.damping * angular_velocity).max(0.0)
    } else {
        0.0
    }
}

/// Positions and velocities of every segment frame.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
    pub origin: Vec<[f64; 2]>,
    pub origin_vel: Vec<[f64; 2]>,
}

#[inline]
fn rotate(theta: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

#[inline]
fn perp(v: [f64; 2]) -> [f64; 2] {
    [-v[1], v[0]]
}

#[inline]
fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn cross(r: [f64; 2], f: [f64; 2]) -> f64 {
    r[0] * f[1] - r[1] * f[0]
}

impl Kinematics {
    pub fn point(&self, body: usize, local: [f64; 2]) -> [f64; 2] {
        let r = rotate(self.theta[body], local);
        [self.origin[body][0] + r[0], self.origin[body][1] + r[1]]
    }

    pub fn point_velocity(&self, body: usize, world_point: [f64; 2]) -> [f64; 2] {
        let w = perp(sub(world_point, self.origin[body]));
        let o = self.origin_vel[body];
        [o[0] + self.omega[body] * w[0], o[1] + self.omega[body] * w[1]]
    }
}

/// A validated, compiled model.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    bodies: Vec<Body>,
    /// Body indices in parent-before-child order.
    order: Vec<usize>,
    floating: bool,
    n_dofs: usize,
    dof_names: Vec<String>,
    joints: Vec<JointInfo>,
    muscles: Vec<Muscle>,
    ground: Vec<GroundSphere>,
    feet: Vec<(String, usize)>,
    self_spheres: Vec<SelfSphere>,
    self_pairs: Vec<(usize, usize)>,
    legs: Vec<Leg>,
    total_mass: f64,
    pub options: SimOptions,
}

impl ModelSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: ModelSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if spec.schema != MODEL_SCHEMA {
            return Err(Error::Schema {
                expected: MODEL_SCHEMA.into(),
                found: spec.schema,
            });
        }
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }

    pub fn body_weight(&self) -> f64 {
        self.gravity * self.segments.iter().map(|s| s.mass).sum::<f64>()
    }
}

/// Parses and validates a model document.
pub fn load_model(text: &str) -> Result<Model> {
    Model::from_spec(ModelSpec::parse(text)?)
}

impl Model {
    pub fn default_h0918() -> Self {
        load_model(DEFAULT_MODEL).expect("bundled model is valid")
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        load_model(&text)
    }

    pub fn from_spec(spec: ModelSpec) -> Result<Self> {
        let invalid = |m: String| Err(Error::InvalidModel(m));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(spec.gravity.is_finite() && spec.gravity >= 0.0) {
            return invalid("gravity must be non-negative".into());
        }
        if spec.segments.is_empty() {
            return invalid("model has no segments".into());
        }
        let mut seg_index = HashMap::new();
        for (i, s) in spec.segments.iter().enumerate() {
            if seg_index.insert(s.name.as_str(), i).is_some() {
                return invalid(format!("duplicate segment `{}`", s.name));
            }
            if !pos(s.mass) || !pos(s.inertia) || !pos(s.length) {
                return invalid(format!(
                    "segment `{}` needs positive mass, inertia and length",
                    s.name
                ));
            }
            if !s.com.iter().all(|c| c.is_finite()) {
                return invalid(format!("segment `{}` has a non-finite com", s.name));
            }
        }

        // joints: resolve names, check limits, build parent links
        let mut parent_of: Vec<Option<(usize, usize)>> = vec![None; spec.segments.len()];
        let mut joint_names = HashMap::new();
        for (j, js) in spec.joints.iter().enumerate() {
            if joint_names.insert(js.name.as_str(), j).is_some() {
                return invalid(format!("duplicate joint `{}`", js.name));
            }
            let p = *seg_index.get(js.parent.as_str()).ok_or_else(|| {
                Error::DanglingReference(format!("joint `{}` parent `{}`", js.name, js.parent))
            })?;
            let c = *seg_index.get(js.child.as_str()).ok_or_else(|| {
                Error::DanglingReference(format!("joint `{}` child `{}`", js.name, js.child))
            })?;
            if p == c {
                return invalid(format!("joint `{}` connects a segment to itself", js.name));
            }
            if parent_of[c].is_some() {
                return invalid(format!("segment `{}` has more than one parent", js.child));
            }
            parent_of[c] = Some((p, j));
            if let Some([lo, hi]) = js.limits {
                if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
                    return invalid(format!("joint `{}` lower limit must be below upper", js.name));
                }
            }
            if !(js.limit_stiffness >= 0.0 && js.limit_damping >= 0.0) {
                return invalid(format!("joint `{}` limit gains must be non-negative", js.name));
            }
            if let Some(o) = js.offset {
                if !o.iter().all(|v| v.is_finite()) {
                    return invalid(format!("joint `{}` offset is not finite", js.name));
                }
            }
        }
        let roots: Vec<usize> = (0..spec.segments.len()).filter(|&i| parent_of[i].is_none()).collect();
        if roots.len() != 1 {
            return invalid(format!(
                "kinematic tree must have exactly one root segment, found {}",
                roots.len()
            ));
        }
        let root = roots[0];

        // breadth-first order doubles as the connectivity / cycle check
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); spec.segments.len()];
        for (c, p) in parent_of.iter().enumerate() {
            if let Some((p, _)) = p {
                children[*p].push(c);
            }
        }
        let mut order = vec![root];
        let mut head = 0;
        while head < order.len() {
            let b = order[head];
            head += 1;
            order.extend(children[b].iter().copied());
        }
        if order.len() != spec.segments.len() {
            return invalid("kinematic tree is disconnected or cyclic".into());
        }

        let floating = spec.root == RootKind::Floating;
        let n_root = if floating { 3 } else { 0 };
        let n_dofs = n_root + spec.joints.len();
        if n_dofs == 0 {
            return invalid("model has no degrees of freedom".into());
        }
        let mut dof_names = Vec::with_capacity(n_dofs);
        if floating {
            let r = &spec.segments[root].name;
            dof_names.extend([format!("{r}_tx"), format!("{r}_ty"), format!("{r}_tilt")]);
        }
        dof_names.extend(spec.joints.iter().map(|j| j.name.clone()));

        let mut bodies: Vec<Body> = spec
            .segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let (parent, offset) = match parent_of[i] {
                    Some((p, j)) => (
                        Some(p),
                        spec.joints[j]
                            .offset
                            .unwrap_or([0.0, -spec.segments[p].length]),
                    ),
                    None => (None, [0.0, 0.0]),
                };
                Body {
                    name: s.name.clone(),
                    parent,
                    offset,
                    mass: s.mass,
                    inertia: s.inertia,
                    com: s.com,
                    chain: Vec::new(),
                }
            })
            .collect();
        for &b in &order {
            let mut chain = match parent_of[b] {
                Some((p, j)) => {
                    let mut c = bodies[p].chain.clone();
                    c.push((n_root + j, b));
                    c
                }
                None if floating => vec![(2, b)],
                None => Vec::new(),
            };
            chain.shrink_to_fit();
            bodies[b].chain = chain;
        }

        let joints: Vec<JointInfo> = spec
            .joints
            .iter()
            .enumerate()
            .map(|(j, js)| JointInfo {
                name: js.name.clone(),
                dof: n_root + j,
                limits: js.limits,
                stiffness: js.limit_stiffness,
                damping: js.limit_damping,
            })
            .collect();

        let mut muscles = Vec::with_capacity(spec.muscles.len());
        let mut muscle_names = HashMap::new();
        for ms in &spec.muscles {
            ms.validate()?;
            if muscle_names.insert(ms.name.as_str(), ()).is_some() {
                return invalid(format!("duplicate muscle `{}`", ms.name));
            }
            let mut dofs = Vec::with_capacity(ms.arms.len());
            for arm in &ms.arms {
                let j = *joint_names.get(arm.joint.as_str()).ok_or_else(|| {
                    Error::DanglingReference(format!("muscle `{}` joint `{}`", ms.name, arm.joint))
                })?;
                dofs.push((n_root + j, arm.arm));
            }
            muscles.push(Muscle { spec: ms.clone(), dofs });
        }

        spec.contact.validate()?;
        let mut feet: Vec<(String, usize)> = Vec::new();
        let mut ground = Vec::with_capacity(spec.contact_spheres.len());
        for cs in &spec.contact_spheres {
            let body = *seg_index.get(cs.segment.as_str()).ok_or_else(|| {
                Error::DanglingReference(format!("contact sphere segment `{}`", cs.segment))
            })?;
            if !pos(cs.radius) {
                return invalid(format!("contact sphere on `{}` needs a positive radius", cs.segment));
            }
            let foot = match feet.iter().position(|(_, b)| *b == body) {
                Some(f) => f,
                None => {
                    feet.push((cs.segment.clone(), body));
                    feet.len() - 1
                }
            };
            ground.push(GroundSphere {
                body,
                offset: cs.offset,
                radius: cs.radius,
                foot,
            });
        }

        let mut legs = Vec::with_capacity(spec.legs.len());
        for ls in &spec.legs {
            let dof = |name: &str| -> Result<usize> {
                joint_names
                    .get(name)
                    .map(|j| n_root + j)
                    .ok_or_else(|| Error::DanglingReference(format!("leg `{}` joint `{name}`", ls.name)))
            };
            let foot = feet.iter().position(|(n, _)| *n == ls.foot).ok_or_else(|| {
                Error::DanglingReference(format!("leg `{}` foot `{}` has no contact spheres", ls.name, ls.foot))
            })?;
            legs.push(Leg {
                name: ls.name.clone(),
                hip: dof(&ls.hip)?,
                knee: dof(&ls.knee)?,
                ankle: dof(&ls.ankle)?,
                foot,
            });
        }
        for (f, (name, _)) in feet.iter().enumerate() {
            let n = ground.iter().filter(|g| g.foot == f).count();
            if !legs.is_empty() && n < 2 {
                return invalid(format!("foot `{name}` needs at least two contact spheres"));
            }
        }
        if !legs.is_empty() && !floating {
            return invalid("legged models need a floating root".into());
        }

        let mut self_spheres = Vec::with_capacity(spec.collision_spheres.len());
        for cs in &spec.collision_spheres {
            let body = *seg_index.get(cs.segment.as_str()).ok_or_else(|| {
                Error::DanglingReference(format!("collision sphere segment `{}`", cs.segment))
            })?;
            if !pos(cs.radius) || !cs.lateral.is_finite() {
                return invalid(format!("collision sphere on `{}` is malformed", cs.segment));
            }
            self_spheres.push(SelfSphere {
                body,
                offset: cs.offset,
                radius: cs.radius,
                lateral: cs.lateral,
            });
        }
        // spheres collide only across branches: neither body is an ancestor
        // of the other
        let ancestor = |a: usize, mut b: usize| -> bool {
            loop {
                if a == b {
                    return true;
                }
                match bodies[b].parent {
                    Some(p) => b = p,
                    None => return false,
                }
            }
        };
        let mut self_pairs = Vec::new();
        for i in 0..self_spheres.len() {
            for j in (i + 1)..self_spheres.len() {
                let (a, b) = (self_spheres[i].body, self_spheres[j].body);
                if !ancestor(a, b) && !ancestor(b, a) {
                    self_pairs.push((i, j));
                }
            }
        }

        let total_mass = spec.segments.iter().map(|s| s.mass).sum();
        Ok(Self {
            spec,
            bodies,
            order,
            floating,
            n_dofs,
            dof_names,
            joints,
            muscles,
            ground,
            feet,
            self_spheres,
            self_pairs,
            legs,
            total_mass,
            options: SimOptions::default(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_muscles(&self) -> usize {
        self.muscles.len()
    }

    pub fn n_feet(&self) -> usize {
        self.feet.len()
    }

    pub fn is_floating(&self) -> bool {
        self.floating
    }

    pub fn dof_names(&self) -> &[String] {
        &self.dof_names
    }

    pub fn muscle_names(&self) -> Vec<&str> {
        self.muscles.iter().map(|m| m.spec.name.as_str()).collect()
    }

    pub fn muscles(&self) -> &[Muscle] {
        &self.muscles
    }

    pub fn foot_names(&self) -> Vec<&str> {
        self.feet.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn legs(&self) -> &[Leg] {
        &self.legs
    }

    pub fn segment_names(&self) -> Vec<&str> {
        self.bodies.iter().map(|b| b.name.as_str()).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn gravity(&self) -> f64 {
        self.spec.gravity
    }

    /// Body weight in N.
    pub fn body_weight(&self) -> f64 {
        self.spec.gravity * self.total_mass
    }

    /// Limits of every limited joint, in joint order, with their dof index.
    pub fn joint_limits(&self) -> Vec<(usize, JointLimit)> {
        self.joints
            .iter()
            .filter_map(|j| {
                j.limits.map(|[lower, upper]| {
                    (
                        j.dof,
                        JointLimit {
                            lower,
                            upper,
                            stiffness: j.stiffness,
                            damping: j.damping,
                        },
                    )
                })
            })
            .collect()
    }

    pub fn joint_names(&self) -> Vec<&str> {
        self.joints.iter().map(|j| j.name.as_str()).collect()
    }

    pub fn zero_state(&self) -> SimState {
        SimState {
            q: vec![0.0; self.n_dofs],
            qdot: vec![0.0; self.n_dofs],
            a: vec![0.0; self.muscles.len()],
            t: 0.0,
        }
    }

    pub fn check_state(&self, state: &SimState) -> Result<()> {
        let dim = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { what, expected, got })
            }
        };
        dim("q", self.n_dofs, state.q.len())?;
        dim("qdot", self.n_dofs, state.qdot.len())?;
        dim("activations", self.muscles.len(), state.a.len())
    }

    pub fn kinematics(&self, q: &[f64], qdot: &[f64]) -> Kinematics {
        let n = self.bodies.len();
        let mut kin = Kinematics {
            theta: vec![0.0; n],
            omega: vec![0.0; n],
            origin: vec![[0.0; 2]; n],
            origin_vel: vec![[0.0; 2]; n],
        };
        let n_root = if self.floating { 3 } else { 0 };
        for &b in &self.order {
            match self.bodies[b].parent {
                None => {
                    if self.floating {
                        kin.origin[b] = [q[0], q[1]];
                        kin.origin_vel[b] = [qdot[0], qdot[1]];
                        kin.theta[b] = q[2];
                        kin.omega[b] = qdot[2];
                    }
                }
                Some(p) => {
                    let dof = self.bodies[b].chain.last().expect("child has a joint dof").0;
                    debug_assert!(dof >= n_root);
                    let r = rotate(kin.theta[p], self.bodies[b].offset);
                    kin.origin[b] = [kin.origin[p][0] + r[0], kin.origin[p][1] + r[1]];
                    let w = perp(r);
                    kin.origin_vel[b] = [
                        kin.origin_vel[p][0] + kin.omega[p] * w[0],
                        kin.origin_vel[p][1] + kin.omega[p] * w[1],
                    ];
                    kin.theta[b] = kin.theta[p] + q[dof];
                    kin.omega[b] = kin.omega[p] + qdot[dof];
                }
            }
        }
        kin
    }

    /// Adds `J_p^T f` for a world force `f` applied at world point `p` of
    /// `body` to the generalized force vector.
    fn apply_point_force(&self, kin: &Kinematics, body: usize, p: [f64; 2], f: [f64; 2], gen: &mut [f64]) {
        if self.floating {
            gen[0] += f[0];
            gen[1] += f[1];
        }
        for &(dof, pivot) in &self.bodies[body].chain {
            gen[dof] += cross(sub(p, kin.origin[pivot]), f);
        }
    }

    fn com_world(&self, kin: &Kinematics, b: usize) -> [f64; 2] {
        kin.point(b, self.bodies[b].com)
    }

    /// Joint-space mass matrix (row-major, n x n).
    pub fn mass_matrix(&self, kin: &Kinematics) -> Vec<f64> {
        let n = self.n_dofs;
        let mut m = vec![0.0; n * n];
        let mut cols: Vec<(usize, [f64; 2], bool)> = Vec::with_capacity(n);
        for (b, body) in self.bodies.iter().enumerate() {
            cols.clear();
            if self.floating {
                cols.push((0, [1.0, 0.0], false));
                cols.push((1, [0.0, 1.0], false));
            }
            let c = self.com_world(kin, b);
            for &(dof, pivot) in &body.chain {
                cols.push((dof, perp(sub(c, kin.origin[pivot])), true));
            }
            for &(i, ci, ri) in &cols {
                for &(j, cj, rj) in &cols {
                    let mut v = body.mass * (ci[0] * cj[0] + ci[1] * cj[1]);
                    if ri && rj {
                        v += body.inertia;
                    }
                    m[i * n + j] += v;
                }
            }
        }
        m
    }

    /// Gravity and velocity-product generalized forces.
    fn passive_forces(&self, kin: &Kinematics, qdot: &[f64], gen: &mut [f64]) {
        let g = if self.options.gravity { self.spec.gravity } else { 0.0 };
        for (b, body) in self.bodies.iter().enumerate() {
            let c = self.com_world(kin, b);
            let vc = kin.point_velocity(b, c);
            // COM acceleration at zero joint acceleration
            let mut acc = [0.0, 0.0];
            for &(dof, pivot) in &body.chain {
                let w = perp(sub(vc, kin.origin_vel[pivot]));
                acc[0] += qdot[dof] * w[0];
                acc[1] += qdot[dof] * w[1];
            }
            let f = [-body.mass * acc[0], -body.mass * (acc[1] + g)];
            self.apply_point_force(kin, b, c, f, gen);
        }
    }

    /// Total mechanical energy (kinetic + gravitational potential), J.
    pub fn energy(&self, state: &SimState) -> f64 {
        let kin = self.kinematics(&state.q, &state.qdot);
        let g = if self.options.gravity { self.spec.gravity } else { 0.0 };
        let mut e = 0.0;
        for (b, body) in self.bodies.iter().enumerate() {
            if !self.floating && body.parent.is_none() {
                continue;
            }
            let c = self.com_world(&kin, b);
            let v = kin.point_velocity(b, c);
            e += 0.5 * body.mass * (v[0] * v[0] + v[1] * v[1]);
            e += 0.5 * body.inertia * kin.omega[b] * kin.omega[b];
            e += body.mass * g * c[1];
        }
        e
    }

    /// Whole-body center of mass position and velocity. A fixed root body
    /// does not move and is excluded.
    pub fn center_of_mass(&self, kin: &Kinematics) -> ([f64; 2], [f64; 2]) {
        let mut p = [0.0; 2];
        let mut v = [0.0; 2];
        let mut m = 0.0;
        for (b, body) in self.bodies.iter().enumerate() {
            if !self.floating && body.parent.is_none() {
                continue;
            }
            let c = self.com_world(kin, b);
            let vc = kin.point_velocity(b, c);
            p[0] += body.mass * c[0];
            p[1] += body.mass * c[1];
            v[0] += body.mass * vc[0];
            v[1] += body.mass * vc[1];
            m += body.mass;
        }
        ([p[0] / m, p[1] / m], [v[0] / m, v[1] / m])
    }

    /// Linear momentum of the moving bodies, kg·m/s.
    pub fn linear_momentum(&self, state: &SimState) -> [f64; 2] {
        let kin = self.kinematics(&state.q, &state.qdot);
        let (_, v) = self.center_of_mass(&kin);
        let m: f64 = self
            .bodies
            .iter()
            .filter(|b| self.floating || b.parent.is_some())
            .map(|b| b.mass)
            .sum();
        [m * v[0], m * v[1]]
    }

    /// Per-muscle forces at a state.
    pub fn muscle_forces(&self, state: &SimState) -> Vec<f64> {
        self.muscles
            .iter()
            .zip(&state.a)
            .map(|(m, &a)| {
                let fiber = muscle::muscle_kinematics(&state.q, &state.qdot, m);
                muscle::muscle_force(a, fiber.length, fiber.velocity, &m.spec)
            })
            .collect()
    }

    /// Ground and self contact forces as generalized forces, with the
    /// per-foot vertical GRF and the total self-collision force.
    pub fn resolve_contacts(
        &self,
        kin: &Kinematics,
        terrain: &Terrain,
        gen: &mut [f64],
    ) -> (Vec<f64>, f64) {
        let params = &self.spec.contact;
        let mut grf = vec![0.0; self.feet.len()];
        for s in &self.ground {
            let center = kin.point(s.body, s.offset);
            let (ground_y, normal) = terrain.height_and_normal(center[0]);
            if center[1] - s.radius > ground_y + 0.05 {
                continue;
            }
            let point = [center[0] - s.radius * normal[0], center[1] - s.radius * normal[1]];
            let vp = kin.point_velocity(s.body, point);
            let c = contact::sphere_plane(center, s.radius, ground_y, normal, vp, params);
            if c.penetration > 0.0 {
                grf[s.foot] += c.force[1].max(0.0);
                self.apply_point_force(kin, s.body, c.point, c.force, gen);
            }
        }
        let mut self_force = 0.0;
        let pairs = if self.options.self_collision { &self.self_pairs[..] } else { &[] };
        for &(i, j) in pairs {
            let (a, b) = (&self.self_spheres[i], &self.self_spheres[j]);
            let pa = kin.point(a.body, a.offset);
            let pb = kin.point(b.body, b.offset);
            let d = [pa[0] - pb[0], pa[1] - pb[1], a.lateral - b.lateral];
            let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let penetration = a.radius + b.radius - dist;
            if penetration <= 0.0 || dist == 0.0 {
                continue;
            }
            let n = [d[0] / dist, d[1] / dist];
            let va = kin.point_velocity(a.body, pa);
            let vb = kin.point_velocity(b.body, pb);
            let rate = -((va[0] - vb[0]) * n[0] + (va[1] - vb[1]) * n[1]);
            let f = contact::normal_force(penetration, rate, params);
            self_force += f;
            self.apply_point_force(kin, a.body, pa, [f * n[0], f * n[1]], gen);
            self.apply_point_force(kin, b.body, pb, [-f * n[0], -f * n[1]], gen);
        }
        (grf, self_force)
    }

    /// Limit torques added to `gen`; returns their magnitudes per limited joint.
    fn limit_torques(&self, q: &[f64], qdot: &[f64], gen: &mut [f64]) -> Vec<f64> {
        let mut mags = Vec::with_capacity(self.joints.len());
        for j in &self.joints {
            if let Some([lower, upper]) = j.limits {
                let lim = JointLimit {
                    lower,
                    upper,
                    stiffness: j.stiffness,
                    damping: j.damping,
                };
                let tau = joint_limit_torque(q[j.dof], qdot[j.dof], &lim);
                gen[j.dof] += tau;
                mags.push(tau.abs());
            }
        }
        mags
    }

    /// Evaluates all applied forces at `state`. Returns the right-hand side
    /// of the equations of motion and the force report.
    fn forces(&self, state: &SimState, kin: &Kinematics, terrain: &Terrain) -> (Vec<f64>, StepReport) {
        let mut gen = vec![0.0; self.n_dofs];
        self.passive_forces(kin, &state.qdot, &mut gen);
        if self.options.muscles && !self.muscles.is_empty() {
            for (m, &a) in self.muscles.iter().zip(&state.a) {
                let fiber = muscle::muscle_kinematics(&state.q, &state.qdot, m);
                let f = muscle::muscle_force(a, fiber.length, fiber.velocity, &m.spec);
                for &(dof, arm) in &m.dofs {
                    gen[dof] += arm * f;
                }
            }
        }
        let joint_limit_torques = if self.options.joint_limits {
            self.limit_torques(&state.q, &state.qdot, &mut gen)
        } else {
            vec![0.0; self.joints.iter().filter(|j| j.limits.is_some()).count()]
        };
        let (grf_per_foot, self_collision_force) = if self.options.contacts {
            self.resolve_contacts(kin, terrain, &mut gen)
        } else {
            (vec![0.0; self.feet.len()], 0.0)
        };
        let (_, com_v) = self.center_of_mass(kin);
        (
            gen,
            StepReport {
                grf_per_foot,
                joint_limit_torques,
                com_velocity: com_v[0],
                self_collision_force,
            },
        )
    }

    /// Forces at a state without advancing it.
    pub fn report(&self, state: &SimState, terrain: &Terrain) -> StepReport {
        let kin = self.kinematics(&state.q, &state.qdot);
        self.forces(state, &kin, terrain).1
    }

    /// Generalized accelerations at a state.
    pub fn accelerations(&self, state: &SimState, terrain: &Terrain) -> Result<Vec<f64>> {
        let kin = self.kinematics(&state.q, &state.qdot);
        let (rhs, _) = self.forces(state, &kin, terrain);
        let m = self.mass_matrix(&kin);
        let n = self.n_dofs;
        let chol = DMatrix::from_row_slice(n, n, &m).cholesky().ok_or_else(|| Error::Diverged {
            time: state.t,
            reason: "mass matrix is not positive definite".into(),
        })?;
        Ok(chol.solve(&DVector::from_vec(rhs)).as_slice().to_vec())
    }

    fn check_divergence(&self, state: &SimState) -> Result<()> {
        let b = &self.spec.bounds;
        for (i, (&q, &v)) in state.q.iter().zip(&state.qdot).enumerate() {
            if !q.is_finite() || !v.is_finite() {
                return Err(Error::Diverged {
                    time: state.t,
                    reason: format!("non-finite state in `{}`", self.dof_names[i]),
                });
            }
            if q.abs() > b.max_position || v.abs() > b.max_velocity {
                return Err(Error::Diverged {
                    time: state.t,
                    reason: format!("`{}` left the configured bounds", self.dof_names[i]),
                });
            }
        }
        Ok(())
    }

    /// One semi-implicit Euler step of length `dt` without the report.
    pub fn integrate(&self, state: &SimState, u: &[f64], dt: f64, terrain: &Terrain) -> Result<SimState> {
        let mut next = state.clone();
        for ((a, &ui), m) in next.a.iter_mut().zip(u).zip(&self.muscles) {
            *a = muscle::activation_step(*a, ui, dt, m.spec.tau_act, m.spec.tau_deact);
        }
        let qddot = self.accelerations(&next, terrain)?;
        for ((q, v), acc) in next.q.iter_mut().zip(next.qdot.iter_mut()).zip(&qddot) {
            *v += dt * acc;
            *q += dt * *v;
        }
        next.t = state.t + dt;
        self.check_divergence(&next)?;
        Ok(next)
    }

    fn check_inputs(&self, state: &SimState, u: &[f64], dt: f64) -> Result<()> {
        self.check_state(state)?;
        if u.len() != self.muscles.len() {
            return Err(Error::DimensionMismatch {
                what: "excitations",
                expected: self.muscles.len(),
                got: u.len(),
            });
        }
        if u.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidArgument("excitations must lie in [0, 1]".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        Ok(())
    }

    /// Advances the state by one fixed step and reports forces at the new
    /// state.
    pub fn step(&self, state: &SimState, u: &[f64], dt: f64, terrain: &Terrain) -> Result<(SimState, StepReport)> {
        self.check_inputs(state, u, dt)?;
        let next = self.integrate(state, u, dt, terrain)?;
        let report = self.report(&next, terrain);
        Ok((next, report))
    }

    /// Holds `u` for `substeps` physics steps of `dt` each (one control step).
    pub fn advance(
        &self,
        state: &SimState,
        u: &[f64],
        dt: f64,
        substeps: usize,
        terrain: &Terrain,
    ) -> Result<(SimState, StepReport)> {
        self.check_inputs(state, u, dt)?;
        let mut s = state.clone();
        for _ in 0..substeps {
            s = self.integrate(&s, u, dt, terrain)?;
        }
        let report = self.report(&s, terrain);
        Ok((s, report))
    }

    /// Lowest point of a foot's contact spheres minus the terrain height
    /// beneath it.
    pub fn foot_clearance(&self, kin: &Kinematics, foot: usize, terrain: &Terrain) -> f64 {
        self.ground
            .iter()
            .filter(|g| g.foot == foot)
            .map(|g| {
                let c = kin.point(g.body, g.offset);
                c[1] - g.radius - terrain.height(c[0])
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Height of the root origin when standing upright with flat feet on
    /// level ground.
    pub fn standing_height(&self) -> f64 {
        let st = self.zero_state();
        let kin = self.kinematics(&st.q, &st.qdot);
        let flat = Terrain::flat();
        let lowest = (0..self.feet.len())
            .map(|f| self.foot_clearance(&kin, f, &flat))
            .fold(f64::INFINITY, f64::min);
        if lowest.is_finite() {
            -lowest
        } else {
            0.0
        }
    }

    /// Root height (`q[1]`) for floating models.
    pub fn root_height(&self, state: &SimState) -> f64 {
        if self.floating {
            state.q[1]
        } else {
            0.0
        }
    }

    /// Randomized initial state on flat ground.
    pub fn reset(&self, seed: u64) -> SimState {
        self.reset_on(&Terrain::flat(), seed)
    }

    /// Randomized standing posture with one leg lifted. The root is placed
    /// at the terrain's start so the lowest sphere of the stance foot just
    /// touches the ground, and the lifted foot clears the ground by at least
    /// [`RESET_MIN_CLEARANCE`].
    pub fn reset_on(&self, terrain: &Terrain, seed: u64) -> SimState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = self.zero_state();
        if !self.floating || self.legs.is_empty() {
            for (q, v) in st.q.iter_mut().zip(st.qdot.iter_mut()) {
                *q = rng.gen_range(-0.02..0.02);
                *v = rng.gen_range(-0.05..0.05);
            }
            return st;
        }
        let lifted = rng.gen_range(0..self.legs.len());
        let tilt = rng.gen_range(-0.05..0.05);
        st.q[2] = tilt;
        for (i, leg) in self.legs.iter().enumerate() {
            if i == lifted {
                st.q[leg.hip] = 0.35 + rng.gen_range(0.0..0.2);
                st.q[leg.knee] = -(0.5 + rng.gen_range(0.0..0.3));
                st.q[leg.ankle] = rng.gen_range(-0.1..0.1);
            } else {
                st.q[leg.hip] = rng.gen_range(-0.05..0.05);
                st.q[leg.knee] = -rng.gen_range(0.0..0.1);
                // stance foot flat on the ground
                st.q[leg.ankle] = -(tilt + st.q[leg.hip] + st.q[leg.knee]);
            }
        }
        for v in st.qdot.iter_mut() {
            *v = rng.gen_range(-0.05..0.05);
        }
        st.qdot[1] = 0.0;
        st.q[0] = terrain.start_x();
        let leg = self.legs[lifted].clone();
        for _ in 0..100 {
            self.place_on_ground(&mut st, terrain);
            let kin = self.kinematics(&st.q, &st.qdot);
            if self.foot_clearance(&kin, leg.foot, terrain) >= RESET_MIN_CLEARANCE {
                break;
            }
            st.q[leg.hip] += 0.05;
        }
        st
    }

    fn place_on_ground(&self, st: &mut SimState, terrain: &Terrain) {
        st.q[1] = 0.0;
        let kin = self.kinematics(&st.q, &st.qdot);
        let lowest = (0..self.feet.len())
            .map(|f| self.foot_clearance(&kin, f, terrain))
            .fold(f64::INFINITY, f64::min);
        st.q[1] = -lowest;
    }
}

/// Minimum clearance of the lifted foot after [`Model::reset`], m.
pub const RESET_MIN_CLEARANCE: f64 = 0.05;
