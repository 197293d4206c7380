//! Off-policy actor-critic learner.
//!
//! The reference learner is a deterministic policy gradient method with twin
//! critics, target networks and target-policy smoothing. Exploration uses
//! per-muscle Ornstein-Uhlenbeck noise. Networks are small dense MLPs with
//! ReLU hidden layers trained with Adam.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::ReplayBuffer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub steps_before_batches: u64,
    pub steps_between_batches: u64,
    pub batches_per_update: usize,
    pub discount: f64,
    /// Polyak factor of the target networks.
    pub target_tau: f64,
    /// Target-policy smoothing noise std and clip, in excitation units.
    pub target_noise: f64,
    pub target_noise_clip: f64,
    /// Stationary std of the exploration noise.
    pub noise_sigma: f64,
    /// Correlation time of the exploration noise, s.
    pub noise_tau: f64,
    pub replay_capacity: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            batch_size: 256,
            steps_before_batches: 200_000,
            steps_between_batches: 1000,
            batches_per_update: 30,
            discount: 0.99,
            target_tau: 0.005,
            target_noise: 0.05,
            target_noise_clip: 0.1,
            noise_sigma: 0.1,
            noise_tau: 0.1,
            replay_capacity: crate::replay::DEFAULT_CAPACITY,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 || self.batches_per_update == 0 || self.steps_between_batches == 0 {
            return bad("batch size and update counts must be positive");
        }
        if !(0.0..=1.0).contains(&self.discount) || !(0.0..=1.0).contains(&self.target_tau) {
            return bad("discount and target_tau must lie in [0, 1]");
        }
        if self.noise_sigma < 0.0 || !(self.noise_tau > 0.0) || self.target_noise < 0.0 {
            return bad("noise parameters must be non-negative with positive correlation time");
        }
        if self.replay_capacity == 0 {
            return bad("replay capacity must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputKind {
    Linear,
    /// `scale * sigmoid(z)`.
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    w: Array2<f32>,
    b: Array1<f32>,
}

/// Dense network with ReLU hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    output: OutputKind,
    scale: f32,
}

/// Activations kept from a forward pass for backpropagation.
pub struct Trace {
    inputs: Vec<Array2<f32>>,
    out: Array2<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    layers: Vec<(Array2<f32>, Array1<f32>)>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: OutputKind, scale: f32, rng: &mut R) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                // uniform fan-in init
                let bound = (1.0 / w[0] as f32).sqrt();
                Dense {
                    w: Array2::from_shape_fn((w[0], w[1]), |_| rng.gen_range(-bound..bound)),
                    b: Array1::from_shape_fn(w[1], |_| rng.gen_range(-bound..bound)),
                }
            })
            .collect();
        Self { layers, output, scale }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.ncols()
    }

    pub fn forward(&self, x: &Array2<f32>) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.w) + &l.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = z;
        }
        if self.output == OutputKind::Sigmoid {
            let s = self.scale;
            h.mapv_inplace(|v| s / (1.0 + (-v).exp()));
        }
        Trace { inputs, out: h }
    }

    pub fn predict(&self, x: &Array2<f32>) -> Array2<f32> {
        self.forward(x).out
    }

    /// Forward pass of a single input. Vector-matrix products skip the gemm
    /// packing buffers, which are large and, allocated once per control
    /// step between long-lived replay entries, fragment the heap.
    pub fn predict_one(&self, x: &[f32]) -> Array1<f32> {
        let mut h = ndarray::ArrayView1::from(x).to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.w) + &l.b;
            if i < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        if self.output == OutputKind::Sigmoid {
            let s = self.scale;
            h.mapv_inplace(|v| s / (1.0 + (-v).exp()));
        }
        h
    }

    /// Gradients of `sum(d_out * out)` w.r.t. the parameters and the input.
    pub fn backward(&self, trace: &Trace, d_out: &Array2<f32>) -> (Grads, Array2<f32>) {
        let mut g = d_out.clone();
        if self.output == OutputKind::Sigmoid {
            let s = self.scale;
            g.zip_mut_with(&trace.out, |d, &y| *d *= y * (1.0 - y / s));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate().rev() {
            let x = &trace.inputs[i];
            let gw = x.t().dot(&g);
            let gb = g.sum_axis(Axis(0));
            layers.push((gw, gb));
            let mut gx = g.dot(&l.w.t());
            if i > 0 {
                // x is the ReLU output of the previous layer
                gx.zip_mut_with(x, |d, &v| {
                    if v <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            g = gx;
        }
        layers.reverse();
        (Grads { layers }, g)
    }

    /// `self <- tau * other + (1 - tau) * self`.
    pub fn soft_update(&mut self, other: &Mlp, tau: f32) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w.zip_mut_with(&b.w, |x, &y| *x += tau * (y - *x));
            a.b.zip_mut_with(&b.b, |x, &y| *x += tau * (y - *x));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: i32,
    m: Vec<(Array2<f32>, Array1<f32>)>,
    v: Vec<(Array2<f32>, Array1<f32>)>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let zeros: Vec<_> = net
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.len())))
            .collect();
        Self {
            lr: lr as f32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Gradient-descent step.
    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let lr_t = self.lr * (1.0 - b2.powi(self.t)).sqrt() / (1.0 - b1.powi(self.t));
        for (i, (gw, gb)) in grads.layers.iter().enumerate() {
            let layer = &mut net.layers[i];
            let (mw, mb) = &mut self.m[i];
            let (vw, vb) = &mut self.v[i];
            ndarray::Zip::from(&mut layer.w).and(&mut *mw).and(&mut *vw).and(gw).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr_t * *m / (v.sqrt() + eps);
            });
            ndarray::Zip::from(&mut layer.b).and(&mut *mb).and(&mut *vb).and(gb).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr_t * *m / (v.sqrt() + eps);
            });
        }
    }
}

/// Ornstein-Uhlenbeck noise with stationary std `sigma` and correlation time
/// `tau`, sampled every `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuNoise {
    x: Vec<f64>,
    decay: f64,
    kick: f64,
}

impl OuNoise {
    pub fn new(dim: usize, sigma: f64, tau: f64, dt: f64) -> Self {
        let decay = (-dt / tau).exp();
        Self {
            x: vec![0.0; dim],
            decay,
            kick: sigma * (1.0 - decay * decay).sqrt(),
        }
    }

    pub fn reset(&mut self) {
        self.x.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[f64] {
        for x in self.x.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *x = self.decay * *x + self.kick * n;
        }
        &self.x
    }
}

fn rows(data: &[&[f32]], dim: usize) -> Array2<f32> {
    let mut out = Array2::zeros((data.len(), dim));
    for (mut row, d) in out.rows_mut().into_iter().zip(data) {
        row.assign(&ndarray::ArrayView1::from(*d));
    }
    out
}

fn concat(a: &Array2<f32>, b: &Array2<f32>) -> Array2<f32> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts match")
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mean_q: f64,
    pub updates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub cfg: LearnerConfig,
    obs_dim: usize,
    act_dim: usize,
    clip: f32,
    actor: Mlp,
    actor_target: Mlp,
    critics: [Mlp; 2],
    critic_targets: [Mlp; 2],
    actor_opt: Adam,
    critic_opts: [Adam; 2],
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, clip: f64, cfg: LearnerConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if obs_dim == 0 || act_dim == 0 {
            return Err(Error::InvalidArgument("observation and action sizes must be positive".into()));
        }
        let mut sizes = vec![obs_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(act_dim);
        let actor = Mlp::new(&sizes, OutputKind::Sigmoid, clip as f32, rng);
        sizes[0] = obs_dim + act_dim;
        *sizes.last_mut().unwrap() = 1;
        let critics = [
            Mlp::new(&sizes, OutputKind::Linear, 1.0, rng),
            Mlp::new(&sizes, OutputKind::Linear, 1.0, rng),
        ];
        Ok(Self {
            obs_dim,
            act_dim,
            clip: clip as f32,
            actor_target: actor.clone(),
            actor_opt: Adam::new(&actor, cfg.actor_lr),
            critic_opts: [Adam::new(&critics[0], cfg.critic_lr), Adam::new(&critics[1], cfg.critic_lr)],
            critic_targets: critics.clone(),
            actor,
            critics,
            cfg,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn clip(&self) -> f64 {
        self.clip as f64
    }

    pub fn policy(&self) -> &Mlp {
        &self.actor
    }

    /// Deterministic policy output plus optional exploration noise, clipped
    /// to `[0, clip]`.
    pub fn act(&self, obs: &[f32], noise: Option<&[f64]>) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(Error::DimensionMismatch {
                what: "observation",
                expected: self.obs_dim,
                got: obs.len(),
            });
        }
        let y = self.actor.predict_one(obs);
        let clip = self.clip as f64;
        let mut u: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        if let Some(n) = noise {
            if n.len() != u.len() {
                return Err(Error::DimensionMismatch { what: "noise", expected: u.len(), got: n.len() });
            }
            u.iter_mut().zip(n).for_each(|(u, n)| *u += n);
        }
        Ok(u.into_iter().map(|v| if v.is_finite() { v.clamp(0.0, clip) } else { 0.0 }).collect())
    }

    /// Whether a learning phase is due after `global_step` collected steps,
    /// `since_last` of them after the previous phase.
    pub fn update_due(&self, global_step: u64, since_last: u64, buffer_len: usize) -> bool {
        global_step >= self.cfg.steps_before_batches
            && since_last >= self.cfg.steps_between_batches
            && buffer_len >= self.cfg.batch_size
    }

    /// One critic and one actor update on a batch relabeled at `alpha`.
    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, alpha: f64, rng: &mut R) -> Result<TrainMetrics> {
        if buffer.len() < self.cfg.batch_size {
            return Err(Error::InvalidArgument(format!(
                "replay holds {} transitions, batch needs {}",
                buffer.len(),
                self.cfg.batch_size
            )));
        }
        let batch = buffer.sample(self.cfg.batch_size, alpha, rng)?;
        let n = batch.len();
        let (od, ad) = (self.obs_dim, self.act_dim);
        for (t, _) in &batch {
            if t.obs.len() != od || t.action.len() != ad {
                return Err(Error::DimensionMismatch { what: "stored transition", expected: od, got: t.obs.len() });
            }
        }
        let s = rows(&batch.iter().map(|(t, _)| t.obs.as_slice()).collect::<Vec<_>>(), od);
        let a = rows(&batch.iter().map(|(t, _)| t.action.as_slice()).collect::<Vec<_>>(), ad);
        let s2 = rows(&batch.iter().map(|(t, _)| t.next_obs.as_slice()).collect::<Vec<_>>(), od);

        // Bellman targets with smoothed target actions
        let mut a2 = self.actor_target.predict(&s2);
        let noise = Normal::new(0.0, self.cfg.target_noise).map_err(|e| Error::Config(e.to_string()))?;
        let nc = self.cfg.target_noise_clip;
        let clip = self.clip;
        a2.mapv_inplace(|v| {
            let e = noise.sample(rng).clamp(-nc, nc) as f32;
            (v + e).clamp(0.0, clip)
        });
        let sa2 = concat(&s2, &a2);
        let q1t = self.critic_targets[0].predict(&sa2);
        let q2t = self.critic_targets[1].predict(&sa2);
        let gamma = self.cfg.discount as f32;
        let y: Array1<f32> = (0..n)
            .map(|i| {
                let (t, r) = &batch[i];
                let boot = if t.done { 0.0 } else { gamma * q1t[[i, 0]].min(q2t[[i, 0]]) };
                *r as f32 + boot
            })
            .collect();

        let sa = concat(&s, &a);
        let mut critic_loss = 0.0;
        let mut mean_q = 0.0;
        for k in 0..2 {
            let tr = self.critics[k].forward(&sa);
            let mut d = Array2::zeros((n, 1));
            let mut loss = 0.0f64;
            for i in 0..n {
                let e = tr.out[[i, 0]] - y[i];
                loss += (e * e) as f64;
                d[[i, 0]] = 2.0 * e / n as f32;
                if k == 0 {
                    mean_q += tr.out[[i, 0]] as f64;
                }
            }
            critic_loss += loss / n as f64;
            let (g, _) = self.critics[k].backward(&tr, &d);
            self.critic_opts[k].step(&mut self.critics[k], &g);
        }
        mean_q /= n as f64;

        // deterministic policy gradient through the first critic
        let ta = self.actor.forward(&s);
        let spi = concat(&s, &ta.out);
        let tq = self.critics[0].forward(&spi);
        let actor_loss = -tq.out.mean().unwrap_or(0.0) as f64;
        let d = Array2::from_elem((n, 1), -1.0 / n as f32);
        let (_, d_in) = self.critics[0].backward(&tq, &d);
        let d_act = d_in.slice(ndarray::s![.., od..]).to_owned();
        let (g, _) = self.actor.backward(&ta, &d_act);
        self.actor_opt.step(&mut self.actor, &g);

        let tau = self.cfg.target_tau as f32;
        self.actor_target.soft_update(&self.actor, tau);
        for k in 0..2 {
            self.critic_targets[k].soft_update(&self.critics[k], tau);
        }
        if !critic_loss.is_finite() || !actor_loss.is_finite() || !self.actor.is_finite() {
            return Err(Error::NonFinite(format!(
                "learner diverged (critic loss {critic_loss}, actor loss {actor_loss})"
            )));
        }
        Ok(TrainMetrics { critic_loss, actor_loss, mean_q, updates: 1 })
    }

    /// Runs the configured number of batch updates and averages their
    /// metrics.
    pub fn train_phase<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, alpha: f64, rng: &mut R) -> Result<TrainMetrics> {
        let mut m = TrainMetrics::default();
        for _ in 0..self.cfg.batches_per_update {
            let s = self.train_step(buffer, alpha, rng)?;
            m.critic_loss += s.critic_loss;
            m.actor_loss += s.actor_loss;
            m.mean_q += s.mean_q;
            m.updates += 1;
        }
        let k = m.updates.max(1) as f64;
        m.critic_loss /= k;
        m.actor_loss /= k;
        m.mean_q /= k;
        Ok(m)
    }

    pub fn critic_value(&self, obs: &[f32], action: &[f32]) -> f64 {
        let mut x = obs.to_vec();
        x.extend_from_slice(action);
        self.critics[0].predict(&rows(&[&x], x.len()))[[0, 0]] as f64
    }
}
