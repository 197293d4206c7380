//! C interface to the `natwalk` simulator, effort schedule and reward.
//!
//! Objects are opaque heap handles created by `nw_*_new`/`nw_*_from_*`
//! functions and released with the matching `nw_*_free`. Every fallible call
//! returns an [`NwStatus`]; on failure a description is kept per thread and
//! can be copied out with [`nw_last_error`]. Panics never cross the boundary.
//!
//! Array arguments are pointer plus length pairs. Output arrays must be at
//! least as long as the matching count query (`nw_model_n_dofs` and so on).

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use natwalk::adapt::{AdaptConfig, AdaptState, Branch, SNAPSHOT_LEN};
use natwalk::biomech::{Model, SimState};
use natwalk::reward::{total_reward, RewardBreakdown};
use natwalk::terrain::{Terrain, TileParams};
use natwalk::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    InvalidModel = 4,
    DimensionMismatch = 5,
    Diverged = 6,
    NonFinite = 7,
    CorruptSnapshot = 8,
    BufferTooSmall = 9,
    Io = 10,
    Internal = 11,
    Panic = 12,
}

impl From<&Error> for NwStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Parse(_) | Error::Schema { .. } => NwStatus::Parse,
            Error::InvalidModel(_) | Error::DanglingReference(_) => NwStatus::InvalidModel,
            Error::InvalidArgument(_) | Error::Config(_) => NwStatus::InvalidArgument,
            Error::DimensionMismatch { .. } => NwStatus::DimensionMismatch,
            Error::Diverged { .. } => NwStatus::Diverged,
            Error::NonFinite(_) => NwStatus::NonFinite,
            Error::CorruptSnapshot(_) => NwStatus::CorruptSnapshot,
            Error::Io { .. } => NwStatus::Io,
            _ => NwStatus::Internal,
        }
    }
}

/// Branch taken by one effort-schedule update.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NwBranch {
    SlowDown = 0,
    Increase = 1,
    Decrease = 2,
}

/// Effort-schedule hyperparameters.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NwAdaptConfig {
    pub threshold: f64,
    pub smoothing: f64,
    pub delta0: f64,
    pub decay: f64,
}

/// Effort-schedule state as plain values.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct NwAdaptValues {
    pub r_mean: f64,
    pub alpha: f64,
    pub delta: f64,
    pub c_mean: f64,
}

/// Per-step reward terms; the activity term is not yet scaled by alpha.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct NwRewardTerms {
    pub r_vel: f64,
    pub effort_activity: f64,
    pub effort_smooth: f64,
    pub effort_nactive: f64,
    pub pain_limits: f64,
    pub pain_grf: f64,
}

/// Musculoskeletal model.
pub struct NwModel(Model);
/// Simulation state of one model.
pub struct NwState(SimState);
/// Height field.
pub struct NwTerrain(Terrain);
/// Effort schedule with its configuration.
pub struct NwAdapt {
    cfg: AdaptConfig,
    state: AdaptState,
}

/// Byte length of an effort-schedule snapshot.
pub const NW_ADAPT_SNAPSHOT_LEN: usize = 41;
const _: () = assert!(NW_ADAPT_SNAPSHOT_LEN == SNAPSHOT_LEN);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: NwStatus, msg: impl Into<String>) -> NwStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), NwStatus>) -> NwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NwStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(NwStatus::Panic, msg)
        }
    }
}

fn lib_err(e: Error) -> NwStatus {
    fail(NwStatus::from(&e), e.to_string())
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, NwStatus> {
    p.as_ref().ok_or_else(|| fail(NwStatus::NullPointer, format!("{what} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, NwStatus> {
    p.as_mut().ok_or_else(|| fail(NwStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], NwStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(NwStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize, what: &str) -> Result<(), NwStatus> {
    if len < src.len() {
        return Err(fail(
            NwStatus::BufferTooSmall,
            format!("{what}: need {} values, buffer holds {len}", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if dst.is_null() {
        return Err(fail(NwStatus::NullPointer, format!("{what} is null")));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), NwStatus> {
    if out.is_null() {
        return Err(fail(NwStatus::NullPointer, "output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to fit) and returns the full message length in bytes, without
/// the terminator. `buf` may be null to query the length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn nw_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Built-in planar model.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nw_model_default(out: *mut *mut NwModel) -> NwStatus {
    guard(|| put(out, NwModel(Model::default_h0918())))
}

/// Model from a NUL-terminated TOML document.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nw_model_from_toml(toml: *const c_char, out: *mut *mut NwModel) -> NwStatus {
    guard(|| {
        if toml.is_null() {
            return Err(fail(NwStatus::NullPointer, "toml is null"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| fail(NwStatus::Parse, format!("model text is not UTF-8: {e}")))?;
        let m = natwalk::biomech::load_model(text).map_err(lib_err)?;
        put(out, NwModel(m))
    })
}

/// # Safety
/// `model` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nw_model_free(model: *mut NwModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nw_model_n_dofs(model: *const NwModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n_dofs())
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nw_model_n_muscles(model: *const NwModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n_muscles())
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nw_model_n_feet(model: *const NwModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n_feet())
}

/// Body weight in newtons.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nw_model_body_weight(model: *const NwModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.0.body_weight())
}

/// Total mechanical energy of a state.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn nw_model_energy(model: *const NwModel, state: *const NwState, out: *mut f64) -> NwStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let s = deref(state, "state")?;
        m.0.check_state(&s.0).map_err(lib_err)?;
        *deref_mut(out, "out")? = m.0.energy(&s.0);
        Ok(())
    })
}

/// Flat ground.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nw_terrain_flat(out: *mut *mut NwTerrain) -> NwStatus {
    guard(|| put(out, NwTerrain(Terrain::flat())))
}

/// Sloped-tile course.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nw_terrain_sloped(
    seed: u64,
    n_tiles: usize,
    tile_length: f64,
    max_slope_deg: f64,
    out: *mut *mut NwTerrain,
) -> NwStatus {
    guard(|| {
        let t = Terrain::sloped_tiles(seed, TileParams { n_tiles, tile_length, max_slope_deg }).map_err(lib_err)?;
        put(out, NwTerrain(t))
    })
}

/// # Safety
/// `terrain` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nw_terrain_free(terrain: *mut NwTerrain) {
    if !terrain.is_null() {
        drop(Box::from_raw(terrain));
    }
}

/// Ground height at `x`.
///
/// # Safety
/// `terrain` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn nw_terrain_height(terrain: *const NwTerrain, x: f64, out: *mut f64) -> NwStatus {
    guard(|| {
        let t = deref(terrain, "terrain")?;
        if !x.is_finite() {
            return Err(fail(NwStatus::NonFinite, "x is not finite"));
        }
        *deref_mut(out, "out")? = t.0.height(x);
        Ok(())
    })
}

/// Randomized initial standing state. A null `terrain` means flat ground.
///
/// # Safety
/// `model` must be live, `terrain` null or live, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn nw_state_reset(
    model: *const NwModel,
    terrain: *const NwTerrain,
    seed: u64,
    out: *mut *mut NwState,
) -> NwStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let s = match terrain.as_ref() {
            Some(t) => m.0.reset_on(&t.0, seed),
            None => m.0.reset(seed),
        };
        put(out, NwState(s))
    })
}

/// State built from explicit arrays. Activations start at zero.
///
/// # Safety
/// `q` and `qdot` must hold `n` values each; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nw_state_new(
    model: *const NwModel,
    q: *const f64,
    qdot: *const f64,
    n: usize,
    out: *mut *mut NwState,
) -> NwStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let mut s = m.0.zero_state();
        s.q = slice(q, n, "q")?.to_vec();
        s.qdot = slice(qdot, n, "qdot")?.to_vec();
        m.0.check_state(&s).map_err(lib_err)?;
        put(out, NwState(s))
    })
}

/// # Safety
/// `state` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nw_state_free(state: *mut NwState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Simulated time in seconds.
///
/// # Safety
/// `state` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nw_state_time(state: *const NwState) -> f64 {
    state.as_ref().map_or(f64::NAN, |s| s.0.t)
}

/// Copies generalized coordinates into `buf`.
///
/// # Safety
/// `buf` must be valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn nw_state_q(state: *const NwState, buf: *mut f64, len: usize) -> NwStatus {
    guard(|| copy_out(&deref(state, "state")?.0.q, buf, len, "q"))
}

/// Copies generalized velocities into `buf`.
///
/// # Safety
/// `buf` must be valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn nw_state_qdot(state: *const NwState, buf: *mut f64, len: usize) -> NwStatus {
    guard(|| copy_out(&deref(state, "state")?.0.qdot, buf, len, "qdot"))
}

/// Copies muscle activations into `buf`.
///
/// # Safety
/// `buf` must be valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn nw_state_activations(state: *const NwState, buf: *mut f64, len: usize) -> NwStatus {
    guard(|| copy_out(&deref(state, "state")?.0.a, buf, len, "activations"))
}

/// Holds excitations `u` for `substeps` integration steps of `dt`, updating
/// `state` in place. When `grf` is non-null the vertical ground reaction
/// force per foot after the last step is written to it. On failure the state
/// is left unchanged.
///
/// # Safety
/// Handles must be live (`terrain` may be null for flat ground), `u` valid
/// for `n_u` values and `grf` null or valid for `n_grf` values.
#[no_mangle]
pub unsafe extern "C" fn nw_model_advance(
    model: *const NwModel,
    state: *mut NwState,
    terrain: *const NwTerrain,
    u: *const f64,
    n_u: usize,
    dt: f64,
    substeps: usize,
    grf: *mut f64,
    n_grf: usize,
) -> NwStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let s = deref_mut(state, "state")?;
        let u = slice(u, n_u, "u")?;
        let flat;
        let ground = match terrain.as_ref() {
            Some(t) => &t.0,
            None => {
                flat = Terrain::flat();
                &flat
            }
        };
        if !grf.is_null() && n_grf < m.0.n_feet() {
            return Err(fail(NwStatus::BufferTooSmall, format!("grf needs {} values", m.0.n_feet())));
        }
        let (next, report) = m.0.advance(&s.0, u, dt, substeps, ground).map_err(lib_err)?;
        if !grf.is_null() {
            copy_out(&report.grf_per_foot, grf, n_grf, "grf")?;
        }
        s.0 = next;
        Ok(())
    })
}

fn adapt_config(c: &NwAdaptConfig) -> AdaptConfig {
    AdaptConfig {
        threshold: c.threshold,
        smoothing: c.smoothing,
        delta0: c.delta0,
        decay: c.decay,
    }
}

/// Default effort-schedule hyperparameters.
#[no_mangle]
pub extern "C" fn nw_adapt_default_config() -> NwAdaptConfig {
    let d = AdaptConfig::default();
    NwAdaptConfig {
        threshold: d.threshold,
        smoothing: d.smoothing,
        delta0: d.delta0,
        decay: d.decay,
    }
}

/// Fresh effort schedule. A null `config` selects the defaults.
///
/// # Safety
/// `config` must be null or valid; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nw_adapt_new(config: *const NwAdaptConfig, out: *mut *mut NwAdapt) -> NwStatus {
    guard(|| {
        let cfg = config.as_ref().map_or_else(AdaptConfig::default, adapt_config);
        cfg.validate().map_err(lib_err)?;
        put(out, NwAdapt { cfg, state: AdaptState::new(&cfg) })
    })
}

/// # Safety
/// `adapt` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nw_adapt_free(adapt: *mut NwAdapt) {
    if !adapt.is_null() {
        drop(Box::from_raw(adapt));
    }
}

/// Feeds one episode return. `branch` may be null.
///
/// # Safety
/// `adapt` must be live; `branch` null or valid.
#[no_mangle]
pub unsafe extern "C" fn nw_adapt_update(adapt: *mut NwAdapt, episode_return: f64, branch: *mut NwBranch) -> NwStatus {
    guard(|| {
        let a = deref_mut(adapt, "adapt")?;
        let (next, b) = a.state.update(episode_return, &a.cfg).map_err(lib_err)?;
        a.state = next;
        if let Some(out) = branch.as_mut() {
            *out = match b {
                Branch::SlowDown => NwBranch::SlowDown,
                Branch::Increase => NwBranch::Increase,
                Branch::Decrease => NwBranch::Decrease,
            };
        }
        Ok(())
    })
}

/// Current schedule values.
///
/// # Safety
/// `adapt` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn nw_adapt_values(adapt: *const NwAdapt, out: *mut NwAdaptValues) -> NwStatus {
    guard(|| {
        let s = deref(adapt, "adapt")?.state;
        *deref_mut(out, "out")? = NwAdaptValues {
            r_mean: s.r_mean,
            alpha: s.alpha,
            delta: s.delta,
            c_mean: s.c_mean,
        };
        Ok(())
    })
}

/// Writes the [`NW_ADAPT_SNAPSHOT_LEN`]-byte snapshot of the schedule state.
///
/// # Safety
/// `buf` must be valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn nw_adapt_snapshot(adapt: *const NwAdapt, buf: *mut u8, len: usize) -> NwStatus {
    guard(|| {
        let a = deref(adapt, "adapt")?;
        if len < SNAPSHOT_LEN {
            return Err(fail(NwStatus::BufferTooSmall, format!("snapshot needs {SNAPSHOT_LEN} bytes")));
        }
        if buf.is_null() {
            return Err(fail(NwStatus::NullPointer, "buf is null"));
        }
        ptr::copy_nonoverlapping(a.state.snapshot().as_ptr(), buf, SNAPSHOT_LEN);
        Ok(())
    })
}

/// Schedule restored from a snapshot, with `config` (or the defaults when
/// null) for future updates.
///
/// # Safety
/// `buf` must be valid for `len` bytes, `config` null or valid, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn nw_adapt_restore(
    buf: *const u8,
    len: usize,
    config: *const NwAdaptConfig,
    out: *mut *mut NwAdapt,
) -> NwStatus {
    guard(|| {
        if buf.is_null() {
            return Err(fail(NwStatus::NullPointer, "buf is null"));
        }
        let state = AdaptState::restore(std::slice::from_raw_parts(buf, len)).map_err(lib_err)?;
        let cfg = config.as_ref().map_or_else(AdaptConfig::default, adapt_config);
        cfg.validate().map_err(lib_err)?;
        put(out, NwAdapt { cfg, state })
    })
}

/// Scalar reward of a decomposed step for a given alpha.
///
/// # Safety
/// `terms` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nw_total_reward(terms: *const NwRewardTerms, alpha: f64, out: *mut f64) -> NwStatus {
    guard(|| {
        let t = deref(terms, "terms")?;
        let b = RewardBreakdown {
            r_vel: t.r_vel,
            effort_activity: t.effort_activity,
            effort_smooth: t.effort_smooth,
            effort_nactive: t.effort_nactive,
            pain_limits: t.pain_limits,
            pain_grf: t.pain_grf,
        };
        *deref_mut(out, "out")? = total_reward(&b, alpha);
        Ok(())
    })
}
