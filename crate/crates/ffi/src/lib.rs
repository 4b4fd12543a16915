//! C ABI bindings for the cskr toolkit.
//!
//! Handles are opaque pointers created and destroyed by this library;
//! every fallible call returns a [`CskrStatus`] and writes its result
//! through out-pointers. Buffers are caller-allocated row-major f64 arrays.
//! A generated header lives at `include/cskr.h`.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cskr::checkpoint::Checkpoint;
use cskr::data::{Condition, Patch};
use cskr::nnet::time_embed;
use cskr::prior::kl_noised;
use cskr::sampler::{generate_prior_only, generate_v1, generate_v2, generate_v3};
use cskr::schedule::{build_schedule, skip_coefficients, NoiseSchedule, ScheduleConfig};
use cskr::scorer::{extract_features, fit_gaussian, frechet_distance, FeatureProjector};
use cskr::trainer::TrainMode;
use cskr::Error;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CskrStatus {
    Ok = 0,
    /// A configuration value violates its invariants.
    Config = 1,
    /// An argument lies outside the mathematical domain of the operation.
    Domain = 2,
    /// Shapes or dimensions do not line up.
    Dimension = 3,
    /// A non-finite value was produced or received.
    Numeric = 4,
    /// The call violates an operation's contract.
    Usage = 5,
    /// A checkpoint file is malformed.
    Format = 6,
    /// The checkpoint does not match the requested mode.
    Mismatch = 7,
    /// The file could not be read.
    Io = 8,
    /// A required pointer was null.
    NullPointer = 9,
    /// The callee panicked; state may be inconsistent.
    Panic = 10,
}

fn status_of(e: &Error) -> CskrStatus {
    match e {
        Error::Config(_) => CskrStatus::Config,
        Error::Domain(_) => CskrStatus::Domain,
        Error::Dimension(_) => CskrStatus::Dimension,
        Error::Numeric(_) => CskrStatus::Numeric,
        Error::Usage(_) => CskrStatus::Usage,
        Error::Format(_) => CskrStatus::Format,
        Error::CheckpointMismatch(_) => CskrStatus::Mismatch,
        Error::Io(_) => CskrStatus::Io,
    }
}

fn guarded(body: impl FnOnce() -> CskrStatus) -> CskrStatus {
    catch_unwind(AssertUnwindSafe(body)).unwrap_or(CskrStatus::Panic)
}

/// Library version as a static NUL-terminated string; do not free.
#[no_mangle]
pub extern "C" fn cskr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Static description of a status code; do not free.
#[no_mangle]
pub extern "C" fn cskr_status_message(status: CskrStatus) -> *const c_char {
    let msg: &'static str = match status {
        CskrStatus::Ok => "ok\0",
        CskrStatus::Config => "invalid configuration\0",
        CskrStatus::Domain => "argument outside operation domain\0",
        CskrStatus::Dimension => "dimension mismatch\0",
        CskrStatus::Numeric => "non-finite value\0",
        CskrStatus::Usage => "contract violation\0",
        CskrStatus::Format => "malformed checkpoint\0",
        CskrStatus::Mismatch => "checkpoint does not match the request\0",
        CskrStatus::Io => "i/o failure\0",
        CskrStatus::NullPointer => "null pointer\0",
        CskrStatus::Panic => "internal panic\0",
    };
    msg.as_ptr() as *const c_char
}

/// Opaque handle to a trajectory discretization and its parameters.
pub struct CskrSchedule {
    cfg: ScheduleConfig,
    levels: NoiseSchedule,
}

/// Build a schedule handle. On success writes a pointer that must be
/// released with [`cskr_schedule_free`].
///
/// # Safety
/// `out` must be a valid pointer to pointer-sized writable memory.
#[no_mangle]
pub unsafe extern "C" fn cskr_schedule_new(
    epsilon: f64,
    t_max: f64,
    rho: f64,
    points: u32,
    sigma_data: f64,
    out: *mut *mut CskrSchedule,
) -> CskrStatus {
    if out.is_null() {
        return CskrStatus::NullPointer;
    }
    guarded(|| {
        let cfg = ScheduleConfig {
            epsilon,
            t_max,
            rho,
            points: points as usize,
            sigma_data,
        };
        match build_schedule(&cfg) {
            Ok(levels) => {
                unsafe { *out = Box::into_raw(Box::new(CskrSchedule { cfg, levels })) };
                CskrStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Release a schedule handle. Null is a no-op.
///
/// # Safety
/// `schedule` must be null or a pointer previously returned by
/// [`cskr_schedule_new`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn cskr_schedule_free(schedule: *mut CskrSchedule) {
    if !schedule.is_null() {
        drop(unsafe { Box::from_raw(schedule) });
    }
}

/// Number of trajectory points N.
///
/// # Safety
/// `schedule` must be a live handle from [`cskr_schedule_new`].
#[no_mangle]
pub unsafe extern "C" fn cskr_schedule_points(schedule: *const CskrSchedule) -> u32 {
    if schedule.is_null() {
        return 0;
    }
    unsafe { &*schedule }.levels.len() as u32
}

/// Level t_n for a 1-based index n in 1..=N.
///
/// # Safety
/// `schedule` must be a live handle; `out` must point to writable f64.
#[no_mangle]
pub unsafe extern "C" fn cskr_schedule_level(
    schedule: *const CskrSchedule,
    n: u32,
    out: *mut f64,
) -> CskrStatus {
    if schedule.is_null() || out.is_null() {
        return CskrStatus::NullPointer;
    }
    guarded(|| {
        let s = unsafe { &*schedule };
        if n == 0 || n as usize > s.levels.len() {
            return CskrStatus::Usage;
        }
        unsafe { *out = s.levels.level(n as usize) };
        CskrStatus::Ok
    })
}

/// Skip-connection coefficients at time level t.
///
/// # Safety
/// `schedule` must be a live handle; `c_skip` and `c_out` must point to
/// writable f64 slots.
#[no_mangle]
pub unsafe extern "C" fn cskr_skip_coefficients(
    schedule: *const CskrSchedule,
    t: f64,
    c_skip: *mut f64,
    c_out: *mut f64,
) -> CskrStatus {
    if schedule.is_null() || c_skip.is_null() || c_out.is_null() {
        return CskrStatus::NullPointer;
    }
    guarded(|| {
        let s = unsafe { &*schedule };
        match skip_coefficients(t, &s.cfg) {
            Ok(k) => {
                unsafe {
                    *c_skip = k.c_skip;
                    *c_out = k.c_out;
                }
                CskrStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Sinusoidal time embedding of t into a caller-allocated buffer of `dim`
/// doubles (dim must be even).
///
/// # Safety
/// `out` must point to at least `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cskr_time_embed(t: f64, dim: u32, out: *mut f64) -> CskrStatus {
    if out.is_null() {
        return CskrStatus::NullPointer;
    }
    guarded(|| match time_embed(t, dim as usize) {
        Ok(values) => {
            unsafe { std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len()) };
            CskrStatus::Ok
        }
        Err(e) => status_of(&e),
    })
}

/// KL divergence between N(x, t²I) and N(x_tilde, t²I) over `len` entries.
///
/// # Safety
/// `x` and `x_tilde` must point to `len` readable doubles; `out` to one
/// writable double.
#[no_mangle]
pub unsafe extern "C" fn cskr_kl_noised(
    x: *const f64,
    x_tilde: *const f64,
    len: usize,
    t: f64,
    out: *mut f64,
) -> CskrStatus {
    if x.is_null() || x_tilde.is_null() || out.is_null() {
        return CskrStatus::NullPointer;
    }
    if len == 0 {
        return CskrStatus::Usage;
    }
    guarded(|| {
        let a = unsafe { std::slice::from_raw_parts(x, len) };
        let b = unsafe { std::slice::from_raw_parts(x_tilde, len) };
        let pa = match Patch::from_vec(1, len, a.to_vec()) {
            Ok(p) => p,
            Err(e) => return status_of(&e),
        };
        let pb = match Patch::from_vec(1, len, b.to_vec()) {
            Ok(p) => p,
            Err(e) => return status_of(&e),
        };
        match kl_noised(&pa, &pb, t) {
            Ok(v) => {
                unsafe { *out = v };
                CskrStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Fréchet distance between Gaussians fitted to two feature sets, given as
/// row-major `rows × dim` matrices with at least two rows each.
///
/// # Safety
/// `features_a` and `features_b` must point to `rows_a * dim` and
/// `rows_b * dim` readable doubles; `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn cskr_frechet_gaussian_distance(
    features_a: *const f64,
    rows_a: usize,
    features_b: *const f64,
    rows_b: usize,
    dim: usize,
    out: *mut f64,
) -> CskrStatus {
    if features_a.is_null() || features_b.is_null() || out.is_null() {
        return CskrStatus::NullPointer;
    }
    if dim == 0 {
        return CskrStatus::Usage;
    }
    guarded(|| {
        let to_rows = |ptr: *const f64, rows: usize| -> Vec<Vec<f64>> {
            let flat = unsafe { std::slice::from_raw_parts(ptr, rows * dim) };
            flat.chunks(dim).map(|c| c.to_vec()).collect()
        };
        let a = to_rows(features_a, rows_a);
        let b = to_rows(features_b, rows_b);
        let ga = match fit_gaussian(&a) {
            Ok(g) => g,
            Err(e) => return status_of(&e),
        };
        let gb = match fit_gaussian(&b) {
            Ok(g) => g,
            Err(e) => return status_of(&e),
        };
        match frechet_distance(&ga, &gb) {
            Ok(v) => {
                unsafe { *out = v };
                CskrStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Feature embedding of a batch of patches with a seed-derived projector:
/// writes `count × (d_f + 2)` doubles.
///
/// # Safety
/// `patches` must point to `count * rows * cols` readable doubles; `out`
/// must point to `count * (d_f + 2)` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cskr_extract_features(
    patches: *const f64,
    count: usize,
    rows: u32,
    cols: u32,
    d_f: u32,
    seed: u64,
    out: *mut f64,
) -> CskrStatus {
    if patches.is_null() || out.is_null() {
        return CskrStatus::NullPointer;
    }
    if count == 0 {
        return CskrStatus::Usage;
    }
    guarded(|| {
        let (rows, cols, d_f) = (rows as usize, cols as usize, d_f as usize);
        let projector = match FeatureProjector::new(rows, cols, d_f, seed) {
            Ok(p) => p,
            Err(e) => return status_of(&e),
        };
        let flat = unsafe { std::slice::from_raw_parts(patches, count * rows * cols) };
        let list: Vec<Patch> = match flat
            .chunks(rows * cols)
            .map(|c| Patch::from_vec(rows, cols, c.to_vec()))
            .collect()
        {
            Ok(l) => l,
            Err(e) => return status_of(&e),
        };
        match extract_features(&projector, &list) {
            Ok(feats) => {
                let mut at = out;
                for row in feats {
                    unsafe {
                        std::ptr::copy_nonoverlapping(row.as_ptr(), at, row.len());
                        at = at.add(row.len());
                    }
                }
                CskrStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Opaque handle to a loaded checkpoint.
pub struct CskrModel {
    ckpt: Checkpoint,
}

/// Generator selector for [`cskr_generate`].
pub const CSKR_MODE_PRIOR: u32 = 0;
pub const CSKR_MODE_V1: u32 = 1;
pub const CSKR_MODE_V2: u32 = 2;
pub const CSKR_MODE_V3: u32 = 3;

/// Load a checkpoint file. On success writes a handle that must be
/// released with [`cskr_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must point to
/// pointer-sized writable memory.
#[no_mangle]
pub unsafe extern "C" fn cskr_model_load(
    path: *const c_char,
    out: *mut *mut CskrModel,
) -> CskrStatus {
    if path.is_null() || out.is_null() {
        return CskrStatus::NullPointer;
    }
    guarded(|| {
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => return CskrStatus::Usage,
        };
        match Checkpoint::load(Path::new(path)) {
            Ok(ckpt) => {
                unsafe { *out = Box::into_raw(Box::new(CskrModel { ckpt })) };
                CskrStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be null or a live handle from [`cskr_model_load`].
#[no_mangle]
pub unsafe extern "C" fn cskr_model_free(model: *mut CskrModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// # Safety
/// `model` must be a live handle from [`cskr_model_load`].
#[no_mangle]
pub unsafe extern "C" fn cskr_model_patch_rows(model: *const CskrModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.ckpt.patch_rows as u32
}

/// # Safety
/// `model` must be a live handle from [`cskr_model_load`].
#[no_mangle]
pub unsafe extern "C" fn cskr_model_patch_cols(model: *const CskrModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.ckpt.patch_cols as u32
}

/// # Safety
/// `model` must be a live handle from [`cskr_model_load`].
#[no_mangle]
pub unsafe extern "C" fn cskr_model_cond_dim(model: *const CskrModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.ckpt.cond_dim as u32
}

/// Trained generator version: 1, 2 or 3, or -1 for a prior-only checkpoint.
///
/// # Safety
/// `model` must be a live handle from [`cskr_model_load`].
#[no_mangle]
pub unsafe extern "C" fn cskr_model_mode(model: *const CskrModel) -> i32 {
    if model.is_null() {
        return -1;
    }
    match unsafe { &*model }.ckpt.mode {
        None => -1,
        Some(TrainMode::V1) => 1,
        Some(TrainMode::V2) => 2,
        Some(TrainMode::V3) => 3,
    }
}

/// Restore bridge index k, or 0 when the checkpoint has none.
///
/// # Safety
/// `model` must be a live handle from [`cskr_model_load`].
#[no_mangle]
pub unsafe extern "C" fn cskr_model_bridge_k(model: *const CskrModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.ckpt.bridge.map_or(0, |b| b.k as u32)
}

/// Scorer-selected restore index op, or 0 when the checkpoint has none.
///
/// # Safety
/// `model` must be a live handle from [`cskr_model_load`].
#[no_mangle]
pub unsafe extern "C" fn cskr_model_op(model: *const CskrModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.ckpt.scorer.as_ref().map_or(0, |s| s.op as u32)
}

/// One-step generation. `conds` is row-major `count × cond_dim`; `out`
/// receives `count × rows × cols` doubles. `mode` is one of the
/// `CSKR_MODE_*` constants; the schedule must match the one the model was
/// trained with.
///
/// # Safety
/// `model` and `schedule` must be live handles; `conds` must point to
/// `count * cond_dim` readable doubles and `out` to
/// `count * rows * cols` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cskr_generate(
    model: *const CskrModel,
    schedule: *const CskrSchedule,
    mode: u32,
    conds: *const f64,
    count: usize,
    seed: u64,
    out: *mut f64,
) -> CskrStatus {
    if model.is_null() || schedule.is_null() || conds.is_null() || out.is_null() {
        return CskrStatus::NullPointer;
    }
    if count == 0 {
        return CskrStatus::Usage;
    }
    guarded(|| {
        let m = unsafe { &*model };
        let s = unsafe { &*schedule };
        let cond_dim = m.ckpt.cond_dim;
        let flat = unsafe { std::slice::from_raw_parts(conds, count * cond_dim) };
        let conds: Vec<Condition> =
            flat.chunks(cond_dim).map(|c| Condition(c.to_vec())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let missing = |_: &str| CskrStatus::Mismatch;
        let result = match mode {
            CSKR_MODE_PRIOR => match &m.ckpt.prior {
                Some(prior) => generate_prior_only(prior, &conds),
                None => return missing("prior"),
            },
            CSKR_MODE_V1 => match &m.ckpt.denoiser {
                Some(denoiser) => generate_v1(denoiser, &conds, &s.levels, &s.cfg, &mut rng),
                None => return missing("denoiser"),
            },
            CSKR_MODE_V2 => match (&m.ckpt.denoiser, &m.ckpt.prior, &m.ckpt.bridge) {
                (Some(denoiser), Some(prior), Some(bridge)) => {
                    generate_v2(denoiser, prior, bridge, &conds, &s.levels, &s.cfg, &mut rng)
                }
                _ => return missing("v2 components"),
            },
            CSKR_MODE_V3 => match (&m.ckpt.denoiser, &m.ckpt.prior, &m.ckpt.scorer) {
                (Some(denoiser), Some(prior), Some(scorer)) => {
                    generate_v3(denoiser, prior, scorer, &conds, &s.levels, &s.cfg, &mut rng)
                }
                _ => return missing("v3 components"),
            },
            _ => return CskrStatus::Usage,
        };
        match result {
            Ok((patches, _report)) => {
                let mut at = out;
                for p in patches {
                    unsafe {
                        std::ptr::copy_nonoverlapping(p.data().as_ptr(), at, p.len());
                        at = at.add(p.len());
                    }
                }
                CskrStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}
