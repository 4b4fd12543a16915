//! Exercises the C ABI surface from Rust.

use std::ffi::CString;
use std::ptr;

use cskr_ffi::*;

fn new_schedule() -> *mut CskrSchedule {
    let mut handle: *mut CskrSchedule = ptr::null_mut();
    let status = unsafe { cskr_schedule_new(0.02, 80.0, 7.0, 50, 0.5, &mut handle) };
    assert_eq!(status, CskrStatus::Ok);
    assert!(!handle.is_null());
    handle
}

#[test]
fn version_is_non_empty() {
    let v = unsafe { std::ffi::CStr::from_ptr(cskr_version()) };
    assert!(!v.to_str().unwrap().is_empty());
}

#[test]
fn status_messages_are_static_strings() {
    for status in [CskrStatus::Ok, CskrStatus::Io, CskrStatus::Panic] {
        let m = unsafe { std::ffi::CStr::from_ptr(cskr_status_message(status)) };
        assert!(!m.to_str().unwrap().is_empty());
    }
}

#[test]
fn schedule_endpoints_and_levels() {
    let s = new_schedule();
    assert_eq!(unsafe { cskr_schedule_points(s) }, 50);
    let mut t = 0.0;
    assert_eq!(unsafe { cskr_schedule_level(s, 1, &mut t) }, CskrStatus::Ok);
    assert!((t - 0.02).abs() < 1e-12);
    assert_eq!(unsafe { cskr_schedule_level(s, 50, &mut t) }, CskrStatus::Ok);
    assert!((t - 80.0).abs() < 1e-9);
    assert_eq!(unsafe { cskr_schedule_level(s, 0, &mut t) }, CskrStatus::Usage);
    assert_eq!(unsafe { cskr_schedule_level(s, 51, &mut t) }, CskrStatus::Usage);
    unsafe { cskr_schedule_free(s) };
}

#[test]
fn invalid_schedule_is_config_error() {
    let mut handle: *mut CskrSchedule = ptr::null_mut();
    let status = unsafe { cskr_schedule_new(80.0, 0.02, 7.0, 50, 0.5, &mut handle) };
    assert_eq!(status, CskrStatus::Config);
    assert!(handle.is_null());
}

#[test]
fn skip_coefficients_boundary() {
    let s = new_schedule();
    let (mut c_skip, mut c_out) = (0.0, 0.0);
    let status = unsafe { cskr_skip_coefficients(s, 0.02, &mut c_skip, &mut c_out) };
    assert_eq!(status, CskrStatus::Ok);
    assert_eq!(c_skip, 1.0);
    assert_eq!(c_out, 0.0);
    let status = unsafe { cskr_skip_coefficients(s, 0.0, &mut c_skip, &mut c_out) };
    assert_eq!(status, CskrStatus::Domain);
    unsafe { cskr_schedule_free(s) };
}

#[test]
fn time_embed_fills_buffer() {
    let mut buf = vec![9.0; 8];
    assert_eq!(unsafe { cskr_time_embed(0.0, 8, buf.as_mut_ptr()) }, CskrStatus::Ok);
    assert_eq!(buf[0], 0.0);
    assert_eq!(buf[1], 1.0);
    assert_eq!(unsafe { cskr_time_embed(1.0, 7, buf.as_mut_ptr()) }, CskrStatus::Config);
}

#[test]
fn kl_matches_closed_form() {
    let x = [2.0, 0.0];
    let y = [0.0, 2.0];
    let mut out = 0.0;
    let status = unsafe { cskr_kl_noised(x.as_ptr(), y.as_ptr(), 2, 2.0, &mut out) };
    assert_eq!(status, CskrStatus::Ok);
    assert!((out - 1.0).abs() < 1e-12);
    assert_eq!(
        unsafe { cskr_kl_noised(x.as_ptr(), y.as_ptr(), 2, 0.0, &mut out) },
        CskrStatus::Domain
    );
}

#[test]
fn frechet_identical_sets_score_zero() {
    let rows = [0.0, 0.0, 1.0, 1.0, -1.0, 0.5];
    let mut out = f64::NAN;
    let status = unsafe {
        cskr_frechet_gaussian_distance(rows.as_ptr(), 3, rows.as_ptr(), 3, 2, &mut out)
    };
    assert_eq!(status, CskrStatus::Ok);
    assert!(out.abs() <= 1e-8);
}

#[test]
fn feature_extraction_matches_library() {
    let patches = [0.0; 32]; // two 4x4 zero patches
    let mut out = vec![1.0; 2 * 8];
    let status = unsafe {
        cskr_extract_features(patches.as_ptr(), 2, 4, 4, 6, 42, out.as_mut_ptr())
    };
    assert_eq!(status, CskrStatus::Ok);
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn null_pointers_are_rejected() {
    let mut out = 0.0;
    assert_eq!(
        unsafe { cskr_schedule_level(ptr::null(), 1, &mut out) },
        CskrStatus::NullPointer
    );
    assert_eq!(
        unsafe { cskr_kl_noised(ptr::null(), ptr::null(), 1, 1.0, &mut out) },
        CskrStatus::NullPointer
    );
    let mut handle: *mut CskrModel = ptr::null_mut();
    assert_eq!(
        unsafe { cskr_model_load(ptr::null(), &mut handle) },
        CskrStatus::NullPointer
    );
    unsafe {
        cskr_model_free(ptr::null_mut());
        cskr_schedule_free(ptr::null_mut());
    }
}

#[test]
fn model_load_and_generate_end_to_end() {
    use cskr::checkpoint::Checkpoint;
    use cskr::data::{gen_patches, DatasetSpec};
    use cskr::prior::{compute_k, train_prior, PriorConfig};
    use cskr::schedule::{build_schedule, ScheduleConfig};
    use cskr::trainer::{train_loop, TrainMode, TrainerConfig};
    use cskr::scorer::ScorerSettings;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");

    // assemble a tiny trained checkpoint through the library
    let cfg = ScheduleConfig::default();
    let schedule = build_schedule(&cfg).unwrap();
    let spec = DatasetSpec { count: 48, height: 4, width: 4, ..DatasetSpec::default() };
    let data = gen_patches(&spec).unwrap();
    let pcfg = PriorConfig { epochs: 30, hidden_width: 24, ..PriorConfig::default() };
    let prior = train_prior(&data, &pcfg, 7).unwrap();
    let bridge = compute_k(&data, &prior, &schedule, &cfg).unwrap();
    let tcfg = TrainerConfig {
        steps: 60,
        batch_size: 4,
        hidden_width: 24,
        hidden_layers: 2,
        scorer_cadence: 30,
        ..TrainerConfig::default()
    };
    let scfg = ScorerSettings { eval_batch: 12, candidate_stride: 8, feature_dim: 4 };
    let (state, _) = train_loop(
        TrainMode::V3,
        &tcfg,
        &scfg,
        &cfg,
        &schedule,
        &spec,
        &data,
        Some(&prior),
        Some(&bridge),
        7,
    )
    .unwrap();
    Checkpoint {
        config_hash: [0; 32],
        mode: Some(TrainMode::V3),
        patch_rows: 4,
        patch_cols: 4,
        cond_dim: 4,
        time_dim: tcfg.time_embed_dim,
        prior: Some(prior),
        denoiser: Some(state.denoiser),
        bridge: Some(bridge),
        scorer: state.scorer,
        step: state.step,
    }
    .save(&path)
    .unwrap();

    // drive it through the C surface
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut model: *mut CskrModel = ptr::null_mut();
    assert_eq!(unsafe { cskr_model_load(c_path.as_ptr(), &mut model) }, CskrStatus::Ok);
    assert_eq!(unsafe { cskr_model_patch_rows(model) }, 4);
    assert_eq!(unsafe { cskr_model_patch_cols(model) }, 4);
    assert_eq!(unsafe { cskr_model_cond_dim(model) }, 4);
    assert_eq!(unsafe { cskr_model_mode(model) }, 3);
    assert!(unsafe { cskr_model_bridge_k(model) } >= 2);
    assert!(unsafe { cskr_model_op(model) } >= 2);

    let schedule_handle = new_schedule();
    let conds = [0.2, 0.4, 0.6, 0.8, 0.9, 0.1, 0.5, 0.3];
    let mut out = vec![f64::NAN; 2 * 16];
    for mode in [CSKR_MODE_PRIOR, CSKR_MODE_V1, CSKR_MODE_V2, CSKR_MODE_V3] {
        let status = unsafe {
            cskr_generate(model, schedule_handle, mode, conds.as_ptr(), 2, 11, out.as_mut_ptr())
        };
        assert_eq!(status, CskrStatus::Ok, "mode {mode}");
        assert!(out.iter().all(|v| v.is_finite()));
    }
    // identical seeds produce identical output buffers
    let mut again = vec![f64::NAN; 2 * 16];
    unsafe {
        cskr_generate(model, schedule_handle, CSKR_MODE_V3, conds.as_ptr(), 2, 11, again.as_mut_ptr());
    }
    let mut first = vec![f64::NAN; 2 * 16];
    unsafe {
        cskr_generate(model, schedule_handle, CSKR_MODE_V3, conds.as_ptr(), 2, 11, first.as_mut_ptr());
    }
    assert_eq!(first, again);

    // unknown mode is a usage error
    assert_eq!(
        unsafe { cskr_generate(model, schedule_handle, 9, conds.as_ptr(), 2, 11, out.as_mut_ptr()) },
        CskrStatus::Usage
    );

    unsafe {
        cskr_model_free(model);
        cskr_schedule_free(schedule_handle);
    }
}

#[test]
fn missing_file_is_io_error() {
    let c_path = CString::new("/nonexistent/model.ckpt").unwrap();
    let mut model: *mut CskrModel = ptr::null_mut();
    assert_eq!(unsafe { cskr_model_load(c_path.as_ptr(), &mut model) }, CskrStatus::Io);
}

#[test]
fn prior_only_checkpoint_cannot_serve_v3() {
    use cskr::checkpoint::Checkpoint;
    use cskr::prior::PriorParams;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prior.ckpt");
    Checkpoint {
        config_hash: [0; 32],
        mode: None,
        patch_rows: 4,
        patch_cols: 4,
        cond_dim: 4,
        time_dim: 0,
        prior: Some(PriorParams::init(4, 4, 4, 16, 2, 1).unwrap()),
        denoiser: None,
        bridge: None,
        scorer: None,
        step: 0,
    }
    .save(&path)
    .unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut model: *mut CskrModel = ptr::null_mut();
    assert_eq!(unsafe { cskr_model_load(c_path.as_ptr(), &mut model) }, CskrStatus::Ok);
    let schedule = new_schedule();
    let conds = [0.2, 0.4, 0.6, 0.8];
    let mut out = vec![0.0; 16];
    assert_eq!(
        unsafe { cskr_generate(model, schedule, CSKR_MODE_V3, conds.as_ptr(), 1, 1, out.as_mut_ptr()) },
        CskrStatus::Mismatch
    );
    assert_eq!(
        unsafe { cskr_generate(model, schedule, CSKR_MODE_PRIOR, conds.as_ptr(), 1, 1, out.as_mut_ptr()) },
        CskrStatus::Ok
    );
    unsafe {
        cskr_model_free(model);
        cskr_schedule_free(schedule);
    }
}
