//! One-step inference for the three generator versions, with exact
//! function-evaluation accounting.
//!
//! Every version spends exactly one denoiser evaluation per sample. V1
//! restores from pure noise at the top level (0 prior calls), V2 restores
//! the prior prediction noised to the bridge level k, and V3 does the same
//! at the scorer-selected level op. Reports carry the per-sample NFE string
//! "prior+denoiser" alongside the instrumented call totals.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::data::{Condition, Patch, Sample};
use crate::error::{Error, Result};
use crate::nnet::DenoiserParams;
use crate::prior::{prior_predict, PriorBridge, PriorParams};
use crate::schedule::{noise_to_level, NoiseSchedule, ScheduleConfig};
use crate::scorer::{sweep_scores, FeatureProjector, ScorerState};

/// Generator version and its restore index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    /// Restore from N(0, T²I) at the trajectory endpoint.
    V1,
    /// Restore the noised prior from the KL-derived level k.
    V2 { restore_index: usize },
    /// Restore the noised prior from the scorer-selected level op.
    V3 { restore_index: usize },
}

impl SamplerMode {
    pub fn restore_index(&self) -> Option<usize> {
        match self {
            SamplerMode::V1 => None,
            SamplerMode::V2 { restore_index } | SamplerMode::V3 { restore_index } => {
                Some(*restore_index)
            }
        }
    }
}

/// Generation accounting: per-sample NFE plus instrumented call totals.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    /// "x+y": per-sample prior and denoiser evaluations.
    pub nfe: String,
    pub prior_calls: u64,
    pub denoiser_calls: u64,
    pub samples: usize,
    pub wall_seconds: f64,
}

impl GenerationReport {
    fn new(prior_calls: u64, denoiser_calls: u64, samples: usize, wall_seconds: f64) -> Self {
        debug_assert!(prior_calls.is_multiple_of(samples as u64));
        debug_assert!(denoiser_calls.is_multiple_of(samples as u64));
        let x = prior_calls / samples as u64;
        let y = denoiser_calls / samples as u64;
        Self {
            nfe: format!("{x}+{y}"),
            prior_calls,
            denoiser_calls,
            samples,
            wall_seconds,
        }
    }

    pub fn samples_per_sec(&self) -> f64 {
        if self.wall_seconds > 0.0 {
            self.samples as f64 / self.wall_seconds
        } else {
            f64::INFINITY
        }
    }
}

fn validate_denoiser(denoiser: &DenoiserParams) -> Result<()> {
    if !denoiser.mlp().is_finite() {
        return Err(Error::Usage("denoiser parameters are not finite".into()));
    }
    Ok(())
}

/// Per-item noise: either drawn from the rng or supplied by a test hook.
enum NoiseSource<'a> {
    Rng(&'a mut ChaCha8Rng),
    Fixed(&'a [Patch]),
}

impl NoiseSource<'_> {
    fn draw(&mut self, rows: usize, cols: usize, item: usize) -> Result<Patch> {
        match self {
            NoiseSource::Rng(rng) => {
                use rand::Rng as _;
                let data = (0..rows * cols)
                    .map(|_| rng.sample(rand_distr::StandardNormal))
                    .collect();
                Patch::from_vec(rows, cols, data)
            }
            NoiseSource::Fixed(list) => list
                .get(item)
                .cloned()
                .ok_or_else(|| Error::Usage(format!("no injected noise for item {item}"))),
        }
    }
}

fn generate_v1_inner(
    denoiser: &DenoiserParams,
    conds: &[Condition],
    schedule: &NoiseSchedule,
    cfg: &ScheduleConfig,
    mut noise: NoiseSource,
) -> Result<(Vec<Patch>, GenerationReport)> {
    validate_denoiser(denoiser)?;
    if conds.is_empty() {
        return Err(Error::Usage("empty condition batch".into()));
    }
    let start = Instant::now();
    let t = schedule.level(schedule.len());
    let (rows, cols) = (denoiser.patch_rows(), denoiser.patch_cols());
    let zero = Patch::zeros(rows, cols);
    let mut denoiser_calls = 0u64;
    let mut out = Vec::with_capacity(conds.len());
    for (i, cond) in conds.iter().enumerate() {
        let z = noise.draw(rows, cols, i)?;
        let x_top = noise_to_level(&zero, t, &z)?;
        out.push(denoiser.consistency_forward(&x_top, cond, t, cfg)?);
        denoiser_calls += 1;
    }
    let report =
        GenerationReport::new(0, denoiser_calls, conds.len(), start.elapsed().as_secs_f64());
    Ok((out, report))
}

/// V1: one-step restoration from N(0, T²I). NFE "0+1".
pub fn generate_v1(
    denoiser: &DenoiserParams,
    conds: &[Condition],
    schedule: &NoiseSchedule,
    cfg: &ScheduleConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Patch>, GenerationReport)> {
    generate_v1_inner(denoiser, conds, schedule, cfg, NoiseSource::Rng(rng))
}

#[doc(hidden)]
pub fn generate_v1_with_noise(
    denoiser: &DenoiserParams,
    conds: &[Condition],
    schedule: &NoiseSchedule,
    cfg: &ScheduleConfig,
    noise: &[Patch],
) -> Result<(Vec<Patch>, GenerationReport)> {
    generate_v1_inner(denoiser, conds, schedule, cfg, NoiseSource::Fixed(noise))
}

fn restore_from_prior(
    denoiser: &DenoiserParams,
    prior: &PriorParams,
    restore_index: usize,
    conds: &[Condition],
    schedule: &NoiseSchedule,
    cfg: &ScheduleConfig,
    mut noise: NoiseSource,
) -> Result<(Vec<Patch>, GenerationReport)> {
    validate_denoiser(denoiser)?;
    if conds.is_empty() {
        return Err(Error::Usage("empty condition batch".into()));
    }
    if !(2..=schedule.len()).contains(&restore_index) {
        return Err(Error::Usage(format!(
            "restore index {restore_index} outside 2..={}",
            schedule.len()
        )));
    }
    let start = Instant::now();
    let t = schedule.level(restore_index);
    let (rows, cols) = (denoiser.patch_rows(), denoiser.patch_cols());
    let mut prior_calls = 0u64;
    let mut denoiser_calls = 0u64;
    let mut out = Vec::with_capacity(conds.len());
    for (i, cond) in conds.iter().enumerate() {
        let x_tilde = prior_predict(prior, cond)?;
        prior_calls += 1;
        let z = noise.draw(rows, cols, i)?;
        let noised = noise_to_level(&x_tilde, t, &z)?;
        out.push(denoiser.consistency_forward(&noised, cond, t, cfg)?);
        denoiser_calls += 1;
    }
    let report = GenerationReport::new(
        prior_calls,
        denoiser_calls,
        conds.len(),
        start.elapsed().as_secs_f64(),
    );
    Ok((out, report))
}

/// V2: restore the prior prediction noised to the bridge level t_k. NFE "1+1".
pub fn generate_v2(
    denoiser: &DenoiserParams,
    prior: &PriorParams,
    bridge: &PriorBridge,
    conds: &[Condition],
    schedule: &NoiseSchedule,
    cfg: &ScheduleConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Patch>, GenerationReport)> {
    restore_from_prior(denoiser, prior, bridge.k, conds, schedule, cfg, NoiseSource::Rng(rng))
}

#[doc(hidden)]
pub fn generate_v2_with_noise(
    denoiser: &DenoiserParams,
    prior: &PriorParams,
    bridge: &PriorBridge,
    conds: &[Condition],
    schedule: &NoiseSchedule,
    cfg: &ScheduleConfig,
    noise: &[Patch],
) -> Result<(Vec<Patch>, GenerationReport)> {
    restore_from_prior(denoiser, prior, bridge.k, conds, schedule, cfg, NoiseSource::Fixed(noise))
}

/// V3: identical pipeline to V2 with the scorer-selected index op. NFE "1+1".
pub fn generate_v3(
    denoiser: &DenoiserParams,
    prior: &PriorParams,
    scorer_state: &ScorerState,
    conds: &[Condition],
    schedule: &NoiseSchedule,
    cfg: &ScheduleConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Patch>, GenerationReport)> {
    restore_from_prior(
        denoiser,
        prior,
        scorer_state.op,
        conds,
        schedule,
        cfg,
        NoiseSource::Rng(rng),
    )
}

#[doc(hidden)]
pub fn generate_v3_with_noise(
    denoiser: &DenoiserParams,
    prior: &PriorParams,
    scorer_state: &ScorerState,
    conds: &[Condition],
    schedule: &NoiseSchedule,
    cfg: &ScheduleConfig,
    noise: &[Patch],
) -> Result<(Vec<Patch>, GenerationReport)> {
    restore_from_prior(
        denoiser,
        prior,
        scorer_state.op,
        conds,
        schedule,
        cfg,
        NoiseSource::Fixed(noise),
    )
}

/// Prior-only generation (no denoiser). NFE "1+0".
pub fn generate_prior_only(
    prior: &PriorParams,
    conds: &[Condition],
) -> Result<(Vec<Patch>, GenerationReport)> {
    if conds.is_empty() {
        return Err(Error::Usage("empty condition batch".into()));
    }
    let start = Instant::now();
    let mut prior_calls = 0u64;
    let mut out = Vec::with_capacity(conds.len());
    for cond in conds {
        out.push(prior_predict(prior, cond)?);
        prior_calls += 1;
    }
    let report =
        GenerationReport::new(prior_calls, 0, conds.len(), start.elapsed().as_secs_f64());
    Ok((out, report))
}

/// Direct-regression generation for the ablated pipeline: the raw network
/// maps the prior prediction straight to the output, with no noise and no
/// skip combination. NFE "1+1".
pub fn generate_direct(
    denoiser: &DenoiserParams,
    prior: &PriorParams,
    conds: &[Condition],
    cfg: &ScheduleConfig,
) -> Result<(Vec<Patch>, GenerationReport)> {
    validate_denoiser(denoiser)?;
    if conds.is_empty() {
        return Err(Error::Usage("empty condition batch".into()));
    }
    let start = Instant::now();
    let mut prior_calls = 0u64;
    let mut denoiser_calls = 0u64;
    let mut out = Vec::with_capacity(conds.len());
    for cond in conds {
        let x_tilde = prior_predict(prior, cond)?;
        prior_calls += 1;
        out.push(denoiser.forward_raw(&x_tilde, cond, cfg.epsilon)?);
        denoiser_calls += 1;
    }
    let report = GenerationReport::new(
        prior_calls,
        denoiser_calls,
        conds.len(),
        start.elapsed().as_secs_f64(),
    );
    Ok((out, report))
}

/// Score one-step restoration from each listed index: (index, t_n, score).
#[allow(clippy::too_many_arguments)]
pub fn sweep_restore_points(
    denoiser: &DenoiserParams,
    prior: &PriorParams,
    schedule: &NoiseSchedule,
    cfg: &ScheduleConfig,
    eval: &[Sample],
    noise: &[Patch],
    indices: &[usize],
    projector: &FeatureProjector,
) -> Result<Vec<(usize, f64, f64)>> {
    if indices.is_empty() {
        return Err(Error::Usage("empty index list".into()));
    }
    let scores = sweep_scores(denoiser, prior, schedule, cfg, eval, noise, indices, projector)?;
    Ok(scores
        .into_iter()
        .map(|(n, s)| (n, schedule.level(n), s))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{eval_set, DatasetSpec};
    use crate::schedule::build_schedule;
    use crate::scorer::candidate_indices;
    use crate::seeds::{self, Stream};
    use rand_chacha::rand_core::SeedableRng;

    struct Fixture {
        cfg: ScheduleConfig,
        schedule: NoiseSchedule,
        denoiser: DenoiserParams,
        prior: PriorParams,
        conds: Vec<Condition>,
    }

    fn fixture() -> Fixture {
        let cfg = ScheduleConfig::default();
        let schedule = build_schedule(&cfg).unwrap();
        let denoiser = DenoiserParams::init(4, 4, 4, 8, 16, 2, 3).unwrap();
        let prior = PriorParams::init(4, 4, 4, 16, 2, 5).unwrap();
        let spec = DatasetSpec { count: 16, height: 4, width: 4, ..DatasetSpec::default() };
        let conds = eval_set(&spec, 1, 8)
            .unwrap()
            .into_iter()
            .map(|(c, _)| c)
            .collect();
        Fixture { cfg, schedule, denoiser, prior, conds }
    }

    #[test]
    fn v1_reports_zero_plus_one() {
        let f = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (out, report) =
            generate_v1(&f.denoiser, &f.conds, &f.schedule, &f.cfg, &mut rng).unwrap();
        assert_eq!(report.nfe, "0+1");
        assert_eq!(report.prior_calls, 0);
        assert_eq!(report.denoiser_calls, f.conds.len() as u64);
        assert_eq!(out.len(), f.conds.len());
        assert!(out.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn v1_same_seed_identical_outputs() {
        let f = fixture();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let (a, _) = generate_v1(&f.denoiser, &f.conds, &f.schedule, &f.cfg, &mut r1).unwrap();
        let (b, _) = generate_v1(&f.denoiser, &f.conds, &f.schedule, &f.cfg, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn v2_reports_one_plus_one() {
        let f = fixture();
        let bridge = PriorBridge { k: 20, ratio: 0.05 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, report) = generate_v2(
            &f.denoiser,
            &f.prior,
            &bridge,
            &f.conds,
            &f.schedule,
            &f.cfg,
            &mut rng,
        )
        .unwrap();
        assert_eq!(report.nfe, "1+1");
        assert_eq!(report.prior_calls, f.conds.len() as u64);
        assert_eq!(report.denoiser_calls, f.conds.len() as u64);
    }

    #[test]
    fn v2_zero_noise_hook_matches_closed_form() {
        let f = fixture();
        let bridge = PriorBridge { k: 12, ratio: 0.05 };
        let zeros: Vec<Patch> = (0..f.conds.len()).map(|_| Patch::zeros(4, 4)).collect();
        let (out, _) = generate_v2_with_noise(
            &f.denoiser,
            &f.prior,
            &bridge,
            &f.conds,
            &f.schedule,
            &f.cfg,
            &zeros,
        )
        .unwrap();
        let t = f.schedule.level(12);
        let k = crate::schedule::skip_coefficients(t, &f.cfg).unwrap();
        for (cond, got) in f.conds.iter().zip(&out) {
            let x_tilde = prior_predict(&f.prior, cond).unwrap();
            let raw = f.denoiser.forward_raw(&x_tilde, cond, t).unwrap();
            for ((g, xt), r) in got.data().iter().zip(x_tilde.data()).zip(raw.data()) {
                assert!((g - (k.c_skip * xt + k.c_out * r)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn v2_near_boundary_with_sharp_prior_stays_close() {
        // at the smallest admissible index c_skip dominates, so the output
        // stays within noise scale of the prior prediction
        let f = fixture();
        let bridge = PriorBridge { k: 2, ratio: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (out, _) = generate_v2(
            &f.denoiser,
            &f.prior,
            &bridge,
            &f.conds,
            &f.schedule,
            &f.cfg,
            &mut rng,
        )
        .unwrap();
        let t2 = f.schedule.level(2);
        let k = crate::schedule::skip_coefficients(t2, &f.cfg).unwrap();
        // bound: |out - x~| <= |c_skip - 1|*|x~| + c_skip*t*|z| + c_out*|F|
        // with t_2 ≈ 0.027 everything on the right is small
        for (cond, got) in f.conds.iter().zip(&out) {
            let x_tilde = prior_predict(&f.prior, cond).unwrap();
            for (g, xt) in got.data().iter().zip(x_tilde.data()) {
                assert!(
                    (g - xt).abs() < 10.0 * t2 + (1.0 - k.c_skip) + k.c_out * 10.0,
                    "one-step restore at the bottom level drifted from the prior"
                );
            }
        }
    }

    #[test]
    fn v3_equals_v2_when_op_equals_k() {
        let f = fixture();
        let bridge = PriorBridge { k: 17, ratio: 0.02 };
        let scorer = ScorerState {
            op: 17,
            candidates: candidate_indices(17, 1).unwrap(),
            last_scores: Vec::new(),
            cadence: 2000,
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(6);
        let mut r2 = ChaCha8Rng::seed_from_u64(6);
        let (a, ra) = generate_v2(
            &f.denoiser,
            &f.prior,
            &bridge,
            &f.conds,
            &f.schedule,
            &f.cfg,
            &mut r1,
        )
        .unwrap();
        let (b, rb) = generate_v3(
            &f.denoiser,
            &f.prior,
            &scorer,
            &f.conds,
            &f.schedule,
            &f.cfg,
            &mut r2,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.nfe, rb.nfe);
        assert_eq!(rb.nfe, "1+1");
    }

    #[test]
    fn prior_only_reports_one_plus_zero() {
        let f = fixture();
        let (out, report) = generate_prior_only(&f.prior, &f.conds).unwrap();
        assert_eq!(report.nfe, "1+0");
        assert_eq!(report.denoiser_calls, 0);
        assert_eq!(out.len(), f.conds.len());
    }

    #[test]
    fn direct_pipeline_reports_one_plus_one() {
        let f = fixture();
        let (_, report) = generate_direct(&f.denoiser, &f.prior, &f.conds, &f.cfg).unwrap();
        assert_eq!(report.nfe, "1+1");
    }

    #[test]
    fn sweep_rows_are_deterministic() {
        let f = fixture();
        let spec = DatasetSpec { count: 16, height: 4, width: 4, ..DatasetSpec::default() };
        let eval = eval_set(&spec, 2, 12).unwrap();
        let noise: Vec<Patch> = (0..12u64)
            .map(|i| {
                use rand::Rng as _;
                let mut rng = seeds::rng(2, Stream::ScorerNoise, i);
                Patch::from_vec(
                    4,
                    4,
                    (0..16).map(|_| rng.sample(rand_distr::StandardNormal)).collect(),
                )
                .unwrap()
            })
            .collect();
        let projector = FeatureProjector::new(4, 4, 6, 7).unwrap();
        let indices = [5usize, 11, 23];
        let a = sweep_restore_points(
            &f.denoiser, &f.prior, &f.schedule, &f.cfg, &eval, &noise, &indices, &projector,
        )
        .unwrap();
        let b = sweep_restore_points(
            &f.denoiser, &f.prior, &f.schedule, &f.cfg, &eval, &noise, &indices, &projector,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for (n, t, score) in &a {
            assert_eq!(*t, f.schedule.level(*n));
            assert!(score.is_finite());
        }
        // singleton list produces one row
        let single = sweep_restore_points(
            &f.denoiser, &f.prior, &f.schedule, &f.cfg, &eval, &noise, &[7], &projector,
        )
        .unwrap();
        assert_eq!(single.len(), 1);
        // empty list is a usage error
        assert!(matches!(
            sweep_restore_points(
                &f.denoiser, &f.prior, &f.schedule, &f.cfg, &eval, &noise, &[], &projector,
            ),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn non_finite_denoiser_is_usage_error() {
        let mut f = fixture();
        let count = f.denoiser.param_count();
        f.denoiser.mlp_mut().set_param(count - 1, f64::NAN);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            generate_v1(&f.denoiser, &f.conds, &f.schedule, &f.cfg, &mut rng),
            Err(Error::Usage(_))
        ));
    }
}
