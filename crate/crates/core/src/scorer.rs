//! Fréchet-distance scoring of generated sample sets and selection of the
//! optimal restore point.
//!
//! Patches are embedded by a fixed seed-derived random projection with the
//! per-patch mean and standard deviation appended, a Gaussian is fitted to
//! each feature set, and sets are compared by the Fréchet distance between
//! the fitted Gaussians. Restoring an evaluation batch from every candidate
//! level and scoring each restoration locates the level `op` where one-step
//! restoration works best; the quality curve is not monotone in the noise
//! level, so `op` generally sits in the interior of the candidate range.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Patch, Sample};
use crate::error::{Error, Result};
use crate::nnet::DenoiserParams;
use crate::prior::{prior_predict, PriorParams};
use crate::schedule::{noise_to_level, NoiseSchedule, ScheduleConfig};
use crate::seeds::{self, Stream};

/// Ridge added to fitted covariances to keep small-batch fits invertible.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

/// Scorer configuration shared by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSettings {
    /// Reconstruction samples per sweep.
    pub eval_batch: usize,
    /// Thinning stride over the candidate range (1 scores every index).
    pub candidate_stride: usize,
    /// Random-projection width d_f; features also carry mean and std.
    pub feature_dim: usize,
}

impl Default for ScorerSettings {
    fn default() -> Self {
        Self { eval_batch: 256, candidate_stride: 1, feature_dim: 16 }
    }
}

impl ScorerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.eval_batch < 2 {
            return Err(Error::Config("scorer eval batch must be at least 2".into()));
        }
        if self.candidate_stride == 0 {
            return Err(Error::Config("candidate stride must be positive".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed random projection (flattened patch -> d_f) plus moment features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureProjector {
    patch_rows: usize,
    patch_cols: usize,
    d_f: usize,
    /// Row-major d_f × (rows·cols), entries N(0, 1/len).
    matrix: Vec<f64>,
}

impl FeatureProjector {
    pub fn new(patch_rows: usize, patch_cols: usize, d_f: usize, seed: u64) -> Result<Self> {
        if d_f == 0 || patch_rows == 0 || patch_cols == 0 {
            return Err(Error::Config("projector dimensions must be positive".into()));
        }
        let len = patch_rows * patch_cols;
        let mut rng = seeds::rng(seed, Stream::Projector, 0);
        let scale = 1.0 / (len as f64).sqrt();
        let matrix = (0..d_f * len)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) * scale)
            .collect();
        Ok(Self { patch_rows, patch_cols, d_f, matrix })
    }

    /// Total feature dimension: d_f projections + mean + standard deviation.
    pub fn feature_dim(&self) -> usize {
        self.d_f + 2
    }

    pub fn projection_dim(&self) -> usize {
        self.d_f
    }

    fn feature_row(&self, patch: &Patch) -> Result<Vec<f64>> {
        if patch.rows() != self.patch_rows || patch.cols() != self.patch_cols {
            return Err(Error::Dimension(format!(
                "patch {}x{} vs projector {}x{}",
                patch.rows(),
                patch.cols(),
                self.patch_rows,
                self.patch_cols
            )));
        }
        let len = patch.len();
        let mut row = Vec::with_capacity(self.feature_dim());
        for r in 0..self.d_f {
            let w = &self.matrix[r * len..(r + 1) * len];
            row.push(w.iter().zip(patch.data()).map(|(a, b)| a * b).sum());
        }
        let mean = patch.data().iter().sum::<f64>() / len as f64;
        let var = patch.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
        row.push(mean);
        row.push(var.max(0.0).sqrt());
        Ok(row)
    }
}

/// Feature rows for a set of patches.
pub fn extract_features(projector: &FeatureProjector, patches: &[Patch]) -> Result<Vec<Vec<f64>>> {
    if patches.is_empty() {
        return Err(Error::Usage("empty patch list".into()));
    }
    patches.iter().map(|p| projector.feature_row(p)).collect()
}

/// Mean and ridge-regularized sample covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    /// Row-major symmetric d × d covariance.
    pub cov: Vec<f64>,
}

impl GaussianSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Fit mean and covariance (n-1 denominator) to feature rows, adding a
/// ridge of `COVARIANCE_RIDGE` on the diagonal.
pub fn fit_gaussian(features: &[Vec<f64>]) -> Result<GaussianSummary> {
    if features.len() < 2 {
        return Err(Error::Usage(format!(
            "need at least 2 feature rows, got {}",
            features.len()
        )));
    }
    let d = features[0].len();
    if d == 0 {
        return Err(Error::Dimension("empty feature rows".into()));
    }
    if features.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("ragged feature rows".into()));
    }
    let n = features.len() as f64;
    let mut mean = vec![0.0; d];
    for row in features {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for row in features {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (row[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[i * d + j] = cov[j * d + i];
        }
        cov[i * d + i] += COVARIANCE_RIDGE;
    }
    Ok(GaussianSummary { mean, cov })
}

fn to_dmatrix(cov: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, cov)
}

/// Symmetric positive-semidefinite square root via eigendecomposition,
/// clamping negative eigenvalues to zero.
fn psd_sqrt(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let scaled = eig.eigenvectors.clone() * DMatrix::from_diagonal(&sqrt_vals);
    scaled * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussians:
/// ‖μ_a - μ_b‖² + Tr(Σ_a + Σ_b - 2(Σ_a Σ_b)^{1/2}).
///
/// The cross trace is computed through the symmetrized product
/// (Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}; negative eigenvalues from roundoff are
/// clamped to zero, and the final distance is clamped at zero.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d {
        return Err(Error::Dimension(format!(
            "summary dims {} vs {}",
            d,
            b.dim()
        )));
    }
    let finite = |s: &GaussianSummary| {
        s.mean.iter().all(|v| v.is_finite()) && s.cov.iter().all(|v| v.is_finite())
    };
    if !finite(a) || !finite(b) {
        return Err(Error::Numeric("non-finite Gaussian summary".into()));
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let trace_a: f64 = (0..d).map(|i| a.cov[i * d + i]).sum();
    let trace_b: f64 = (0..d).map(|i| b.cov[i * d + i]).sum();

    let sqrt_a = psd_sqrt(to_dmatrix(&a.cov, d));
    let inner = &sqrt_a * to_dmatrix(&b.cov, d) * &sqrt_a;
    // symmetrize against roundoff before the second eigendecomposition
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let cross: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();

    let dist = mean_term + trace_a + trace_b - 2.0 * cross;
    if !dist.is_finite() {
        return Err(Error::Numeric("non-finite Fréchet distance".into()));
    }
    Ok(dist.max(0.0))
}

/// Scorer bookkeeping: the current optimal index, the candidate range, and
/// the last sweep's scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerState {
    /// Optimal restore index, always a member of `candidates`.
    pub op: usize,
    pub candidates: Vec<usize>,
    pub last_scores: Vec<(usize, f64)>,
    /// Refresh cadence in training steps.
    pub cadence: u64,
}

/// Candidate indices {2, ..., upper} thinned by `stride`, always keeping the
/// upper endpoint.
pub fn candidate_indices(upper: usize, stride: usize) -> Result<Vec<usize>> {
    if upper < 2 {
        return Err(Error::Usage(format!("upper index {upper} below 2")));
    }
    let stride = stride.max(1);
    let mut out: Vec<usize> = (2..=upper).step_by(stride).collect();
    if *out.last().unwrap() != upper {
        out.push(upper);
    }
    Ok(out)
}

/// Score every candidate level: restore the evaluation batch from
/// x̃ + t_n·z with one denoiser evaluation per item and compare the
/// restored set to the ground truth in feature space.
///
/// The noise list is supplied by the caller so repeated sweeps and paired
/// comparisons see identical draws.
#[allow(clippy::too_many_arguments)]
pub fn sweep_scores(
    denoiser: &DenoiserParams,
    prior: &PriorParams,
    schedule: &NoiseSchedule,
    cfg: &ScheduleConfig,
    eval: &[Sample],
    noise: &[Patch],
    candidates: &[usize],
    projector: &FeatureProjector,
) -> Result<Vec<(usize, f64)>> {
    if candidates.is_empty() {
        return Err(Error::Usage("empty candidate set".into()));
    }
    if eval.is_empty() {
        return Err(Error::Usage("empty evaluation batch".into()));
    }
    if noise.len() != eval.len() {
        return Err(Error::Dimension(format!(
            "noise count {} vs eval count {}",
            noise.len(),
            eval.len()
        )));
    }
    for &n in candidates {
        if !(2..=schedule.len()).contains(&n) {
            return Err(Error::Usage(format!(
                "candidate index {n} outside 2..={}",
                schedule.len()
            )));
        }
    }

    let truth: Vec<Patch> = eval.iter().map(|(_, p)| p.clone()).collect();
    let truth_summary = fit_gaussian(&extract_features(projector, &truth)?)?;
    let priors: Vec<Patch> = eval
        .iter()
        .map(|(cond, _)| prior_predict(prior, cond))
        .collect::<Result<_>>()?;

    let mut scores = Vec::with_capacity(candidates.len());
    for &n in candidates {
        let t = schedule.level(n);
        let mut restored = Vec::with_capacity(eval.len());
        for ((cond, _), (x_tilde, z)) in eval.iter().zip(priors.iter().zip(noise)) {
            let noised = noise_to_level(x_tilde, t, z)?;
            restored.push(denoiser.consistency_forward(&noised, cond, t, cfg)?);
        }
        let summary = fit_gaussian(&extract_features(projector, &restored)?)?;
        scores.push((n, frechet_distance(&summary, &truth_summary)?));
    }
    Ok(scores)
}

/// Run a sweep and take the argmin, breaking ties toward the smallest index.
#[allow(clippy::too_many_arguments)]
pub fn select_optimal_point(
    denoiser: &DenoiserParams,
    prior: &PriorParams,
    schedule: &NoiseSchedule,
    cfg: &ScheduleConfig,
    eval: &[Sample],
    noise: &[Patch],
    candidates: &[usize],
    projector: &FeatureProjector,
    cadence: u64,
) -> Result<ScorerState> {
    let scores = sweep_scores(denoiser, prior, schedule, cfg, eval, noise, candidates, projector)?;
    let mut op = scores[0].0;
    let mut best = scores[0].1;
    for &(n, s) in &scores[1..] {
        if s < best {
            best = s;
            op = n;
        }
    }
    Ok(ScorerState { op, candidates: candidates.to_vec(), last_scores: scores, cadence })
}
