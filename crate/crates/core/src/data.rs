//! Procedural synthetic conditional datasets.
//!
//! Each sample pairs a conditioning vector with a small grid ("patch"). The
//! patch is a smooth base field that is a deterministic function of the
//! condition, plus a sinusoidal texture whose phase is drawn per sample and
//! never exposed. The hidden phase makes the conditional distribution
//! multimodal, so a mean-squared-error regressor of patch given condition
//! can only recover the over-smoothed base field.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{self, Stream};

/// H×W grid of reals. Ground-truth data lies in [-1, 1]; noised or generated
/// grids may exceed that range.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Patch {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "patch data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Patch) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Squared Euclidean norm over all entries.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Squared Euclidean distance to another patch of the same shape.
    pub fn dist_sq(&self, other: &Patch) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::Dimension(format!(
                "patch shapes {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }
}

/// Conditioning vector with entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Condition(pub Vec<f64>);

impl Condition {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Component `i`, cycling when the condition is shorter than requested.
    fn component(&self, i: usize) -> f64 {
        self.0[i % self.0.len()]
    }
}

/// One labelled sample.
pub type Sample = (Condition, Patch);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    /// Condition-dependent two-component Gaussian mixture in the plane.
    Gmm2d,
    /// Smooth base field plus hidden-phase sinusoidal texture on an H×W grid.
    Patches,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Number of samples generated for the training pool.
    pub count: usize,
    /// Dataset seed; independent of the experiment seed.
    pub seed: u64,
    /// Condition dimensionality d_c.
    pub cond_dim: usize,
    pub height: usize,
    pub width: usize,
    /// Texture amplitude a_d in [0, 1].
    pub detail: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Patches,
            count: 512,
            seed: 0,
            cond_dim: 4,
            height: 16,
            width: 16,
            detail: 0.3,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("dataset count must be positive".into()));
        }
        if self.cond_dim == 0 {
            return Err(Error::Config("cond_dim must be positive".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("patch dimensions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.detail) {
            return Err(Error::Config(format!(
                "detail amplitude {} outside [0, 1]",
                self.detail
            )));
        }
        Ok(())
    }

    /// Patch shape produced by this spec. The gmm2d task emits 1×2 points
    /// regardless of the configured grid size.
    pub fn patch_shape(&self) -> (usize, usize) {
        match self.kind {
            DatasetKind::Gmm2d => (1, 2),
            DatasetKind::Patches => (self.height, self.width),
        }
    }
}

/// Deterministic base field B(c): two opposite-sign bumps whose centers and
/// widths are affine in the condition, over a low-frequency background wave.
/// Bounded by 0.7 in absolute value so that detail amplitudes up to 0.3
/// never clip, keeping the per-pixel texture variance exactly a_d^2/2.
pub fn base_field(spec: &DatasetSpec, cond: &Condition) -> Patch {
    let (rows, cols) = spec.patch_shape();
    let c0 = cond.component(0);
    let c1 = cond.component(1);
    let c2 = cond.component(2);
    let c3 = cond.component(3);

    let (ax, ay) = (0.25 + 0.5 * c0, 0.25 + 0.5 * c1);
    let (bx, by) = (0.75 - 0.5 * c0, 0.75 - 0.5 * c1);
    let sa = 0.22 + 0.10 * c2;
    let sb = 0.22 + 0.10 * c3;

    let mut patch = Patch::zeros(rows, cols);
    for r in 0..rows {
        let v = (r as f64 + 0.5) / rows as f64;
        for q in 0..cols {
            let u = (q as f64 + 0.5) / cols as f64;
            let da = ((u - ax).powi(2) + (v - ay).powi(2)) / (2.0 * sa * sa);
            let db = ((u - bx).powi(2) + (v - by).powi(2)) / (2.0 * sb * sb);
            let bumps = 0.5 * (-da).exp() - 0.5 * (-db).exp();
            let background =
                0.2 * (2.0 * std::f64::consts::PI * (0.7 * u + 0.3 * v + c1)).cos();
            patch.data[r * cols + q] = bumps + background;
        }
    }
    patch
}

/// Sinusoidal texture D(c, φ) with unit amplitude; frequency affine in the
/// condition, phase supplied by the caller.
pub fn texture_field(spec: &DatasetSpec, cond: &Condition, phase: f64) -> Patch {
    let (rows, cols) = spec.patch_shape();
    let fu = 2.0 + 3.0 * cond.component(2);
    let fv = 2.0 + 3.0 * cond.component(3);

    let mut patch = Patch::zeros(rows, cols);
    for r in 0..rows {
        let v = (r as f64 + 0.5) / rows as f64;
        for q in 0..cols {
            let u = (q as f64 + 0.5) / cols as f64;
            let theta = 2.0 * std::f64::consts::PI * (fu * u + fv * v) + phase;
            patch.data[r * cols + q] = theta.sin();
        }
    }
    patch
}

/// Ground-truth patch for a condition and hidden phase:
/// clip(B(c) + a_d·D(c, φ), -1, 1).
pub fn patch_from_latent(spec: &DatasetSpec, cond: &Condition, phase: f64) -> Patch {
    let mut patch = base_field(spec, cond);
    let texture = texture_field(spec, cond, phase);
    for (p, d) in patch.data.iter_mut().zip(texture.data.iter()) {
        *p = (*p + spec.detail * d).clamp(-1.0, 1.0);
    }
    patch
}

fn draw_condition(spec: &DatasetSpec, rng: &mut impl Rng) -> Condition {
    Condition((0..spec.cond_dim).map(|_| rng.random::<f64>()).collect())
}

/// One patch-task sample at a given stream index.
fn patch_sample_at(spec: &DatasetSpec, stream: Stream, index: u64) -> Sample {
    let mut rng = seeds::rng(spec.seed, stream, index);
    let cond = draw_condition(spec, &mut rng);
    let phase = 2.0 * std::f64::consts::PI * rng.random::<f64>();
    let patch = patch_from_latent(spec, &cond, phase);
    (cond, patch)
}

/// One 2-D mixture point for a condition. Component means are affine in the
/// condition and collapse to the origin at c = 0.5; the point is clipped to
/// [-1, 1]^2.
pub fn gmm2d_point(cond: &Condition, rng: &mut impl Rng) -> Patch {
    let m1 = (
        0.6 * (cond.component(0) - 0.5),
        0.6 * (cond.component(1) - 0.5),
    );
    let m2 = (
        -0.6 * (cond.component(2) - 0.5),
        -0.6 * (cond.component(3) - 0.5),
    );
    let sigma = 0.015 + 0.01 * cond.component(0);
    let pick_second = rng.random::<f64>() < 0.5;
    let (mx, my) = if pick_second { m2 } else { m1 };
    let z0: f64 = rng.sample(rand_distr::StandardNormal);
    let z1: f64 = rng.sample(rand_distr::StandardNormal);
    let x = (mx + sigma * z0).clamp(-1.0, 1.0);
    let y = (my + sigma * z1).clamp(-1.0, 1.0);
    Patch { rows: 1, cols: 2, data: vec![x, y] }
}

fn gmm_sample_at(spec: &DatasetSpec, stream: Stream, index: u64) -> Sample {
    let mut rng = seeds::rng(spec.seed, stream, index);
    let cond = draw_condition(spec, &mut rng);
    let point = gmm2d_point(&cond, &mut rng);
    (cond, point)
}

fn sample_at(spec: &DatasetSpec, stream: Stream, index: u64) -> Sample {
    match spec.kind {
        DatasetKind::Patches => patch_sample_at(spec, stream, index),
        DatasetKind::Gmm2d => gmm_sample_at(spec, stream, index),
    }
}

/// Generate the patch-task training pool.
pub fn gen_patches(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    if spec.kind != DatasetKind::Patches {
        return Err(Error::Config("gen_patches requires kind = patches".into()));
    }
    Ok((0..spec.count as u64)
        .map(|i| patch_sample_at(spec, Stream::Data, i))
        .collect())
}

/// Generate the 2-D mixture training pool.
pub fn gen_gmm2d(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    if spec.kind != DatasetKind::Gmm2d {
        return Err(Error::Config("gen_gmm2d requires kind = gmm2d".into()));
    }
    Ok((0..spec.count as u64)
        .map(|i| gmm_sample_at(spec, Stream::Data, i))
        .collect())
}

/// Generate the training pool for whichever task the spec selects.
pub fn generate(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    match spec.kind {
        DatasetKind::Patches => gen_patches(spec),
        DatasetKind::Gmm2d => gen_gmm2d(spec),
    }
}

/// Fresh evaluation samples, disjoint from the training pool: the eval seed
/// selects a sub-stream of the dataset seed, and items are indexed from 0
/// within it.
pub fn eval_set(spec: &DatasetSpec, eval_seed: u64, size: usize) -> Result<Vec<Sample>> {
    spec.validate()?;
    if size == 0 {
        return Err(Error::Usage("eval set size must be positive".into()));
    }
    Ok((0..size as u64)
        .map(|i| sample_at(spec, Stream::Eval, seeds::splitmix64(eval_seed) ^ i))
        .collect())
}

/// 90/10 train/test split by index, taken before any shuffling.
pub fn split(dataset: &[Sample]) -> (&[Sample], &[Sample]) {
    let cut = dataset.len() * 9 / 10;
    dataset.split_at(cut)
}
