//! Condition-only regressor supplying the over-smoothed restoration prior,
//! and the KL bound that selects the restore level k.
//!
//! Noising a sample and its prior reconstruction to the same level t gives
//! two isotropic Gaussians whose KL divergence collapses to
//! ‖x - x̃‖² / (2t²). Averaged over the data, the level k is the smallest
//! trajectory index at which that divergence is no worse than restoring
//! from pure Gaussian noise at the top level.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Condition, Patch, Sample};
use crate::error::{Error, Result};
use crate::nnet::{mse_backprop, optimizer_step, MlpParams, OptimizerState, Topology};
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use crate::seeds::{self, Stream};

/// Training hyperparameters for the prior regressor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub epochs: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        // a deliberately small decoder: the restoration pipeline exists to
        // sharpen a cheap over-smoothed prior, not to compete with it
        Self {
            epochs: 2000,
            hidden_width: 32,
            hidden_layers: 3,
            learning_rate: 1e-3,
            batch_size: 32,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.batch_size == 0 {
            return Err(Error::Config("prior width and batch size must be positive".into()));
        }
        if !(2..=4).contains(&self.hidden_layers) {
            return Err(Error::Config(format!(
                "prior hidden layer count {} outside 2..=4",
                self.hidden_layers
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("prior learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Weights of the condition-to-patch regressor. The output layer is
/// tanh-squashed so predictions stay inside the data range.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorParams {
    mlp: MlpParams,
    cond_dim: usize,
    patch_rows: usize,
    patch_cols: usize,
}

impl PriorParams {
    pub fn init(
        cond_dim: usize,
        patch_rows: usize,
        patch_cols: usize,
        hidden_width: usize,
        hidden_layers: usize,
        seed: u64,
    ) -> Result<Self> {
        let topology = Topology {
            input_dim: cond_dim,
            hidden_width,
            hidden_layers,
            output_dim: patch_rows * patch_cols,
            squash_output: true,
        };
        Ok(Self {
            mlp: MlpParams::init(topology, seed)?,
            cond_dim,
            patch_rows,
            patch_cols,
        })
    }

    pub fn mlp(&self) -> &MlpParams {
        &self.mlp
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn patch_rows(&self) -> usize {
        self.patch_rows
    }

    pub fn patch_cols(&self) -> usize {
        self.patch_cols
    }

    pub(crate) fn from_mlp(
        mlp: MlpParams,
        cond_dim: usize,
        patch_rows: usize,
        patch_cols: usize,
    ) -> Self {
        Self { mlp, cond_dim, patch_rows, patch_cols }
    }
}

/// Deterministic prior prediction x̃ for a condition.
pub fn prior_predict(params: &PriorParams, cond: &Condition) -> Result<Patch> {
    if cond.dim() != params.cond_dim {
        return Err(Error::Dimension(format!(
            "condition dim {} vs prior {}",
            cond.dim(),
            params.cond_dim
        )));
    }
    let out = params.mlp.forward(cond.values())?;
    Patch::from_vec(params.patch_rows, params.patch_cols, out)
}

/// Fit the prior by minibatch MSE over the dataset. Zero epochs returns the
/// seed-determined initialization unchanged.
pub fn train_prior(dataset: &[Sample], cfg: &PriorConfig, seed: u64) -> Result<PriorParams> {
    if dataset.is_empty() {
        return Err(Error::Usage("empty dataset".into()));
    }
    cfg.validate()?;
    let (rows, cols) = (dataset[0].1.rows(), dataset[0].1.cols());
    let cond_dim = dataset[0].0.dim();
    let mut params = PriorParams::init(
        cond_dim,
        rows,
        cols,
        cfg.hidden_width,
        cfg.hidden_layers,
        seeds::derive(seed, Stream::Prior, 0),
    )?;
    let mut state = OptimizerState::new(&params.mlp, cfg.learning_rate);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = seeds::rng(seed, Stream::Prior, 1);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], &[f64])> = chunk
                .iter()
                .map(|&i| (dataset[i].0.values(), dataset[i].1.data()))
                .collect();
            let (_, grads) = mse_backprop(&params.mlp, &batch)?;
            optimizer_step(&mut params.mlp, &grads, &mut state)?;
        }
    }
    Ok(params)
}

/// Mean squared error per element of the prior over a sample set.
pub fn prior_mse(params: &PriorParams, dataset: &[Sample]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Usage("empty dataset".into()));
    }
    let mut total = 0.0;
    let mut elems = 0usize;
    for (cond, patch) in dataset {
        let pred = prior_predict(params, cond)?;
        total += pred.dist_sq(patch)?;
        elems += patch.len();
    }
    Ok(total / elems as f64)
}

/// KL divergence between N(x, t²I) and N(x̃, t²I): ‖x - x̃‖² / (2t²).
pub fn kl_noised(x: &Patch, x_tilde: &Patch, t: f64) -> Result<f64> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::Domain(format!("noise level {t} must be positive")));
    }
    Ok(x.dist_sq(x_tilde)? / (2.0 * t * t))
}

/// Restore level chosen by the KL bound, plus the measured error ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorBridge {
    /// Trajectory index in [2, N].
    pub k: usize,
    /// E‖x - x̃‖² / E‖x‖² over the training set.
    pub ratio: f64,
}

/// Smallest index n ≥ 2 whose level satisfies t_n² ≥ T²·ratio, i.e. the
/// first level at which the expected KL to the noised prior is no worse
/// than the KL of top-level noise to N(0, T²I). Falls back to N when the
/// bound is unreachable.
pub fn select_k(ratio: f64, schedule: &NoiseSchedule, cfg: &ScheduleConfig) -> Result<usize> {
    if ratio.is_nan() || ratio < 0.0 {
        return Err(Error::Domain(format!("ratio {ratio} must be non-negative")));
    }
    let n = schedule.len();
    let threshold = cfg.t_max * cfg.t_max * ratio;
    for idx in 2..=n {
        let t = schedule.level(idx);
        if t * t >= threshold {
            return Ok(idx);
        }
    }
    Ok(n)
}

/// Measure the error ratio of a trained prior on a dataset and choose k.
pub fn compute_k(
    dataset: &[Sample],
    prior: &PriorParams,
    schedule: &NoiseSchedule,
    cfg: &ScheduleConfig,
) -> Result<PriorBridge> {
    if dataset.is_empty() {
        return Err(Error::Usage("empty dataset".into()));
    }
    let mut err = 0.0;
    let mut norm = 0.0;
    for (cond, patch) in dataset {
        let pred = prior_predict(prior, cond)?;
        err += patch.dist_sq(&pred)?;
        norm += patch.norm_sq();
    }
    let ratio = if norm > 0.0 {
        err / norm
    } else if err > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let k = select_k(ratio, schedule, cfg)?;
    Ok(PriorBridge { k, ratio })
}
