//! Trajectory discretization, skip-connection coefficients, and the noising
//! operator.
//!
//! The schedule is computed once and stored; every consumer indexes the same
//! table so the trainer, scorer, and samplers see bit-identical levels. All
//! arithmetic is in f64: the passthrough coefficient at the top level is of
//! order 4e-5 and would not survive f32 tolerances.

use serde::{Deserialize, Serialize};

use crate::data::Patch;
use crate::error::{Error, Result};

/// Hyperparameters of the trajectory discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Minimum time level ε.
    pub epsilon: f64,
    /// Maximum time level T.
    pub t_max: f64,
    /// Warp exponent ρ of the spacing.
    pub rho: f64,
    /// Number of trajectory points N.
    pub points: usize,
    /// Balance parameter σ_data for the skip coefficients.
    pub sigma_data: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { epsilon: 0.02, t_max: 80.0, rho: 7.0, points: 50, sigma_data: 0.5 }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::Config(format!("t_max {} must be positive", self.t_max)));
        }
        if self.epsilon >= self.t_max {
            return Err(Error::Config(format!(
                "epsilon {} must be below t_max {}",
                self.epsilon, self.t_max
            )));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho {} must be positive", self.rho)));
        }
        if self.points < 2 {
            return Err(Error::Config(format!("points {} must be at least 2", self.points)));
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return Err(Error::Config(format!(
                "sigma_data {} must be positive",
                self.sigma_data
            )));
        }
        Ok(())
    }
}

/// Precomputed noise levels t_1..t_N, strictly increasing from ε to T.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    levels: Vec<f64>,
}

impl NoiseSchedule {
    /// Number of trajectory points N.
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Level t_n for a 1-based index n in 1..=N.
    ///
    /// Panics when n is out of range; callers validate indices at their own
    /// boundaries and surface usage errors there.
    pub fn level(&self, n: usize) -> f64 {
        assert!(
            (1..=self.levels.len()).contains(&n),
            "schedule index {n} outside 1..={}",
            self.levels.len()
        );
        self.levels[n - 1]
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }
}

/// Discretize the trajectory:
/// t_n = [ε^(1/ρ) + (n-1)/(N-1) · (T^(1/ρ) - ε^(1/ρ))]^ρ for n = 1..N.
pub fn build_schedule(cfg: &ScheduleConfig) -> Result<NoiseSchedule> {
    cfg.validate()?;
    let inv_rho = 1.0 / cfg.rho;
    let lo = cfg.epsilon.powf(inv_rho);
    let hi = cfg.t_max.powf(inv_rho);
    let span = hi - lo;
    let denom = (cfg.points - 1) as f64;
    let levels = (0..cfg.points)
        .map(|i| (lo + (i as f64 / denom) * span).powf(cfg.rho))
        .collect();
    Ok(NoiseSchedule { levels })
}

/// Passthrough and output weights of the consistency parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipCoefficients {
    pub c_skip: f64,
    pub c_out: f64,
}

/// c_skip(t) = σ²/((t-ε)² + σ²), c_out(t) = σ·(t-ε)/sqrt(σ² + t²).
///
/// At t = ε this gives exactly (1, 0), so the boundary identity holds for
/// any network output. The c_out denominator uses t, not (t-ε).
pub fn skip_coefficients(t: f64, cfg: &ScheduleConfig) -> Result<SkipCoefficients> {
    if !t.is_finite() || t < cfg.epsilon {
        return Err(Error::Domain(format!(
            "time level {t} below minimum {}",
            cfg.epsilon
        )));
    }
    let s2 = cfg.sigma_data * cfg.sigma_data;
    let dt = t - cfg.epsilon;
    Ok(SkipCoefficients {
        c_skip: s2 / (dt * dt + s2),
        c_out: cfg.sigma_data * dt / (s2 + t * t).sqrt(),
    })
}

/// Trajectory noising: x + t·z elementwise.
pub fn noise_to_level(x: &Patch, t: f64, z: &Patch) -> Result<Patch> {
    if !x.same_shape(z) {
        return Err(Error::Dimension(format!(
            "data {}x{} vs noise {}x{}",
            x.rows(),
            x.cols(),
            z.rows(),
            z.cols()
        )));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Domain(format!("noise level {t} must be non-negative")));
    }
    let mut out = x.clone();
    for (o, n) in out.data_mut().iter_mut().zip(z.data()) {
        *o += t * n;
    }
    Ok(out)
}
