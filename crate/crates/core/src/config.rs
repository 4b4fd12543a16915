//! Experiment configuration: a TOML file of key=value sections mirroring
//! each subsystem's config struct. Unknown keys are rejected; missing keys
//! take the documented defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetKind, DatasetSpec};
use crate::error::{Error, Result};
use crate::prior::PriorConfig;
use crate::schedule::ScheduleConfig;
use crate::scorer::ScorerSettings;
use crate::trainer::TrainerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Global seed; the CLI --seed flag overrides it before anything runs.
    pub seed: u64,
    /// Output directory; the CLI --out flag overrides it. Not part of the
    /// config hash.
    pub out_dir: PathBuf,
    pub schedule: ScheduleConfig,
    pub dataset: DatasetSpec,
    pub trainer: TrainerConfig,
    pub prior: PriorConfig,
    pub scorer: ScorerSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            schedule: ScheduleConfig::default(),
            dataset: DatasetSpec::default(),
            trainer: TrainerConfig::default(),
            prior: PriorConfig::default(),
            scorer: ScorerSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.dataset.validate()?;
        self.trainer.validate()?;
        self.prior.validate()?;
        self.scorer.validate()?;
        Ok(())
    }

    /// SHA-256 over a canonical binary encoding of every experiment-defining
    /// field (seed, schedule, dataset, trainer, prior, scorer). The output
    /// directory is deployment plumbing and deliberately excluded, so moving
    /// artifacts does not orphan checkpoints.
    pub fn config_hash(&self) -> [u8; 32] {
        fn real(h: &mut Sha256, x: f64) {
            h.update(x.to_bits().to_le_bytes());
        }
        fn uint(h: &mut Sha256, x: u64) {
            h.update(x.to_le_bytes());
        }
        fn flag(h: &mut Sha256, x: bool) {
            h.update([x as u8]);
        }

        let mut h = Sha256::new();
        uint(&mut h, self.seed);

        let s = &self.schedule;
        real(&mut h, s.epsilon);
        real(&mut h, s.t_max);
        real(&mut h, s.rho);
        uint(&mut h, s.points as u64);
        real(&mut h, s.sigma_data);

        let d = &self.dataset;
        flag(&mut h, matches!(d.kind, DatasetKind::Patches));
        uint(&mut h, d.count as u64);
        uint(&mut h, d.seed);
        uint(&mut h, d.cond_dim as u64);
        uint(&mut h, d.height as u64);
        uint(&mut h, d.width as u64);
        real(&mut h, d.detail);

        let t = &self.trainer;
        uint(&mut h, t.batch_size as u64);
        uint(&mut h, t.steps);
        uint(&mut h, t.scorer_cadence);
        uint(&mut h, t.log_interval);
        flag(&mut h, t.importance_sampler);
        flag(&mut h, t.consistency_constraint);
        real(&mut h, t.learning_rate);
        real(&mut h, t.lambda);
        uint(&mut h, t.warmup_visits);
        uint(&mut h, t.hidden_width as u64);
        uint(&mut h, t.hidden_layers as u64);
        uint(&mut h, t.time_embed_dim as u64);

        let p = &self.prior;
        uint(&mut h, p.epochs as u64);
        uint(&mut h, p.hidden_width as u64);
        uint(&mut h, p.hidden_layers as u64);
        real(&mut h, p.learning_rate);
        uint(&mut h, p.batch_size as u64);

        let sc = &self.scorer;
        uint(&mut h, sc.eval_batch as u64);
        uint(&mut h, sc.candidate_stride as u64);
        uint(&mut h, sc.feature_dim as u64);

        h.finalize().into()
    }
}
