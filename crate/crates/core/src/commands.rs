//! Experiment orchestration behind the CLI subcommands: prior training and
//! bridge computation, consistency training, evaluation, restore-point
//! sweeps, ablations, and sample export.
//!
//! Every command takes the loaded experiment config, locks the output
//! directory against concurrent writers, and produces deterministic
//! artifacts for a fixed seed. Wall-clock throughput is printed to stdout
//! only; CSV artifacts carry nothing time-dependent so reruns are
//! byte-identical.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{self, Condition, Patch};
use crate::error::{Error, Result};
use crate::prior::{compute_k, train_prior, PriorBridge};
use crate::sampler::{
    generate_direct, generate_prior_only, generate_v1_with_noise, generate_v2_with_noise,
    generate_v3_with_noise, sweep_restore_points, GenerationReport,
};
use crate::schedule::{build_schedule, NoiseSchedule};
use crate::scorer::{
    candidate_indices, extract_features, fit_gaussian, frechet_distance, FeatureProjector,
};
use crate::seeds::{self, Stream};
use crate::trainer::{train_loop, MetricsRow, TrainMode};

/// Exclusive lock on an output directory, held for the life of a command.
pub struct OutDirLock {
    path: PathBuf,
}

impl OutDirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("output directory {} does not exist", dir.display()),
            )));
        }
        let path = dir.join(".cskr.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    format!(
                        "output directory {} is locked by another run (remove {} if stale)",
                        dir.display(),
                        path.display()
                    ),
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutDirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Float formatting used in every CSV: 9 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.8e}")
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Frozen standard-normal noise for evaluation item `i` under `seed`; the
/// same stream feeds the in-training scorer, so evaluations that reuse the
/// experiment seed reproduce the scorer's sweep exactly.
pub fn eval_noise(seed: u64, rows: usize, cols: usize, count: usize) -> Vec<Patch> {
    use rand::Rng as _;
    (0..count as u64)
        .map(|i| {
            let mut rng = seeds::rng(seed, Stream::ScorerNoise, i);
            let data = (0..rows * cols)
                .map(|_| rng.sample(rand_distr::StandardNormal))
                .collect();
            Patch::from_vec(rows, cols, data).expect("shape by construction")
        })
        .collect()
}

fn frechet_against(
    projector: &FeatureProjector,
    generated: &[Patch],
    truth: &[Patch],
) -> Result<f64> {
    let a = fit_gaussian(&extract_features(projector, generated)?)?;
    let b = fit_gaussian(&extract_features(projector, truth)?)?;
    frechet_distance(&a, &b)
}

pub struct TrainPriorOutput {
    pub checkpoint: PathBuf,
    pub bridge: PriorBridge,
}

/// Train the condition-only prior on the training split, compute the
/// restore bridge, and write a prior checkpoint.
pub fn cmd_train_prior(cfg: &ExperimentConfig) -> Result<TrainPriorOutput> {
    cfg.validate()?;
    let _lock = OutDirLock::acquire(&cfg.out_dir)?;
    let schedule = build_schedule(&cfg.schedule)?;
    let dataset = data::generate(&cfg.dataset)?;
    let (train_split, _) = data::split(&dataset);

    let prior = train_prior(train_split, &cfg.prior, cfg.seed)?;
    let bridge = compute_k(train_split, &prior, &schedule, &cfg.schedule)?;

    let (rows, cols) = cfg.dataset.patch_shape();
    let ckpt = Checkpoint {
        config_hash: cfg.config_hash(),
        mode: None,
        patch_rows: rows,
        patch_cols: cols,
        cond_dim: cfg.dataset.cond_dim,
        time_dim: 0,
        prior: Some(prior),
        denoiser: None,
        bridge: Some(bridge),
        scorer: None,
        step: 0,
    };
    let path = cfg.out_dir.join("prior.ckpt");
    ckpt.save(&path)?;
    println!("prior trained: k = {}, ratio = {}", bridge.k, fmt_f64(bridge.ratio));
    println!("checkpoint written to {}", path.display());
    Ok(TrainPriorOutput { checkpoint: path, bridge })
}

pub struct TrainCmOutput {
    pub checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    pub steps: u64,
    pub final_op: Option<usize>,
}

fn metrics_rows(metrics: &[MetricsRow]) -> Vec<String> {
    metrics
        .iter()
        .map(|m| format!("{},{},{},{}", m.step, fmt_f64(m.loss_mean), m.op, fmt_f64(m.entropy)))
        .collect()
}

/// Train the consistency denoiser in the requested mode and write the model
/// checkpoint plus the metrics CSV.
pub fn cmd_train_cm(
    cfg: &ExperimentConfig,
    prior_ckpt: Option<&Path>,
    mode: TrainMode,
) -> Result<TrainCmOutput> {
    cfg.validate()?;
    let _lock = OutDirLock::acquire(&cfg.out_dir)?;
    let schedule = build_schedule(&cfg.schedule)?;

    let (prior, bridge) = match (mode.needs_prior(), prior_ckpt) {
        (false, supplied) => {
            if supplied.is_some() {
                eprintln!("warning: {mode} does not use a prior; ignoring the supplied checkpoint");
            }
            (None, None)
        }
        (true, None) => {
            return Err(Error::Usage(format!("mode {mode} requires --prior <checkpoint>")));
        }
        (true, Some(path)) => {
            let ckpt = Checkpoint::load(path)?;
            ckpt.verify_hash(cfg.config_hash())?;
            let prior = ckpt.prior.ok_or_else(|| {
                Error::CheckpointMismatch("checkpoint carries no prior parameters".into())
            })?;
            let bridge = ckpt.bridge.ok_or_else(|| {
                Error::CheckpointMismatch("checkpoint carries no restore bridge".into())
            })?;
            (Some(prior), Some(bridge))
        }
    };

    let dataset = data::generate(&cfg.dataset)?;
    let (train_split, _) = data::split(&dataset);
    let (state, metrics) = train_loop(
        mode,
        &cfg.trainer,
        &cfg.scorer,
        &cfg.schedule,
        &schedule,
        &cfg.dataset,
        train_split,
        prior.as_ref(),
        bridge.as_ref(),
        cfg.seed,
    )?;

    let metrics_csv = cfg.out_dir.join(format!("metrics-{mode}.csv"));
    write_csv(&metrics_csv, "step,loss_mean,op,entropy", &metrics_rows(&metrics))?;

    let (rows, cols) = cfg.dataset.patch_shape();
    let final_op = state.scorer.as_ref().map(|s| s.op);
    let ckpt = Checkpoint {
        config_hash: cfg.config_hash(),
        mode: Some(mode),
        patch_rows: rows,
        patch_cols: cols,
        cond_dim: cfg.dataset.cond_dim,
        time_dim: cfg.trainer.time_embed_dim,
        prior,
        denoiser: Some(state.denoiser),
        bridge,
        scorer: state.scorer,
        step: state.step,
    };
    let path = cfg.out_dir.join(format!("model-{mode}.ckpt"));
    ckpt.save(&path)?;
    println!(
        "{mode} trained for {} steps ({} rejected){}",
        state.step,
        state.rejected_steps,
        final_op.map_or(String::new(), |op| format!(", final op = {op}")),
    );
    println!("checkpoint written to {}", path.display());
    Ok(TrainCmOutput { checkpoint: path, metrics_csv, steps: state.step, final_op })
}

/// Generator selected for evaluation and sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Prior,
    V1,
    V2,
    V3,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalMode::Prior => write!(f, "prior"),
            EvalMode::V1 => write!(f, "v1"),
            EvalMode::V2 => write!(f, "v2"),
            EvalMode::V3 => write!(f, "v3"),
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "prior" => Ok(EvalMode::Prior),
            "v1" => Ok(EvalMode::V1),
            "v2" => Ok(EvalMode::V2),
            "v3" => Ok(EvalMode::V3),
            other => Err(format!("unknown mode {other:?} (expected prior, v1, v2 or v3)")),
        }
    }
}

fn load_and_verify(cfg: &ExperimentConfig, path: &Path) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.verify_hash(cfg.config_hash())?;
    let (rows, cols) = cfg.dataset.patch_shape();
    if ckpt.patch_rows != rows || ckpt.patch_cols != cols || ckpt.cond_dim != cfg.dataset.cond_dim
    {
        return Err(Error::CheckpointMismatch(
            "checkpoint shape disagrees with the dataset spec".into(),
        ));
    }
    Ok(ckpt)
}

struct EvalPieces<'a> {
    ckpt: &'a Checkpoint,
    schedule: NoiseSchedule,
}

impl EvalPieces<'_> {
    fn require(&self, what: &str, ok: bool) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::CheckpointMismatch(format!("checkpoint has no {what}")))
        }
    }

    fn require_trained_mode(&self, accepted: &[TrainMode], requested: EvalMode) -> Result<()> {
        match self.ckpt.mode {
            Some(m) if accepted.contains(&m) => Ok(()),
            other => Err(Error::CheckpointMismatch(format!(
                "mode {requested} cannot evaluate a checkpoint trained as {}",
                other.map_or("prior-only".to_string(), |m| m.to_string()),
            ))),
        }
    }
}

fn generate_for_eval(
    cfg: &ExperimentConfig,
    ckpt: &Checkpoint,
    mode: EvalMode,
    conds: &[Condition],
    noise: &[Patch],
) -> Result<(Vec<Patch>, GenerationReport)> {
    let pieces = EvalPieces { ckpt, schedule: build_schedule(&cfg.schedule)? };
    match mode {
        EvalMode::Prior => {
            pieces.require("prior parameters", ckpt.prior.is_some())?;
            generate_prior_only(ckpt.prior.as_ref().unwrap(), conds)
        }
        EvalMode::V1 => {
            pieces.require("denoiser parameters", ckpt.denoiser.is_some())?;
            pieces.require_trained_mode(&[TrainMode::V1], mode)?;
            generate_v1_with_noise(
                ckpt.denoiser.as_ref().unwrap(),
                conds,
                &pieces.schedule,
                &cfg.schedule,
                noise,
            )
        }
        EvalMode::V2 | EvalMode::V3 => {
            pieces.require("denoiser parameters", ckpt.denoiser.is_some())?;
            pieces.require("prior parameters", ckpt.prior.is_some())?;
            let denoiser = ckpt.denoiser.as_ref().unwrap();
            let prior = ckpt.prior.as_ref().unwrap();
            if !cfg.trainer.consistency_constraint {
                // ablated pipeline: the network maps the prior prediction
                // straight to the output
                pieces.require_trained_mode(&[TrainMode::V2, TrainMode::V3], mode)?;
                return generate_direct(denoiser, prior, conds, &cfg.schedule);
            }
            if mode == EvalMode::V2 {
                pieces.require("restore bridge", ckpt.bridge.is_some())?;
                pieces.require_trained_mode(&[TrainMode::V2, TrainMode::V3], mode)?;
                generate_v2_with_noise(
                    denoiser,
                    prior,
                    ckpt.bridge.as_ref().unwrap(),
                    conds,
                    &pieces.schedule,
                    &cfg.schedule,
                    noise,
                )
            } else {
                pieces.require("scorer state", ckpt.scorer.is_some())?;
                pieces.require_trained_mode(&[TrainMode::V3], mode)?;
                generate_v3_with_noise(
                    denoiser,
                    prior,
                    ckpt.scorer.as_ref().unwrap(),
                    conds,
                    &pieces.schedule,
                    &cfg.schedule,
                    noise,
                )
            }
        }
    }
}

pub struct EvalOutput {
    pub csv: PathBuf,
    pub mode: EvalMode,
    pub nfe: String,
    pub frechet: f64,
    pub samples_per_sec: f64,
    pub report: GenerationReport,
}

/// Generate `eval_size` samples from a checkpoint and score them against
/// fresh ground truth: NFE, Fréchet distance, and throughput.
///
/// With `seed` equal to the experiment seed and `eval_size` equal to the
/// scorer's eval batch, the generation noise reproduces the scorer's sweep,
/// so a v3 score can never exceed the v2 score from the same checkpoint.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    ckpt_path: &Path,
    mode: EvalMode,
    eval_size: usize,
    seed: u64,
) -> Result<EvalOutput> {
    cfg.validate()?;
    let _lock = OutDirLock::acquire(&cfg.out_dir)?;
    let ckpt = load_and_verify(cfg, ckpt_path)?;
    let eval = data::eval_set(&cfg.dataset, seed, eval_size)?;
    let conds: Vec<Condition> = eval.iter().map(|(c, _)| c.clone()).collect();
    let truth: Vec<Patch> = eval.iter().map(|(_, p)| p.clone()).collect();
    let (rows, cols) = cfg.dataset.patch_shape();
    let noise = eval_noise(seed, rows, cols, eval_size);

    let (generated, report) = generate_for_eval(cfg, &ckpt, mode, &conds, &noise)?;
    let projector = FeatureProjector::new(rows, cols, cfg.scorer.feature_dim, cfg.seed)?;
    let frechet = frechet_against(&projector, &generated, &truth)?;

    let csv = cfg.out_dir.join(format!("eval-{mode}.csv"));
    write_csv(
        &csv,
        "mode,nfe,frechet,eval_size,seed",
        &[format!("{mode},{},{},{eval_size},{seed}", report.nfe, fmt_f64(frechet))],
    )?;
    println!("mode {mode}: NFE {}, frechet {}", report.nfe, fmt_f64(frechet));
    println!(
        "throughput: {:.1} samples/s over {} samples",
        report.samples_per_sec(),
        report.samples
    );
    Ok(EvalOutput {
        csv,
        mode,
        nfe: report.nfe.clone(),
        frechet,
        samples_per_sec: report.samples_per_sec(),
        report,
    })
}

pub struct SweepOutput {
    pub csv: PathBuf,
    pub rows: Vec<(usize, f64, f64)>,
}

/// Score one-step restoration from a list of trajectory indices (defaults
/// to the checkpoint's candidate set) and write (index, t, score) rows.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    ckpt_path: &Path,
    indices: Option<Vec<usize>>,
    seed: u64,
) -> Result<SweepOutput> {
    cfg.validate()?;
    let _lock = OutDirLock::acquire(&cfg.out_dir)?;
    let ckpt = load_and_verify(cfg, ckpt_path)?;
    let denoiser = ckpt
        .denoiser
        .as_ref()
        .ok_or_else(|| Error::CheckpointMismatch("checkpoint has no denoiser parameters".into()))?;
    let prior = ckpt
        .prior
        .as_ref()
        .ok_or_else(|| Error::CheckpointMismatch("checkpoint has no prior parameters".into()))?;
    let schedule = build_schedule(&cfg.schedule)?;

    let indices = match indices {
        Some(list) => list,
        None => match (&ckpt.scorer, &ckpt.bridge) {
            (Some(s), _) => s.candidates.clone(),
            (None, Some(b)) => candidate_indices(b.k, cfg.scorer.candidate_stride)?,
            (None, None) => {
                return Err(Error::CheckpointMismatch(
                    "checkpoint has neither scorer state nor restore bridge".into(),
                ))
            }
        },
    };

    let eval = data::eval_set(&cfg.dataset, seed, cfg.scorer.eval_batch)?;
    let (rows, cols) = cfg.dataset.patch_shape();
    let noise = eval_noise(seed, rows, cols, eval.len());
    let projector = FeatureProjector::new(rows, cols, cfg.scorer.feature_dim, cfg.seed)?;
    let swept = sweep_restore_points(
        denoiser,
        prior,
        &schedule,
        &cfg.schedule,
        &eval,
        &noise,
        &indices,
        &projector,
    )?;

    let csv = cfg.out_dir.join("sweep.csv");
    let rows_text: Vec<String> = swept
        .iter()
        .map(|(n, t, s)| format!("{n},{},{}", fmt_f64(*t), fmt_f64(*s)))
        .collect();
    write_csv(&csv, "index,t,score", &rows_text)?;
    println!("swept {} restore points into {}", swept.len(), csv.display());
    Ok(SweepOutput { csv, rows: swept })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblateRow {
    pub name: String,
    pub importance_sampler: bool,
    pub consistency_constraint: bool,
    pub rho: Option<f64>,
    pub frechet: f64,
    /// Baseline score minus this row's score (negative means worse).
    pub delta: f64,
}

pub struct AblateOutput {
    pub csv: PathBuf,
    pub rows: Vec<AblateRow>,
}

fn ablate_variant(
    base: &ExperimentConfig,
    name: &str,
    importance_sampler: bool,
    consistency_constraint: bool,
    rho: Option<f64>,
) -> (String, ExperimentConfig) {
    let mut cfg = base.clone();
    cfg.trainer.importance_sampler = importance_sampler;
    cfg.trainer.consistency_constraint = consistency_constraint;
    if let Some(r) = rho {
        cfg.schedule.rho = r;
    }
    (name.to_string(), cfg)
}

/// Train and score the four ablation configurations: the baseline, the
/// importance sampler off, the consistency constraint off (direct
/// regression), and the schedule warped with rho = 4. All four share the
/// prior, the dataset, and the evaluation batch.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<AblateOutput> {
    cfg.validate()?;
    let _lock = OutDirLock::acquire(&cfg.out_dir)?;

    let dataset = data::generate(&cfg.dataset)?;
    let (train_split, _) = data::split(&dataset);
    let prior = train_prior(train_split, &cfg.prior, cfg.seed)?;

    let eval = data::eval_set(&cfg.dataset, cfg.seed, cfg.scorer.eval_batch)?;
    let conds: Vec<Condition> = eval.iter().map(|(c, _)| c.clone()).collect();
    let truth: Vec<Patch> = eval.iter().map(|(_, p)| p.clone()).collect();
    let (rows, cols) = cfg.dataset.patch_shape();
    let noise = eval_noise(cfg.seed, rows, cols, eval.len());
    let projector = FeatureProjector::new(rows, cols, cfg.scorer.feature_dim, cfg.seed)?;

    let variants = [
        ablate_variant(cfg, "baseline", cfg.trainer.importance_sampler, true, None),
        ablate_variant(cfg, "no_importance_sampler", false, true, None),
        ablate_variant(cfg, "no_consistency", false, false, None),
        ablate_variant(cfg, "rho_4", cfg.trainer.importance_sampler, true, Some(4.0)),
    ];

    let mut scored = Vec::new();
    for (name, vcfg) in &variants {
        let schedule = build_schedule(&vcfg.schedule)?;
        let bridge = compute_k(train_split, &prior, &schedule, &vcfg.schedule)?;
        let (state, _) = train_loop(
            TrainMode::V3,
            &vcfg.trainer,
            &vcfg.scorer,
            &vcfg.schedule,
            &schedule,
            &vcfg.dataset,
            train_split,
            Some(&prior),
            Some(&bridge),
            vcfg.seed,
        )?;
        let generated = if vcfg.trainer.consistency_constraint {
            let scorer = state.scorer.as_ref().expect("v3 keeps scorer state");
            generate_v3_with_noise(
                &state.denoiser,
                &prior,
                scorer,
                &conds,
                &schedule,
                &vcfg.schedule,
                &noise,
            )?
            .0
        } else {
            generate_direct(&state.denoiser, &prior, &conds, &vcfg.schedule)?.0
        };
        let frechet = frechet_against(&projector, &generated, &truth)?;
        scored.push((name.clone(), vcfg.clone(), frechet));
        println!("ablation {name}: frechet {}", fmt_f64(frechet));
    }

    let baseline_score = scored[0].2;
    let rows_out: Vec<AblateRow> = scored
        .into_iter()
        .map(|(name, vcfg, frechet)| AblateRow {
            name,
            importance_sampler: vcfg.trainer.importance_sampler,
            consistency_constraint: vcfg.trainer.consistency_constraint,
            rho: vcfg.trainer.consistency_constraint.then_some(vcfg.schedule.rho),
            frechet,
            delta: baseline_score - frechet,
        })
        .collect();

    let csv = cfg.out_dir.join("ablation.csv");
    let text_rows: Vec<String> = rows_out
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.name,
                r.importance_sampler,
                r.consistency_constraint,
                r.rho.map_or("-".to_string(), fmt_f64),
                fmt_f64(r.frechet),
                fmt_f64(r.delta)
            )
        })
        .collect();
    write_csv(
        &csv,
        "config,importance_sampler,consistency_constraint,rho,frechet,delta",
        &text_rows,
    )?;
    println!("ablation table written to {}", csv.display());
    Ok(AblateOutput { csv, rows: rows_out })
}

/// Export format for generated samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Csv,
    Pgm,
}

impl std::str::FromStr for SampleFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(SampleFormat::Csv),
            "pgm" => Ok(SampleFormat::Pgm),
            other => Err(format!("unknown format {other:?} (expected csv or pgm)")),
        }
    }
}

fn write_pgm(path: &Path, patch: &Patch) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", patch.cols(), patch.rows()).into_bytes();
    bytes.extend(patch.data().iter().map(|&v| {
        (((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0)) as u8
    }));
    fs::write(path, bytes)?;
    Ok(())
}

fn write_grid_csv(path: &Path, patch: &Patch) -> Result<()> {
    let mut text = String::new();
    for r in 0..patch.rows() {
        let row: Vec<String> = (0..patch.cols())
            .map(|c| fmt_f64(patch.data()[r * patch.cols() + c]))
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Generate samples from a checkpoint and write one file per sample.
pub fn cmd_sample(
    cfg: &ExperimentConfig,
    ckpt_path: &Path,
    mode: EvalMode,
    count: usize,
    seed: u64,
    format: SampleFormat,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::Usage("sample count must be positive".into()));
    }
    let _lock = OutDirLock::acquire(&cfg.out_dir)?;
    let ckpt = load_and_verify(cfg, ckpt_path)?;
    let conds: Vec<Condition> = data::eval_set(&cfg.dataset, seed, count)?
        .into_iter()
        .map(|(c, _)| c)
        .collect();
    let (rows, cols) = cfg.dataset.patch_shape();
    let noise = {
        use rand::Rng as _;
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, Stream::Sample, 0));
        (0..count)
            .map(|_| {
                let data = (0..rows * cols)
                    .map(|_| rng.sample(rand_distr::StandardNormal))
                    .collect();
                Patch::from_vec(rows, cols, data).expect("shape by construction")
            })
            .collect::<Vec<_>>()
    };
    let (patches, report) = generate_for_eval(cfg, &ckpt, mode, &conds, &noise)?;

    let mut written = Vec::with_capacity(patches.len());
    for (i, patch) in patches.iter().enumerate() {
        let path = match format {
            SampleFormat::Pgm => cfg.out_dir.join(format!("sample-{i:04}.pgm")),
            SampleFormat::Csv => cfg.out_dir.join(format!("sample-{i:04}.csv")),
        };
        match format {
            SampleFormat::Pgm => write_pgm(&path, patch)?,
            SampleFormat::Csv => write_grid_csv(&path, patch)?,
        }
        written.push(path);
    }
    println!("wrote {} samples (NFE {})", written.len(), report.nfe);
    Ok(written)
}
