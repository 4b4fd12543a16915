//! Command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cskr::commands::{
    cmd_ablate, cmd_eval, cmd_sample, cmd_sweep, cmd_train_cm, cmd_train_prior, EvalMode,
    SampleFormat,
};
use cskr::config::ExperimentConfig;
use cskr::trainer::TrainMode;

#[derive(Parser)]
#[command(
    name = "cskr",
    version,
    about = "Consistency-model training and one-step sampling on synthetic conditional tasks"
)]
struct Cli {
    /// Experiment config file (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the experiment seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the condition-only prior and compute the restore bridge.
    TrainPrior,
    /// Train the consistency denoiser (v1, v2 or v3).
    TrainCm {
        /// Generator version to train.
        #[arg(long)]
        mode: String,
        /// Prior checkpoint (required for v2/v3, ignored for v1).
        #[arg(long, value_name = "PATH")]
        prior: Option<PathBuf>,
    },
    /// Generate samples from a checkpoint and score them against ground truth.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Generator to evaluate: prior, v1, v2 or v3.
        #[arg(long)]
        mode: String,
        /// Number of samples to generate and score.
        #[arg(long, default_value_t = 256)]
        eval_size: usize,
    },
    /// Score one-step restoration from each trajectory index.
    Sweep {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Comma-separated indices (defaults to the checkpoint's candidates).
        #[arg(long, value_name = "LIST")]
        indices: Option<String>,
    },
    /// Run the four ablation configurations and write the comparison table.
    Ablate,
    /// Generate samples and export them as CSV grids or PGM images.
    Sample {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Generator to sample from: prior, v1, v2 or v3.
        #[arg(long)]
        mode: String,
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Export format: pgm or csv.
        #[arg(long, default_value = "pgm")]
        format: String,
    },
}

fn load_config(cli: &Cli) -> cskr::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> cskr::Result<T> {
    s.parse().map_err(cskr::Error::Usage)
}

fn parse_train_mode(s: &str) -> cskr::Result<TrainMode> {
    match s {
        "v1" => Ok(TrainMode::V1),
        "v2" => Ok(TrainMode::V2),
        "v3" => Ok(TrainMode::V3),
        other => Err(cskr::Error::Usage(format!(
            "unknown mode {other:?} (expected v1, v2 or v3)"
        ))),
    }
}

fn parse_indices(s: &str) -> cskr::Result<Vec<usize>> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| cskr::Error::Usage(format!("bad index {part:?} in --indices")))
        })
        .collect()
}

fn run(cli: &Cli) -> cskr::Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::TrainPrior => {
            cmd_train_prior(&cfg)?;
        }
        Command::TrainCm { mode, prior } => {
            let mode = parse_train_mode(mode)?;
            cmd_train_cm(&cfg, prior.as_deref(), mode)?;
        }
        Command::Eval { checkpoint, mode, eval_size } => {
            let mode: EvalMode = parse(mode)?;
            cmd_eval(&cfg, checkpoint, mode, *eval_size, cfg.seed)?;
        }
        Command::Sweep { checkpoint, indices } => {
            let indices = indices.as_deref().map(parse_indices).transpose()?;
            cmd_sweep(&cfg, checkpoint, indices, cfg.seed)?;
        }
        Command::Ablate => {
            cmd_ablate(&cfg)?;
        }
        Command::Sample { checkpoint, mode, count, format } => {
            let mode: EvalMode = parse(mode)?;
            let format: SampleFormat = parse(format)?;
            cmd_sample(&cfg, checkpoint, mode, *count, cfg.seed, format)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // behave like a normal unix tool when stdout is closed early (head, etc.)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
