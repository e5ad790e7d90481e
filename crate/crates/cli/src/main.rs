use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cfprompt::pipeline::{Axis, ExperimentConfig, Run};

#[derive(Parser)]
#[command(
    name = "cfprompt",
    version,
    about = "Counterfactual generation and prompt-learning experiments"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Guidance scale.
    #[arg(long, global = true)]
    scale: Option<f64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    shots: Option<usize>,
    #[arg(long, global = true)]
    prompt_length: Option<usize>,
    /// `similarity` or `random`.
    #[arg(long, global = true)]
    strategy: Option<String>,
    /// Accept artifacts produced by a different configuration.
    #[arg(long, global = true)]
    allow_lineage_mismatch: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the target pool, encoder corpus and per-replicate splits.
    GenData,
    /// Train the denoiser and measure the reconstruction round trip.
    PretrainDiffusion,
    /// Train the noise-aware classifier used for guidance.
    TrainClassifier,
    /// Generate counterfactuals for train and evaluation images.
    GenCf,
    /// Pretrain the image encoder and fit prompts per replicate.
    TrainPrompts,
    /// Score trained prompts against the baselines.
    Eval,
    /// Re-run downstream stages over values of one axis.
    Sweep {
        /// s | lambda | shots | length | strategy
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Check the counterfactual error bounds on analytic models.
    VerifyTheory,
    /// Every stage in order.
    All,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let overrides: [(&str, Option<String>); 7] = [
        ("seed", common.seed.map(|v| v.to_string())),
        ("out", common.out.as_ref().map(|p| p.display().to_string())),
        ("scale", common.scale.map(|v| v.to_string())),
        ("lambda", common.lambda.map(|v| v.to_string())),
        ("shots", common.shots.map(|v| v.to_string())),
        ("prompt_length", common.prompt_length.map(|v| v.to_string())),
        ("strategy", common.strategy.clone()),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, &v)
                .map_err(anyhow::Error::msg)
                .with_context(|| format!("--{}", key.replace('_', "-")))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let mut run = Run::new(cfg)?;
    run.allow_lineage_mismatch = cli.common.allow_lineage_mismatch;
    let start = Instant::now();
    let written = match cli.command {
        Command::GenData => run.gen_data()?,
        Command::PretrainDiffusion => run.pretrain_diffusion()?,
        Command::TrainClassifier => run.train_classifier()?,
        Command::GenCf => run.gen_cf()?,
        Command::TrainPrompts => run.train_prompts()?,
        Command::Eval => run.eval()?,
        Command::Sweep { axis, values } => {
            let Some(axis) = Axis::parse(&axis) else {
                bail!("unknown sweep axis {axis:?}; expected s, lambda, shots, length or strategy");
            };
            run.sweep(axis, &values)?
        }
        Command::VerifyTheory => run.verify_theory()?,
        Command::All => run.all()?,
    };
    for p in &written {
        println!("wrote {}", p.display());
    }
    eprintln!("done in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
