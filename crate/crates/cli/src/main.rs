//! `dasc`: companding augmentation, CQT features, LCNN training, scoring and
//! evaluation for spoofing countermeasures.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dasc_core::exec::Executor;
use dasc_core::Subset;

use config::{PipelineConfig, PlanKind};

#[derive(Parser, Debug)]
#[command(name = "dasc", version, about = "Companding data augmentation for spoofing countermeasures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Pipeline config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SubsetArg {
    Dev,
    Eval,
}

impl From<SubsetArg> for Subset {
    fn from(s: SubsetArg) -> Self {
        match s {
            SubsetArg::Dev => Subset::Development,
            SubsetArg::Eval => Subset::Evaluation,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic toy corpus and a matching pipeline.toml.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Expand the training list with companded (or noisy) copies.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        plan: Option<PlanKind>,
        /// Target SNR in dB for the noise plan.
        #[arg(long)]
        snr: Option<f64>,
    },
    /// Extract CQT log power spectra for every list.
    Featurize {
        #[command(flatten)]
        common: Common,
        /// Keep feature files that already exist with the right shape.
        #[arg(long)]
        skip_existing: bool,
    },
    /// Train the LCNN on the augmented training list.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a subset with the trained model.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "eval")]
        subset: SubsetArg,
    },
    /// EER and min t-DCF of a score file.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "eval")]
        subset: SubsetArg,
    },
    /// augment, featurize, train, score and evaluate in one go.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        plan: Option<PlanKind>,
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        skip_existing: bool,
    },
}

/// Errors in arguments or configuration (exit code 1). Everything else is a
/// data or runtime error (exit code 2).
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn load_config(common: &Common, plan: Option<PlanKind>, snr: Option<f64>) -> Result<PipelineConfig> {
    let inner = || -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(plan) = plan {
            cfg.augment.plan = plan;
        }
        if let Some(snr) = snr {
            cfg.augment.snr_db = snr;
        }
        cfg.validate().with_context(|| format!("invalid config {}", common.config.display()))?;
        Ok(cfg)
    };
    inner().map_err(|e| UsageError(e).into())
}

fn print_result(r: &dasc_core::metrics::EvalResult, path: &Path) {
    println!("EER: {:.4}% (threshold {})", 100.0 * r.eer, r.eer_threshold);
    println!("min t-DCF: {:.6} (threshold {})", r.min_tdcf, r.tdcf_threshold);
    println!("trials: {} bona fide, {} spoof; details in {}", r.n_bonafide, r.n_spoof, path.display());
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Fixture { out, seed } => {
            let corpus = commands::write_fixture_corpus(out, *seed)?;
            println!(
                "fixture written to {} ({} train, {} dev, {} eval records); run with --config {}",
                corpus.root.display(),
                corpus.train.len(),
                corpus.dev.len(),
                corpus.eval.len(),
                out.join("pipeline.toml").display()
            );
            return Ok(());
        }
        Command::Augment { common, .. }
        | Command::Featurize { common, .. }
        | Command::Train { common }
        | Command::Score { common, .. }
        | Command::Evaluate { common, .. }
        | Command::Run { common, .. } => common.clone(),
    };
    let (plan, snr) = match cli.command {
        Command::Augment { plan, snr, .. } | Command::Run { plan, snr, .. } => (plan, snr),
        _ => (None, None),
    };
    let cfg = load_config(&common, plan, snr)?;
    let layout = commands::Layout::new(&cfg);
    std::fs::create_dir_all(&layout.root).with_context(|| format!("creating {}", layout.root.display()))?;

    Executor::new(common.jobs).install(|| -> Result<()> {
        match cli.command {
            Command::Fixture { .. } => unreachable!(),
            Command::Augment { .. } => {
                let m = commands::augment(&cfg)?;
                println!("{} records listed in {}", m.len(), layout.augmented_protocol().display());
            }
            Command::Featurize { skip_existing, .. } => {
                let c = commands::featurize(&cfg, skip_existing)?;
                println!("{} feature files written, {} kept", c.written, c.skipped);
            }
            Command::Train { .. } => {
                let out = commands::train_cmd(&cfg)?;
                println!("model saved to {} (best epoch {})", layout.model().display(), out.best_epoch);
            }
            Command::Score { subset, .. } => {
                let path = commands::score(&cfg, subset.into())?;
                println!("scores written to {}", path.display());
            }
            Command::Evaluate { subset, .. } => {
                let r = commands::evaluate(&cfg, subset.into())?;
                print_result(&r, &layout.eval_result(subset.into()));
            }
            Command::Run { skip_existing, .. } => {
                let r = commands::run_all(&cfg, skip_existing)?;
                print_result(&r, &layout.eval_result(Subset::Evaluation));
            }
        }
        Ok(())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
