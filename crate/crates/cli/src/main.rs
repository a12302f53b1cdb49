use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mfrl_cli::checkpoint::Which;
use mfrl_cli::config::{fmt_f64, ExperimentConfig};
use mfrl_cli::error::Result;
use mfrl_cli::pipeline::{self, EvalOutput};

#[derive(Parser)]
#[command(
    name = "mfrl",
    about = "Few-shot learning from averaged representations: train a multi-task \
             backbone, fit probabilistic linear heads per episode, and report \
             accuracy, calibration, and spectra",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the representation and write a checkpoint plus train_log.csv
    Train(CommonArgs),
    /// Run the episodic evaluation protocol with a frozen backbone
    Evaluate(BackboneArgs),
    /// Singular-value spectrum of pooled meta-test features
    Spectrum(BackboneArgs),
    /// One evaluation per (swa_lr, swa_duration) grid cell off a shared SGD phase
    Sweep(CommonArgs),
    /// Compare plain training, EMA decays 0.9/0.99/0.999, and SWA
    CompareAveraging(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (key=value lines)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed (applied before config hashing)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BackboneArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trained checkpoint (omit for feature-file experiments)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Which stored parameter set to use
    #[arg(long, value_enum, default_value_t = WhichArg::Swa)]
    which: WhichArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WhichArg {
    Sgd,
    Swa,
}

impl From<WhichArg> for Which {
    fn from(w: WhichArg) -> Which {
        match w {
            WhichArg::Sgd => Which::Sgd,
            WhichArg::Swa => Which::Swa,
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = load_config(&args)?;
            let path = pipeline::cmd_train(&cfg)?;
            println!("checkpoint {}", path.display());
        }
        Command::Evaluate(args) => {
            let cfg = load_config(&args.common)?;
            match pipeline::cmd_evaluate(&cfg, args.checkpoint.as_deref(), args.which.into())? {
                EvalOutput::Regression(r) => println!(
                    "mse {} ± {} (noise std median {}, {} tasks)",
                    fmt_f64(r.mse_mean),
                    fmt_f64(r.mse_std),
                    fmt_f64(r.noise_std_median),
                    r.rows.len()
                ),
                EvalOutput::Classification(c) => println!(
                    "accuracy {} ± {} (ece {}, λ {}, T {})",
                    fmt_f64(c.table.pooled_mean),
                    fmt_f64(c.table.pooled_ci95),
                    fmt_f64(c.reliability.ece),
                    fmt_f64(c.grid.chosen_lambda),
                    fmt_f64(c.grid.chosen_temperature)
                ),
            }
        }
        Command::Spectrum(args) => {
            let cfg = load_config(&args.common)?;
            let report =
                pipeline::cmd_spectrum(&cfg, args.checkpoint.as_deref(), args.which.into())?;
            println!(
                "effective-rank metric {} over {} singular values{}",
                fmt_f64(report.effective_rank_metric),
                report.singular_values.len(),
                if report.degenerate {
                    " (degenerate: all zero)"
                } else {
                    ""
                }
            );
        }
        Command::Sweep(args) => {
            let cfg = load_config(&args)?;
            let outcome = pipeline::cmd_sweep(&cfg)?;
            println!(
                "{} cells, baseline (no averaging) {}",
                outcome.rows.len(),
                fmt_f64(outcome.baseline)
            );
        }
        Command::CompareAveraging(args) => {
            let cfg = load_config(&args)?;
            for (variant, value) in pipeline::cmd_compare_averaging(&cfg)? {
                println!("{variant} {}", fmt_f64(value));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
