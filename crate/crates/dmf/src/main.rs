use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dmf::commands::{self, Query, Run};
use dmf::error::{exit, Error};

/// Deep matrix factorization: prepare splits, train, evaluate, predict.
#[derive(Debug, Parser)]
#[command(name = "dmf", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reproducible outputs: reports record zero elapsed seconds.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the ratings and write the split manifest, stats and id maps.
    Prepare,
    /// Train a model on the prepared splits.
    Train {
        /// Continue from a checkpoint up to the configured epoch budget.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Test-set metrics, overall and per area.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Only discrete metrics; the model must carry a quantizer.
        #[arg(long)]
        discrete: bool,
    },
    /// Predict ratings for user/item pairs.
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, requires = "item", conflicts_with = "batch")]
        user: Option<String>,
        #[arg(long, requires = "user")]
        item: Option<String>,
        /// CSV with `user,item` columns.
        #[arg(long)]
        batch: Option<PathBuf>,
        /// CSV `user,item,rating` rows describing users or items absent
        /// from the training data.
        #[arg(long)]
        side: Option<PathBuf>,
        #[arg(long)]
        discrete: bool,
        /// Write CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> dmf::Result<()> {
    let config = cli.config.ok_or_else(|| Error::Usage("--config is required".into()))?;
    let run = Run::load(&config, cli.seed, cli.output_dir, cli.deterministic)?;
    match cli.command {
        Command::Prepare => {
            let s = commands::prepare(&run)?;
            println!(
                "{} users, {} items, {} ratings (density {:.4}); train {}, validation {}, test {}",
                s.rows, s.cols, s.entries, s.density, s.train, s.validation, s.test
            );
        }
        Command::Train { resume } => {
            let o = commands::train(&run, resume.as_deref())?;
            let s = &o.summary;
            let best = match (s.best_epoch, s.best_val_rmse) {
                (Some(e), Some(r)) => format!("best epoch {}, validation rmse {:.4}", e, r),
                _ => "no validation entries".to_string(),
            };
            println!("{}: {} epochs this run, {} total, {}", s.mode, s.epochs_run, s.epochs_total, best);
        }
        Command::Evaluate { model, discrete } => {
            let reports = commands::evaluate(&run, model.as_deref(), discrete)?;
            print!("{}", dmf::report::metrics_table(&reports));
        }
        Command::Predict { model, user, item, batch, side, discrete, out } => {
            let query = match (user, item, batch) {
                (Some(user), Some(item), None) => Query::Pair { user, item },
                (None, None, Some(path)) => Query::Batch(path),
                _ => return Err(Error::Usage("predict needs --user and --item, or --batch".into())),
            };
            let preds = commands::predict(&run, model.as_deref(), &query, side.as_deref(), discrete)?;
            let csv = commands::predictions_csv(&preds);
            match out {
                Some(path) => std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?,
                None => print!("{}", csv),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
