//! Command-line front end: train, evaluate, and diagnose models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::UsageError;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "fawmf",
    version,
    about = "Adaptively weighted matrix factorization for implicit feedback"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options every subcommand shares.
#[derive(Args, Debug)]
struct CommonOpts {
    /// Flat `key = value` config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Root seed; every random subsystem forks its own stream from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results are identical either way;
    /// 1 is the single-threaded reference mode.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct HyperOpts {
    /// Latent factor dimension K.
    #[arg(long)]
    k: Option<usize>,
    /// Community dimension D.
    #[arg(long)]
    d: Option<usize>,
    /// Reconstruction target for unexposed cells.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Relative objective change that counts as converged.
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Activation clamp distance from 0 and 1.
    #[arg(long)]
    sigma_clamp: Option<f64>,
}

#[derive(Args, Debug)]
struct DataOpts {
    /// Interaction log to load.
    #[arg(long)]
    data: Option<PathBuf>,
    /// movielens-dat | tsv | csv
    #[arg(long)]
    format: Option<String>,
    /// Drop items with fewer interactions than this.
    #[arg(long)]
    min_item_interactions: Option<usize>,
    /// Cross-validation folds (1 = use all data for training).
    #[arg(long)]
    folds: Option<usize>,
    /// Which fold to use.
    #[arg(long)]
    fold: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint plus its training history.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        hyper: HyperOpts,
        #[command(flatten)]
        data: DataOpts,
        /// fbgd | bgd-naive | sgd-uniform | sgd-itempop
        #[arg(long)]
        optimizer: Option<String>,
        /// Negatives per positive for the sgd-* optimizers (ignored otherwise).
        #[arg(long)]
        neg_ratio: Option<u32>,
        /// Also write dense-to-raw id maps (users.tsv, items.tsv).
        #[arg(long)]
        export_id_maps: bool,
    },
    /// Rank and score a checkpoint (or the popularity baseline) on a fold.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        data: DataOpts,
        /// Checkpoint to evaluate (required for --scorer model).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Ranking cutoff K for precision/recall/NDCG.
        #[arg(long)]
        cutoff: Option<usize>,
        /// model | itempop
        #[arg(long)]
        scorer: Option<String>,
        /// Also write per-user metrics.
        #[arg(long)]
        per_user: bool,
    },
    /// Certify the fast gradients against the naive oracle and finite
    /// differences on a synthetic instance.
    Gradcheck {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        hyper: HyperOpts,
        /// Synthetic instance: users.
        #[arg(long)]
        users: Option<usize>,
        /// Synthetic instance: items.
        #[arg(long)]
        items: Option<usize>,
        /// Synthetic instance: positive density.
        #[arg(long)]
        density: Option<f64>,
    },
    /// Time cached vs naive full-batch epochs across instance sizes.
    Bench {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        hyper: HyperOpts,
        /// Comma-separated square sizes, e.g. 200,500,1000.
        #[arg(long)]
        sizes: Option<String>,
        /// Positive density of the synthetic instances.
        #[arg(long)]
        density: Option<f64>,
        /// Measured epochs per size (after one warmup epoch).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Report learned communities: activation mass, top items, top users.
    Communities {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        hyper: HyperOpts,
        #[command(flatten)]
        data: DataOpts,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Entries per community.
        #[arg(long)]
        top: Option<usize>,
    },
}

/// Anything a command can fail with, mapped onto the exit-code contract:
/// 1 usage, 2 data, 3 numeric failure.
#[derive(Debug)]
pub enum CliError {
    Usage(UsageError),
    Lib(fawmf::Error),
}

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e)
    }
}

impl From<fawmf::Error> for CliError {
    fn from(e: fawmf::Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Lib(fawmf::Error::Numeric(_)) => EXIT_NUMERIC,
            CliError::Lib(_) => EXIT_DATA,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(e) => format!("usage error: {e}"),
            CliError::Lib(e) => format!("error: {e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}

fn init_threads(threads: usize) -> Result<(), CliError> {
    if threads == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(UsageError(format!("cannot set thread count: {e}"))))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            common,
            hyper,
            data,
            optimizer,
            neg_ratio,
            export_id_maps,
        } => commands::train(common, hyper, data, optimizer, neg_ratio, export_id_maps),
        Command::Eval {
            common,
            data,
            checkpoint,
            cutoff,
            scorer,
            per_user,
        } => commands::eval(common, data, checkpoint, cutoff, scorer, per_user),
        Command::Gradcheck {
            common,
            hyper,
            users,
            items,
            density,
        } => commands::gradcheck(common, hyper, users, items, density),
        Command::Bench {
            common,
            hyper,
            sizes,
            density,
            epochs,
        } => commands::bench(common, hyper, sizes, density, epochs),
        Command::Communities {
            common,
            hyper,
            data,
            checkpoint,
            top,
        } => commands::communities(common, hyper, data, checkpoint, top),
    }
}
