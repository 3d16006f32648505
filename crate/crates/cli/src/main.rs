use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmmstream::error::{ErrorClass, GmmError};
use gmmstream::evaluation::TrackingAllocator;

mod commands;

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

#[derive(Parser, Debug)]
#[command(name = "gmmstream", version, about = "Incremental Gaussian-mixture clustering and anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct OnlineFlags {
    /// Significance level of the merge tests.
    #[arg(long)]
    significance: Option<f64>,
    /// DBSCAN MinPts for emerging clusters.
    #[arg(long)]
    min_pts: Option<usize>,
    /// How the DBSCAN radius is chosen (offline-frozen, per-round).
    #[arg(long)]
    epsilon_policy: Option<String>,
    /// Covariance of merged components (moment-matching, cross-term).
    #[arg(long)]
    covariance_merge: Option<String>,
    /// Upper bound on reclassify/update passes per round.
    #[arg(long)]
    update_passes: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the robust offline model on historical data.
    FitOffline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        /// Fixed number of components.
        #[arg(long, conflicts_with = "k_range")]
        k: Option<usize>,
        /// BIC search range, `LO..HI` (default 1..10).
        #[arg(long)]
        k_range: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// full, diagonal or spherical.
        #[arg(long, default_value = "full")]
        covariance: String,
        /// Skip z-score normalization.
        #[arg(long)]
        no_normalize: bool,
        /// Project onto the leading principal components explaining this share of variance.
        #[arg(long)]
        pca: Option<f64>,
        #[command(flatten)]
        online: OnlineFlags,
        #[arg(long)]
        out: PathBuf,
        /// Fit report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Apply one online batch; the input model is never modified.
    Update {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        batch: PathBuf,
        #[command(flatten)]
        online: OnlineFlags,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Classify points against a model without changing it.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Standard EM fit with a fixed K, in the input space of an existing model when given.
    BatchFit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "full")]
        covariance: String,
        /// Reuse this model's preprocessing.
        #[arg(long)]
        like: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic design and its offline/online split.
    Simulate {
        /// unbalance, dimhigh or overlap3d.
        #[arg(long)]
        design: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match components of two models and test each pair for equality.
    Compare {
        #[arg(long)]
        model_a: PathBuf,
        #[arg(long)]
        model_b: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        significance: f64,
        /// greedy or hungarian.
        #[arg(long, default_value = "greedy")]
        matcher: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time and memory of online rounds against full retraining.
    Bench {
        #[arg(long)]
        design: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        rounds: usize,
        #[command(flatten)]
        online: OnlineFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Divergence between the incremental model and full refits as online data accumulate.
    Diverge {
        #[arg(long)]
        design: String,
        /// Comma-separated seeds; curves are reported per seed and averaged.
        #[arg(long, default_value = "1")]
        seeds: String,
        /// Number of online sets.
        #[arg(long, default_value_t = 15)]
        sets: usize,
        /// Size of each online set relative to the offline set.
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        #[arg(long, default_value = "greedy")]
        matcher: String,
        #[command(flatten)]
        online: OnlineFlags,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
        ErrorClass::Config => 4,
    }
}

fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Data => "data",
        ErrorClass::Numerical => "numerical",
        ErrorClass::Config => "config",
    }
}

fn fail(err: &GmmError) -> ExitCode {
    let class = err.class();
    let record = serde_json::json!({ "error": err.kind(), "class": class_name(class), "message": err.to_string() });
    eprintln!("{record}");
    ExitCode::from(exit_code(class))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record = serde_json::json!({ "error": "usage", "class": "config", "message": e.to_string().trim_end() });
            eprintln!("{record}");
            return ExitCode::from(exit_code(ErrorClass::Config));
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
