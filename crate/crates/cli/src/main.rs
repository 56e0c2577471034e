mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Correlator-fingerprint GPS spoofing detection pipeline.
///
/// Stages exchange files: captures and manifests, epoch CSVs, feature CSVs,
/// model JSON, and report tables. Every run also writes `<command>.run.json`
/// with the tool version, seed, configuration hash and input hashes.
///
/// Exit status: 0 success, 1 usage or configuration error, 2 data error,
/// 3 spoofing alarm raised by `detect`.
#[derive(Debug, Parser)]
#[command(name = "eplguard", version)]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "EPLGUARD_OUT", default_value = "eplguard-out")]
    out: PathBuf,

    /// Receiver settings (TOML with optional [acquisition], [tracking], [window]
    /// tables and `settle_time`).
    #[arg(long, global = true)]
    receiver: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a scenario into a capture, ground-truth labels and a manifest.
    Simulate { scenario: PathBuf },
    /// Acquire and track a capture, writing one epoch CSV per channel.
    Track {
        /// Manifest (.toml) or raw capture with a sidecar.
        input: PathBuf,
        #[command(flatten)]
        sel: ChannelSelect,
    },
    /// Turn epoch CSVs into feature CSVs, split by ground truth when labels are given.
    Extract {
        #[arg(required = true)]
        epochs: Vec<PathBuf>,
        /// Ground-truth label runs; writes `.genuine` and `.attacked` feature files.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Base name of the output files (defaults to the first input's dataset id).
        #[arg(long)]
        name: Option<String>,
    },
    /// Fit the genuine model and place the equal-error threshold.
    Train {
        #[arg(long, num_args = 1.., required = true)]
        genuine: Vec<PathBuf>,
        /// Spoofed features; without them the threshold falls back to a genuine quantile.
        #[arg(long, num_args = 1..)]
        spoofed: Vec<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Evaluate a model, optionally sweeping the averaging block size.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        genuine: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        spoofed: Vec<PathBuf>,
        /// Block sizes to report, e.g. `1,10,100`. Defaults to the model's own.
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        /// Report with "rejected as spoofed" as the positive outcome, exchanging FPR and FNR.
        #[arg(long)]
        swap_labels: bool,
    },
    /// Leave-one-dataset-out cross-validation.
    Xval {
        /// `ID=GENUINE.csv,SPOOFED.csv`, at least two.
        #[arg(long = "fold", required = true, num_args = 1..)]
        folds: Vec<String>,
        #[command(flatten)]
        train: TrainArgs,
        /// Report with "rejected as spoofed" as the positive outcome, exchanging FPR and FNR.
        #[arg(long)]
        swap_labels: bool,
    },
    /// Score a capture or epoch CSVs window by window and report spoofing exposure.
    Detect {
        #[arg(long)]
        model: PathBuf,
        /// Manifest, raw capture, or epoch CSVs.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Ground-truth labels for the decision log (taken from a manifest when present).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        sel: ChannelSelect,
        /// Seconds of undetected spoofing that count as one receiver lock.
        #[arg(long, default_value_t = 30.0)]
        lock_seconds: f64,
    },
    /// Simulate, track, extract, train and evaluate the four shipped quickstart datasets.
    Quickstart {
        #[arg(long, default_value = "scenarios/quickstart")]
        scenarios: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Debug, Args)]
struct ChannelSelect {
    /// PRNs to search for, e.g. `3,7,12`. Defaults to all 32.
    #[arg(long, value_delimiter = ',')]
    prns: Vec<u8>,
    /// Keep every n-th sample of the capture.
    #[arg(long, default_value_t = 1)]
    decimate: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AveragingArg {
    Scores,
    Features,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature windows averaged per decision.
    #[arg(long, default_value_t = 1)]
    n_avg: usize,
    #[arg(long, value_enum, default_value = "scores")]
    averaging: AveragingArg,
    /// Share of genuine windows held out for thresholding.
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
