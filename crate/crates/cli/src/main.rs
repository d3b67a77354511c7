//! Command-line surface for the freehand-sweep reconstruction pipeline:
//! synthetic dataset generation, training, per-scan reconstruction with
//! optional test-time adaptation, and trajectory evaluation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fima_core::config::Config;
use fima_core::model::ModelKind;
use fima_core::pipeline::{
    adapt_and_infer, evaluate, infer_params, load_checkpoint, report_text, train, write_report,
};
use fima_core::pose::write_trajectory_csv;
use fima_core::synth::{load_scan_inference, make_dataset};

#[derive(Parser)]
#[command(
    name = "fima",
    about = "Freehand ultrasound trajectory reconstruction from frames and inertial sensors",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic phantom dataset with train/val/test splits.
    GenData(GenDataArgs),
    /// Train a model and keep the best-validation checkpoint.
    Train(TrainArgs),
    /// Reconstruct one scan's trajectory, optionally adapting on it first.
    Reconstruct(ReconstructArgs),
    /// Score predicted trajectories against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Config file; the [data] section drives generation.
    #[arg(long)]
    config: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Replace the output directory if it already exists.
    #[arg(long)]
    force: bool,
    /// Master seed for the dataset.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file; [net], [train], and [adapt] sections apply.
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory holding train/ and val/ splits.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path (a .meta.json and .log.csv appear next to it).
    #[arg(long)]
    out: PathBuf,
    /// Model variant: `fused` uses the inertial streams, `image_only` ignores them.
    #[arg(long, default_value = "fused")]
    kind: String,
    /// Training seed; overrides the config's [train] seed when given.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Trained checkpoint path.
    #[arg(long)]
    ckpt: PathBuf,
    /// Scan directory (frames.f32, meta.txt, imu.csv; ground truth not needed).
    #[arg(long)]
    scan: PathBuf,
    /// Run label-free adaptation on this scan before decoding.
    #[arg(long)]
    adapt: bool,
    /// Adaptation steps (with --adapt); defaults to the standard 60.
    #[arg(long)]
    adapt_iters: Option<usize>,
    /// Output trajectory CSV.
    #[arg(long)]
    out: PathBuf,
    /// Accepted for interface uniformity; reconstruction draws no randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted trajectories, one <scan_id>.csv each.
    #[arg(long)]
    pred: PathBuf,
    /// Dataset split directory holding the ground-truth scan folders.
    #[arg(long)]
    gt: PathBuf,
    /// Report output path (a .json twin is written next to it).
    #[arg(long)]
    report: PathBuf,
    /// Accepted for interface uniformity; evaluation draws no randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Exit code when evaluation ran but some scans could not be scored.
const EXIT_PARTIAL: u8 = 2;

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> fima_core::error::Result<ExitCode> {
    match cli.cmd {
        Cmd::GenData(a) => {
            let cfg = Config::from_file(&a.config)?;
            let manifest = make_dataset(&cfg.data, a.seed, &a.out, a.force)?;
            println!("wrote {} scans to {}", manifest.len(), a.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Train(a) => {
            let cfg = Config::from_file(&a.config)?;
            let kind = ModelKind::parse(&a.kind)?;
            let seed = a.seed.unwrap_or(cfg.train.seed);
            let out = train(&cfg, kind, &a.data, &a.out, seed)?;
            println!(
                "trained {} epochs; best val loss {} at epoch {}; checkpoint {}; log {}",
                out.epochs_run,
                out.best_val,
                out.best_epoch,
                out.ckpt.display(),
                out.log.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Reconstruct(a) => {
            let (model, store, meta) = load_checkpoint(&a.ckpt)?;
            let scan = load_scan_inference(&a.scan)?;
            let params = if a.adapt {
                let mut acfg = Config::default().adapt;
                if let Some(iters) = a.adapt_iters {
                    acfg.iterations = iters;
                }
                let out = adapt_and_infer(&model, &store, &scan, &acfg, meta.align_l2_normalize)?;
                println!(
                    "adapted {} iterations on {} (objective {} -> {})",
                    out.losses.len(),
                    scan.id,
                    out.losses.first().copied().unwrap_or(f64::NAN),
                    out.losses.last().copied().unwrap_or(f64::NAN)
                );
                out.params
            } else {
                infer_params(&model, &store, &scan)?
            };
            write_trajectory_csv(&a.out, &params)?;
            println!("wrote {} transitions to {}", params.len(), a.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Eval(a) => {
            let report = evaluate(&a.pred, &a.gt)?;
            write_report(&report, &a.report)?;
            print!("{}", report_text(&report));
            if report.skipped.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("error: {} scan(s) could not be scored", report.skipped.len());
                Ok(ExitCode::from(EXIT_PARTIAL))
            }
        }
    }
}
