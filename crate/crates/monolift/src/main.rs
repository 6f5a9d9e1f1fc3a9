use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use monolift::cli::{
    cmd_eval, cmd_lift, cmd_predict, cmd_synth, cmd_train, write_eval_report, EvalOptions,
};
use monolift::eval::{ApInterpolation, GtFilterMode};
use monolift::kitti::PerturbSpec;
use monolift::shiftnet::{TargetMode, TrainConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Monocular 3D box toolkit: lift 2D detections to 3D, refine, evaluate.
#[derive(Parser)]
#[command(name = "monolift", version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Exit 0 even when record-level errors occur.
    #[arg(long, global = true)]
    lenient: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ApPoints {
    #[value(name = "11")]
    Eleven,
    #[value(name = "40")]
    Forty,
}

#[derive(Subcommand)]
enum Command {
    /// Solve 3D translations for every label record and write detections.
    Lift {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a perturbed sample dataset from ground-truth labels.
    Synth {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        /// Output dataset path (newline-delimited JSON).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Translation noise stds "x,y,z"; the z entry is per meter of depth.
        #[arg(long, value_name = "X,Y,Z")]
        noise_t: Option<String>,
        /// Multiplicative dimension noise std.
        #[arg(long)]
        noise_d: Option<f64>,
        /// Yaw noise std in radians.
        #[arg(long)]
        noise_a: Option<f64>,
        /// Uniform pixel jitter half-width applied to each projected box side.
        #[arg(long)]
        noise_px: Option<f64>,
        /// Zero out all noise (identity augmentation).
        #[arg(long)]
        noiseless: bool,
    },
    /// Train the refinement network on synthesized datasets.
    Train {
        /// Pretraining dataset (typically noiseless samples).
        #[arg(long)]
        pretrain: PathBuf,
        /// Optional fine-tuning dataset (noisy samples).
        #[arg(long)]
        finetune: Option<PathBuf>,
        /// Model output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 100)]
        epochs_ft: usize,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Regress a correction on top of the solver translation instead of
        /// the translation itself.
        #[arg(long)]
        residual: bool,
    },
    /// Lift then refine with a trained model.
    Predict {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score detections against ground truth.
    Eval {
        /// Ground-truth label directory.
        #[arg(long)]
        labels: PathBuf,
        /// Detection directory.
        #[arg(long)]
        det: PathBuf,
        /// Optional key=value report file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.7)]
        iou_car: f64,
        /// IoU threshold for Pedestrian and Cyclist.
        #[arg(long, default_value_t = 0.5)]
        iou_ped: f64,
        #[arg(long, value_enum, default_value = "11")]
        ap_points: ApPoints,
        /// Drop out-of-difficulty ground truth instead of ignoring it.
        #[arg(long)]
        strict_filter: bool,
    },
}

fn parse_noise_t(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()?;
    anyhow::ensure!(parts.len() == 3, "--noise-t expects three comma-separated values");
    Ok([parts[0], parts[1], parts[2]])
}

fn run(args: Args) -> Result<()> {
    match args.command {
        Command::Lift { labels, calib, out } => {
            let report = cmd_lift(&labels, &calib, &out, args.lenient)?;
            log::info!(
                "lifted {} records from {} files ({} errors)",
                report.records,
                report.files,
                report.errors
            );
        }
        Command::Synth {
            labels,
            calib,
            out,
            seed,
            noise_t,
            noise_d,
            noise_a,
            noise_px,
            noiseless,
        } => {
            let mut spec = if noiseless {
                PerturbSpec::noiseless(seed)
            } else {
                PerturbSpec::default().with_seed(seed)
            };
            if let Some(t) = noise_t {
                spec.t_std = parse_noise_t(&t)?;
            }
            if let Some(d) = noise_d {
                spec.dims_std = d;
            }
            if let Some(a) = noise_a {
                spec.angle_std = a;
            }
            if let Some(px) = noise_px {
                spec.bbox_px = px;
            }
            cmd_synth(&labels, &calib, &spec, &out)?;
        }
        Command::Train {
            pretrain,
            finetune,
            out,
            lr,
            epochs,
            epochs_ft,
            batch,
            seed,
            residual,
        } => {
            let cfg = TrainConfig {
                learning_rate: lr,
                batch_size: batch,
                pretrain_epochs: epochs,
                finetune_epochs: epochs_ft,
                seed,
                target_mode: if residual {
                    TargetMode::Residual
                } else {
                    TargetMode::Direct
                },
                ..TrainConfig::default()
            };
            cmd_train(&pretrain, finetune.as_deref(), &cfg, &out)?;
        }
        Command::Predict {
            labels,
            calib,
            model,
            out,
        } => {
            let report = cmd_predict(&labels, &calib, &model, &out, args.lenient)?;
            log::info!(
                "predicted {} records from {} files ({} errors)",
                report.records,
                report.files,
                report.errors
            );
        }
        Command::Eval {
            labels,
            det,
            out,
            iou_car,
            iou_ped,
            ap_points,
            strict_filter,
        } => {
            let opts = EvalOptions {
                iou_car,
                iou_ped,
                interpolation: match ap_points {
                    ApPoints::Eleven => ApInterpolation::Points11,
                    ApPoints::Forty => ApInterpolation::Points40,
                },
                filter_mode: if strict_filter {
                    GtFilterMode::Strict
                } else {
                    GtFilterMode::DevkitIgnore
                },
            };
            let report = cmd_eval(&labels, &det, &opts)?;
            print!("{}", report.table());
            write_eval_report(&report, out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
