//! Command implementations behind the `monolift` binary: lift, synth,
//! train, predict, eval. Progress and warnings go to standard error through
//! the `log` facade; results go to files or standard output.

use crate::eval::{
    average_precision, iou_3d, record_iou_3d, record_iou_bev, ApInterpolation, Box3D, Difficulty,
    EvalError, GtFilterMode,
};
use crate::geometry::local_to_global;
use crate::kitti::{
    perturb_record, read_calib_file, read_label_file, write_atomic, write_detection, KittiError,
    LabelRecord, PerturbSpec,
};
use crate::lift::lift;
use crate::shiftnet::{
    load_model, read_samples, save_model, train, write_samples, FeatureVector, Mlp, Phase, Sample,
    ShiftNetError, TrainConfig,
};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Kitti(#[from] KittiError),
    #[error(transparent)]
    ShiftNet(#[from] ShiftNetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("record-level errors occurred ({0})")]
    RecordErrors(usize),
}

/// Outcome counters of a per-file command.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct CmdReport {
    pub files: usize,
    pub records: usize,
    pub skipped: usize,
    pub errors: usize,
}

impl CmdReport {
    fn finish(self, lenient: bool) -> Result<CmdReport, CliError> {
        if self.errors > 0 && !lenient {
            Err(CliError::RecordErrors(self.errors))
        } else {
            Ok(self)
        }
    }
}

/// Sorted stems of `*.txt` files in a directory.
fn txt_stems(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().map(|e| e == "txt").unwrap_or(false) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

fn detection_from(
    r: &LabelRecord,
    location: crate::geometry::Translation,
    rotation_y: f64,
    score: f64,
) -> LabelRecord {
    LabelRecord {
        class_name: r.class_name.clone(),
        truncated: -1.0,
        occluded: -1,
        alpha: r.alpha,
        bbox: r.bbox,
        dims: r.dims,
        location,
        rotation_y,
        score: Some(score),
    }
}

/// Runs the closed-form solver on every record of every label file and
/// writes KITTI-format detections scored by reprojection IoU.
pub fn cmd_lift(
    labels_dir: &Path,
    calib_dir: &Path,
    out_dir: &Path,
    lenient: bool,
) -> Result<CmdReport, CliError> {
    run_per_file(labels_dir, calib_dir, out_dir, lenient, None)
}

/// Like [`cmd_lift`], but refines each solved translation with a trained
/// model before writing.
pub fn cmd_predict(
    labels_dir: &Path,
    calib_dir: &Path,
    model_path: &Path,
    out_dir: &Path,
    lenient: bool,
) -> Result<CmdReport, CliError> {
    let model = load_model(model_path)?;
    run_per_file(labels_dir, calib_dir, out_dir, lenient, Some(&model))
}

fn run_per_file(
    labels_dir: &Path,
    calib_dir: &Path,
    out_dir: &Path,
    lenient: bool,
    model: Option<&Mlp>,
) -> Result<CmdReport, CliError> {
    fs::create_dir_all(out_dir)?;
    let mut report = CmdReport::default();
    for stem in txt_stems(labels_dir)? {
        report.files += 1;
        let labels = match read_label_file(&labels_dir.join(format!("{stem}.txt"))) {
            Ok(l) => l,
            Err(e) => {
                log::error!("{stem}: label parse failed: {e}");
                report.errors += 1;
                continue;
            }
        };
        let calib = match read_calib_file(&calib_dir.join(format!("{stem}.txt"))) {
            Ok(c) => c,
            Err(e) => {
                log::error!("{stem}: calibration unavailable: {e}");
                report.errors += 1;
                continue;
            }
        };
        let mut detections = Vec::new();
        for r in &labels {
            if r.is_dont_care() {
                report.skipped += 1;
                continue;
            }
            report.records += 1;
            let Some(dims) = r.dims3d() else {
                log::error!("{stem}: record with invalid dimensions");
                report.errors += 1;
                continue;
            };
            match lift(&r.bbox, &dims, r.alpha, &calib.p2) {
                Ok(sol) => {
                    let theta = crate::geometry::ray_angle(&r.bbox, &calib.p2);
                    let alpha_g = local_to_global(r.alpha, theta);
                    let (location, rotation_y) = match model {
                        None => (sol.translation, alpha_g),
                        Some(m) => {
                            let f = FeatureVector::assemble(
                                &sol.translation,
                                &r.bbox,
                                &dims,
                                r.alpha,
                                alpha_g,
                                &calib.p2,
                            );
                            (m.forward(&f)?, alpha_g)
                        }
                    };
                    detections.push(detection_from(r, location, rotation_y, sol.reprojection_iou));
                }
                Err(e) => {
                    log::warn!("{stem}: lift failed: {e}");
                    report.errors += 1;
                }
            }
        }
        write_detection(&detections, &out_dir.join(format!("{stem}.txt")))?;
    }
    report.finish(lenient)
}

fn mix_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Perturbs every ground-truth record and writes the resulting samples as
/// newline-delimited JSON. Each record gets an independent noise stream
/// derived from the spec seed and its global index, so output is
/// byte-identical for a fixed seed.
pub fn cmd_synth(
    labels_dir: &Path,
    calib_dir: &Path,
    spec: &PerturbSpec,
    out_path: &Path,
) -> Result<CmdReport, CliError> {
    let mut report = CmdReport::default();
    let mut samples: Vec<Sample> = Vec::new();
    let mut index = 0u64;
    for stem in txt_stems(labels_dir)? {
        report.files += 1;
        let labels = read_label_file(&labels_dir.join(format!("{stem}.txt")))?;
        let calib = read_calib_file(&calib_dir.join(format!("{stem}.txt")))?;
        for r in &labels {
            if r.is_dont_care() {
                report.skipped += 1;
                continue;
            }
            report.records += 1;
            let per_record = PerturbSpec {
                seed: mix_seed(spec.seed, index),
                ..spec.clone()
            };
            index += 1;
            match perturb_record(r, &per_record, &calib.p2) {
                Ok(s) => samples.push(s),
                Err(KittiError::Degenerate(_)) => report.skipped += 1,
                Err(e) => return Err(e.into()),
            }
        }
    }
    write_samples(&samples, out_path)?;
    log::info!(
        "synthesized {} samples ({} degenerate records skipped)",
        samples.len(),
        report.skipped
    );
    Ok(report)
}

/// Trains on a pretraining dataset, optionally fine-tunes on a second one,
/// and writes the model.
pub fn cmd_train(
    pretrain_path: &Path,
    finetune_path: Option<&Path>,
    cfg: &TrainConfig,
    model_out: &Path,
) -> Result<(), CliError> {
    let pretrain = read_samples(pretrain_path)?;
    let report = train(&pretrain, cfg, Phase::Pretrain, None)?;
    let model = match finetune_path {
        None => report.model,
        Some(path) => {
            let finetune = read_samples(path)?;
            train(&finetune, cfg, Phase::Finetune, Some(report.model))?.model
        }
    };
    save_model(&model, model_out)?;
    Ok(())
}

/// Evaluation settings for [`cmd_eval`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub iou_car: f64,
    pub iou_ped: f64,
    pub interpolation: ApInterpolation,
    pub filter_mode: GtFilterMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_car: 0.7,
            iou_ped: 0.5,
            interpolation: ApInterpolation::Points11,
            filter_mode: GtFilterMode::DevkitIgnore,
        }
    }
}

const EVAL_CLASSES: [&str; 3] = ["Car", "Pedestrian", "Cyclist"];

/// Per class and difficulty: AP values in percent; `None` renders as "n/a"
/// when the class/difficulty bucket has no ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Per class: percentage of GT boxes whose best-matched detection
    /// reaches the class IoU threshold in 3D.
    pub accuracy: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub class: String,
    pub difficulty: &'static str,
    pub ap_3d: Option<f64>,
    pub ap_bev: Option<f64>,
}

fn fmt_ap(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "n/a".to_string(),
    }
}

impl EvalReport {
    /// Plain-text table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:<10} {:>8} {:>8}", "Class", "Difficulty", "AP_3D", "AP_BEV");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<12} {:<10} {:>8} {:>8}",
                row.class,
                row.difficulty,
                fmt_ap(row.ap_3d),
                fmt_ap(row.ap_bev)
            );
        }
        for (class, acc) in &self.accuracy {
            let _ = writeln!(out, "accuracy@iou {class}: {acc:.2}%");
        }
        out
    }

    /// Machine-readable `key=value` lines.
    pub fn key_values(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let _ = writeln!(out, "{}.{}.AP_3D={}", row.class, row.difficulty, fmt_ap(row.ap_3d));
            let _ = writeln!(
                out,
                "{}.{}.AP_BEV={}",
                row.class,
                row.difficulty,
                fmt_ap(row.ap_bev)
            );
        }
        for (class, acc) in &self.accuracy {
            let _ = writeln!(out, "{class}.accuracy_at_iou={acc:.2}");
        }
        out
    }
}

/// Greedy per-image accuracy: the fraction of GT boxes of `class` whose
/// best available same-class detection reaches `threshold` 3D IoU.
fn class_accuracy(
    gt: &[Vec<LabelRecord>],
    det: &[Vec<LabelRecord>],
    class: &str,
    threshold: f64,
) -> Option<f64> {
    let mut n_gt = 0usize;
    let mut hits = 0usize;
    for (gts, dets) in gt.iter().zip(det.iter()) {
        let boxes_gt: Vec<Box3D> = gts
            .iter()
            .filter(|g| g.class_name == class && !g.is_dont_care())
            .filter_map(Box3D::from_record)
            .collect();
        let boxes_det: Vec<Box3D> = dets
            .iter()
            .filter(|d| d.class_name == class)
            .filter_map(Box3D::from_record)
            .collect();
        n_gt += boxes_gt.len();
        let mut used = vec![false; boxes_det.len()];
        for g in &boxes_gt {
            let mut best: Option<(usize, f64)> = None;
            for (i, d) in boxes_det.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let iou = iou_3d(g, d);
                if best.map(|(_, b)| iou > b).unwrap_or(true) {
                    best = Some((i, iou));
                }
            }
            if let Some((i, iou)) = best {
                used[i] = true;
                if iou >= threshold {
                    hits += 1;
                }
            }
        }
    }
    (n_gt > 0).then(|| 100.0 * hits as f64 / n_gt as f64)
}

/// Scores detections against ground truth: per-class, per-difficulty AP in
/// 3D and bird's-eye view, plus a per-class accuracy summary.
pub fn cmd_eval(
    gt_dir: &Path,
    det_dir: &Path,
    opts: &EvalOptions,
) -> Result<EvalReport, CliError> {
    let mut gt = Vec::new();
    let mut det = Vec::new();
    for stem in txt_stems(gt_dir)? {
        gt.push(read_label_file(&gt_dir.join(format!("{stem}.txt")))?);
        let det_path = det_dir.join(format!("{stem}.txt"));
        det.push(if det_path.exists() {
            read_label_file(&det_path)?
        } else {
            Vec::new()
        });
    }

    let mut rows = Vec::new();
    for class in EVAL_CLASSES {
        let threshold = if class == "Car" {
            opts.iou_car
        } else {
            opts.iou_ped
        };
        for difficulty in &Difficulty::ALL {
            let run = |iou_fn: fn(&LabelRecord, &LabelRecord) -> f64| {
                match average_precision(
                    &gt,
                    &det,
                    class,
                    iou_fn,
                    threshold,
                    difficulty,
                    opts.interpolation,
                    opts.filter_mode,
                ) {
                    Ok(pr) => Some(100.0 * pr.ap),
                    Err(EvalError::EmptyGroundTruth) => None,
                    Err(_) => None,
                }
            };
            rows.push(EvalRow {
                class: class.to_string(),
                difficulty: difficulty.name,
                ap_3d: run(record_iou_3d),
                ap_bev: run(record_iou_bev),
            });
        }
    }

    let mut accuracy = BTreeMap::new();
    for class in EVAL_CLASSES {
        let threshold = if class == "Car" {
            opts.iou_car
        } else {
            opts.iou_ped
        };
        if let Some(acc) = class_accuracy(&gt, &det, class, threshold) {
            accuracy.insert(class.to_string(), acc);
        }
    }

    Ok(EvalReport { rows, accuracy })
}

/// Writes the machine-readable report next to printing the table.
pub fn write_eval_report(report: &EvalReport, out: Option<&Path>) -> Result<(), CliError> {
    if let Some(path) = out {
        write_atomic(path, report.key_values().as_bytes())?;
    }
    Ok(())
}
