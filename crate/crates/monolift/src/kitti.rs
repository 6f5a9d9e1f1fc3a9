//! KITTI object-label and calibration file I/O, plus the synthetic
//! perturbation generator that turns ground-truth records into noisy
//! training samples.
//!
//! Label lines are whitespace-separated with 15 fields (ground truth) or 16
//! (detections with a trailing score):
//!
//! ```text
//! type truncated occluded alpha x_min y_min x_max y_max h w l tx ty tz rotation_y [score]
//! ```
//!
//! Calibration files hold `KEY: v1 v2 ...` lines; `P2` (the left color
//! camera) is required and parsed into a [`CameraMatrix`], all other keys
//! are retained as opaque named matrices.

use crate::geometry::{
    corners_at_origin, global_to_local, local_to_global, normalize_angle, projected_bbox,
    ray_angle, transform_corners, Box2D, CameraMatrix, Dims3D, GeometryError, Translation,
};
use crate::lift::lift;
use crate::shiftnet::Sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("expected 15 or 16 fields, found {0}")]
    FieldCount(usize),
    #[error("cannot parse {0:?} as a number")]
    Parse(String),
    #[error("{0} out of range")]
    Range(&'static str),
    #[error("calibration file has no P2 line")]
    MissingP2,
    #[error("invalid P2 matrix: {0}")]
    BadCamera(#[from] GeometryError),
    #[error("detection record has no score")]
    MissingScore,
    #[error("perturbation rejected after {0} redraws")]
    Degenerate(u32),
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        source: Box<KittiError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One line of a KITTI object label file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub class_name: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    pub bbox: Box2D,
    /// Height, width, length in meters; -1 sentinels on DontCare rows.
    pub dims: [f64; 3],
    /// Bottom-face center in camera coordinates.
    pub location: Translation,
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl LabelRecord {
    pub fn is_dont_care(&self) -> bool {
        self.class_name == "DontCare"
    }

    /// Validated dimensions; `None` for DontCare sentinels.
    pub fn dims3d(&self) -> Option<Dims3D> {
        Dims3D::new(self.dims[0], self.dims[1], self.dims[2]).ok()
    }
}

/// Parsed calibration file.
#[derive(Debug, Clone)]
pub struct CalibRecord {
    pub p2: CameraMatrix,
    /// Remaining keys, retained verbatim.
    pub others: BTreeMap<String, Vec<f64>>,
}

/// Pinhole parameters recovered from a rectified projection matrix whose
/// left block is upper triangular, as KITTI's P0..P3 are: `P = K [I | t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
    pub skew: f64,
    /// Camera translation baked into the fourth column, `K^-1 P[:,3]`.
    pub translation: [f64; 3],
}

/// Recovers [`Intrinsics`] from a rectified projection matrix.
pub fn decompose_projection(p: &CameraMatrix) -> Intrinsics {
    let m = p.matrix();
    let (fu, skew, cu) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let (fv, cv) = (m[(1, 1)], m[(1, 2)]);
    let tz = m[(2, 3)];
    let ty = (m[(1, 3)] - cv * tz) / fv;
    let tx = (m[(0, 3)] - skew * ty - cu * tz) / fu;
    Intrinsics {
        fu,
        fv,
        cu,
        cv,
        skew,
        translation: [tx, ty, tz],
    }
}

/// Rebuilds the projection matrix `K [I | t]` from [`Intrinsics`].
pub fn compose_projection(i: &Intrinsics) -> Result<CameraMatrix, GeometryError> {
    let [tx, ty, tz] = i.translation;
    CameraMatrix::from_row_major([
        i.fu,
        i.skew,
        i.cu,
        i.fu * tx + i.skew * ty + i.cu * tz,
        0.0,
        i.fv,
        i.cv,
        i.fv * ty + i.cv * tz,
        0.0,
        0.0,
        1.0,
        tz,
    ])
}

fn parse_number(token: &str) -> Result<f64, KittiError> {
    token
        .parse::<f64>()
        .map_err(|_| KittiError::Parse(token.to_string()))
}

/// Parses one label line into a [`LabelRecord`].
pub fn parse_label_line(line: &str) -> Result<LabelRecord, KittiError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 15 && fields.len() != 16 {
        return Err(KittiError::FieldCount(fields.len()));
    }
    let class_name = fields[0].to_string();
    let mut nums = [0.0f64; 15];
    for (i, slot) in nums.iter_mut().enumerate().take(fields.len() - 1) {
        *slot = parse_number(fields[i + 1])?;
    }
    let truncated = nums[0];
    let occluded_raw = nums[1];
    if occluded_raw.fract() != 0.0 {
        return Err(KittiError::Parse(fields[2].to_string()));
    }
    let occluded = occluded_raw as i32;
    if !(-1..=3).contains(&occluded) {
        return Err(KittiError::Range("occluded"));
    }
    let bbox =
        Box2D::new(nums[3], nums[4], nums[5], nums[6]).map_err(|_| KittiError::Range("bbox"))?;
    let dims = [nums[7], nums[8], nums[9]];
    let record = LabelRecord {
        class_name,
        truncated,
        occluded,
        alpha: nums[2],
        bbox,
        dims,
        location: Translation::new(nums[10], nums[11], nums[12]),
        rotation_y: nums[13],
        score: (fields.len() == 16).then_some(nums[14]),
    };
    if !record.is_dont_care() && record.dims3d().is_none() {
        return Err(KittiError::Range("dimensions"));
    }
    Ok(record)
}

/// Formats a record back into the KITTI field order: two decimals for every
/// numeric field, four for the optional score.
pub fn write_label_line(r: &LabelRecord) -> String {
    let mut line = format!(
        "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
        r.class_name,
        r.truncated,
        r.occluded,
        r.alpha,
        r.bbox.x_min,
        r.bbox.y_min,
        r.bbox.x_max,
        r.bbox.y_max,
        r.dims[0],
        r.dims[1],
        r.dims[2],
        r.location.tx,
        r.location.ty,
        r.location.tz,
        r.rotation_y,
    );
    if let Some(score) = r.score {
        line.push_str(&format!(" {score:.4}"));
    }
    line
}

/// Parses calibration text. `P2` must be present with exactly 12 values.
pub fn parse_calib(text: &str) -> Result<CalibRecord, KittiError> {
    let mut p2 = None;
    let mut others = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim();
        let values = rest
            .split_whitespace()
            .map(parse_number)
            .collect::<Result<Vec<f64>, _>>()?;
        if key == "P2" {
            if values.len() != 12 {
                return Err(KittiError::Parse(format!(
                    "P2 expects 12 values, found {}",
                    values.len()
                )));
            }
            let mut m = [0.0; 12];
            m.copy_from_slice(&values);
            p2 = Some(CameraMatrix::from_row_major(m)?);
        } else {
            others.insert(key.to_string(), values);
        }
    }
    Ok(CalibRecord {
        p2: p2.ok_or(KittiError::MissingP2)?,
        others,
    })
}

pub fn read_label_file(path: &Path) -> Result<Vec<LabelRecord>, KittiError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_label_line(l).map_err(|e| KittiError::AtLine {
                line: i + 1,
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn read_calib_file(path: &Path) -> Result<CalibRecord, KittiError> {
    parse_calib(&fs::read_to_string(path)?)
}

/// Writes bytes to `path` through a temp file plus rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Writes detection records (scores required) in KITTI format, one line per
/// record, atomically.
pub fn write_detection(records: &[LabelRecord], path: &Path) -> Result<(), KittiError> {
    let mut out = String::new();
    for r in records {
        if r.score.is_none() {
            return Err(KittiError::MissingScore);
        }
        out.push_str(&write_label_line(r));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())?;
    Ok(())
}

/// Noise applied to a ground-truth record before re-projection.
///
/// Translation noise is Gaussian per axis; the z entry is interpreted per
/// meter of depth when `depth_proportional_z` is set. Dimension noise is
/// multiplicative log-normal, angle noise Gaussian. `bbox_px` additionally
/// jitters each projected box coordinate uniformly in `[-bbox_px, bbox_px]`,
/// breaking the exact consistency between the 2D box and the 3D quantities
/// the way an upstream detector's errors would.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub t_std: [f64; 3],
    pub depth_proportional_z: bool,
    pub dims_std: f64,
    pub angle_std: f64,
    pub bbox_px: f64,
    pub img_w: f64,
    pub img_h: f64,
    pub seed: u64,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self {
            t_std: [0.25, 0.10, 0.02],
            depth_proportional_z: true,
            dims_std: 0.08,
            angle_std: 0.05,
            bbox_px: 6.0,
            img_w: 1242.0,
            img_h: 375.0,
            seed: 0,
        }
    }
}

impl PerturbSpec {
    /// Identity augmentation: samples reproduce the exact projection.
    pub fn noiseless(seed: u64) -> Self {
        Self {
            t_std: [0.0; 3],
            depth_proportional_z: true,
            dims_std: 0.0,
            angle_std: 0.0,
            bbox_px: 0.0,
            seed,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), KittiError> {
        let ok = self.t_std.iter().all(|s| s.is_finite() && *s >= 0.0)
            && self.dims_std >= 0.0
            && self.angle_std >= 0.0
            && self.bbox_px >= 0.0
            && self.img_w > 0.0
            && self.img_h > 0.0;
        if ok {
            Ok(())
        } else {
            Err(KittiError::Range("perturbation spec"))
        }
    }
}

const MAX_REDRAWS: u32 = 20;
const MIN_PERTURBED_TZ: f64 = 0.5;
const MIN_PERTURBED_DIM: f64 = 0.1;

fn gauss(rng: &mut ChaCha12Rng, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).expect("valid std").sample(rng)
    } else {
        0.0
    }
}

/// Draws noise onto a ground-truth record, reconstructs and projects the
/// perturbed box, and emits a training [`Sample`]: the features are the
/// perturbed quantities (including the translation recovered by [`lift`]
/// from them), the target is the *original* location. Draws that leave the
/// image, land too close to the camera, or defeat the solver are redrawn up
/// to [`MAX_REDRAWS`] times.
///
/// With a fixed `spec.seed` the result is a pure function of
/// `(record, spec, camera)`.
pub fn perturb_record(
    r: &LabelRecord,
    spec: &PerturbSpec,
    p: &CameraMatrix,
) -> Result<Sample, KittiError> {
    assert!(!r.is_dont_care(), "DontCare records cannot be perturbed");
    spec.validate()?;
    let dims_gt = r.dims3d().ok_or(KittiError::Range("dimensions"))?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    for _ in 0..=MAX_REDRAWS {
        let sigma_z = if spec.depth_proportional_z {
            spec.t_std[2] * r.location.tz
        } else {
            spec.t_std[2]
        };
        let loc = Translation::new(
            r.location.tx + gauss(&mut rng, spec.t_std[0]),
            r.location.ty + gauss(&mut rng, spec.t_std[1]),
            r.location.tz + gauss(&mut rng, sigma_z),
        );
        let dims = Dims3D::new(
            (dims_gt.h * gauss(&mut rng, spec.dims_std).exp()).max(MIN_PERTURBED_DIM),
            (dims_gt.w * gauss(&mut rng, spec.dims_std).exp()).max(MIN_PERTURBED_DIM),
            (dims_gt.l * gauss(&mut rng, spec.dims_std).exp()).max(MIN_PERTURBED_DIM),
        )
        .expect("clamped dims are positive");
        let ry = normalize_angle(r.rotation_y + gauss(&mut rng, spec.angle_std));
        if loc.tz <= MIN_PERTURBED_TZ {
            continue;
        }
        let cam = transform_corners(&corners_at_origin(&dims), ry, &loc);
        let Ok(projected) = projected_bbox(&cam, p) else {
            continue;
        };
        let bbox = if spec.bbox_px > 0.0 {
            let jitter = |rng: &mut ChaCha12Rng| rng.random_range(-spec.bbox_px..=spec.bbox_px);
            match Box2D::new(
                projected.x_min + jitter(&mut rng),
                projected.y_min + jitter(&mut rng),
                projected.x_max + jitter(&mut rng),
                projected.y_max + jitter(&mut rng),
            ) {
                Ok(b) => b,
                Err(_) => continue,
            }
        } else {
            projected
        };
        if bbox.x_min < 0.0 || bbox.y_min < 0.0 || bbox.x_max > spec.img_w || bbox.y_max > spec.img_h
        {
            continue;
        }
        let theta_ray = ray_angle(&bbox, p);
        let alpha_l = global_to_local(ry, theta_ray);
        let alpha_g = local_to_global(alpha_l, theta_ray);
        let Ok(solution) = lift(&bbox, &dims, alpha_l, p) else {
            continue;
        };
        return Ok(Sample {
            class_name: r.class_name.clone(),
            t_prime: [
                solution.translation.tx,
                solution.translation.ty,
                solution.translation.tz,
            ],
            bbox: [bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max],
            dims: [dims.h, dims.w, dims.l],
            alpha_l,
            alpha_g,
            p: p.row_major(),
            target: [r.location.tx, r.location.ty, r.location.tz],
        });
    }
    Err(KittiError::Degenerate(MAX_REDRAWS))
}
