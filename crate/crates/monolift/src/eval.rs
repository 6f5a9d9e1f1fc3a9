//! Rotated 3D / bird's-eye-view IoU and KITTI-style average precision with
//! difficulty filtering.
//!
//! Boxes rotate about y only, so 3D IoU factors into a rotated-rectangle
//! overlap in the ground plane (computed by convex polygon clipping) times a
//! vertical interval overlap.

use crate::geometry::{Dims3D, Translation};
use crate::kitti::LabelRecord;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no ground truth in this class/difficulty bucket; AP is undefined")]
    EmptyGroundTruth,
    #[error("empty input")]
    EmptyInput,
}

/// Oriented rectangle in the x-z ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBoxBev {
    pub cx: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub yaw: f64,
}

impl OrientedBoxBev {
    /// Footprint corners, counter-clockwise when viewed from above.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let ring = [
            (0.5 * self.l, 0.5 * self.w),
            (-0.5 * self.l, 0.5 * self.w),
            (-0.5 * self.l, -0.5 * self.w),
            (0.5 * self.l, -0.5 * self.w),
        ];
        ring.map(|(x, z)| [c * x + s * z + self.cx, -s * x + c * z + self.cz])
    }

    pub fn area(&self) -> f64 {
        self.l * self.w
    }
}

/// Y-axis-aligned 3D box: dimensions, bottom-face center, yaw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub dims: Dims3D,
    pub location: Translation,
    pub yaw: f64,
}

impl Box3D {
    pub fn from_record(r: &LabelRecord) -> Option<Self> {
        Some(Self {
            dims: r.dims3d()?,
            location: r.location,
            yaw: r.rotation_y,
        })
    }

    pub fn bev(&self) -> OrientedBoxBev {
        OrientedBoxBev {
            cx: self.location.tx,
            cz: self.location.tz,
            l: self.dims.l,
            w: self.dims.w,
            yaw: self.yaw,
        }
    }

    pub fn volume(&self) -> f64 {
        self.dims.h * self.dims.w * self.dims.l
    }
}

/// Signed shoelace area; positive for counter-clockwise vertex order.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        twice += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * twice
}

fn edge_side(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Clips `poly` against the left half-plane of the directed edge a->b.
fn clip_halfplane(poly: &[[f64; 2]], a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..n {
        let s = poly[i];
        let e = poly[(i + 1) % n];
        let sd = edge_side(a, b, s);
        let ed = edge_side(a, b, e);
        let intersection = |out: &mut Vec<[f64; 2]>| {
            let denom = sd - ed;
            if denom.abs() > 1e-30 {
                let t = sd / denom;
                out.push([s[0] + (e[0] - s[0]) * t, s[1] + (e[1] - s[1]) * t]);
            }
        };
        match (sd >= 0.0, ed >= 0.0) {
            (true, true) => out.push(e),
            (true, false) => intersection(&mut out),
            (false, true) => {
                intersection(&mut out);
                out.push(e);
            }
            (false, false) => {}
        }
    }
    out
}

/// Intersection area of two convex counter-clockwise polygons via
/// Sutherland-Hodgman clipping; 0 when disjoint.
pub fn polygon_intersection_area(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> f64 {
    if subject.len() < 3 || clip.len() < 3 {
        return 0.0;
    }
    let mut poly = subject.to_vec();
    for i in 0..clip.len() {
        if poly.len() < 3 {
            return 0.0;
        }
        poly = clip_halfplane(&poly, clip[i], clip[(i + 1) % clip.len()]);
    }
    polygon_area(&poly).max(0.0)
}

/// Bird's-eye-view IoU of two oriented rectangles.
pub fn iou_bev(a: &OrientedBoxBev, b: &OrientedBoxBev) -> f64 {
    let inter = polygon_intersection_area(&a.corners(), &b.corners());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// 3D IoU of two y-axis-aligned boxes: BEV overlap times vertical overlap.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let inter_bev = polygon_intersection_area(&a.bev().corners(), &b.bev().corners());
    // boxes span [ty - h, ty] along the downward y axis
    let top = (a.location.ty - a.dims.h).max(b.location.ty - b.dims.h);
    let bottom = a.location.ty.min(b.location.ty);
    let inter = inter_bev * (bottom - top).max(0.0);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// 3D IoU of two label records; 0 when either carries DontCare sentinels.
pub fn record_iou_3d(a: &LabelRecord, b: &LabelRecord) -> f64 {
    match (Box3D::from_record(a), Box3D::from_record(b)) {
        (Some(x), Some(y)) => iou_3d(&x, &y),
        _ => 0.0,
    }
}

/// BEV IoU of two label records; 0 when either carries DontCare sentinels.
pub fn record_iou_bev(a: &LabelRecord, b: &LabelRecord) -> f64 {
    match (Box3D::from_record(a), Box3D::from_record(b)) {
        (Some(x), Some(y)) => iou_bev(&x.bev(), &y.bev()),
        _ => 0.0,
    }
}

/// KITTI difficulty bucket: minimum 2D box height in pixels, maximum
/// occlusion level, maximum truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Difficulty {
    pub name: &'static str,
    pub min_bbox_height: f64,
    pub max_occlusion: i32,
    pub max_truncation: f64,
}

impl Difficulty {
    pub const EASY: Self = Self {
        name: "Easy",
        min_bbox_height: 40.0,
        max_occlusion: 0,
        max_truncation: 0.15,
    };
    pub const MODERATE: Self = Self {
        name: "Moderate",
        min_bbox_height: 25.0,
        max_occlusion: 1,
        max_truncation: 0.30,
    };
    pub const HARD: Self = Self {
        name: "Hard",
        min_bbox_height: 25.0,
        max_occlusion: 2,
        max_truncation: 0.50,
    };

    pub const ALL: [Self; 3] = [Self::EASY, Self::MODERATE, Self::HARD];

    pub fn passes(&self, r: &LabelRecord) -> bool {
        r.bbox.height() >= self.min_bbox_height
            && r.occluded <= self.max_occlusion
            && r.truncated <= self.max_truncation
    }
}

/// How ground truth failing the difficulty filter is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtFilterMode {
    /// Devkit semantics: such GT is "ignored" - it neither counts toward
    /// recall nor turns detections matched to it into false positives.
    DevkitIgnore,
    /// Such GT is dropped outright; detections matching it become false
    /// positives.
    Strict,
}

/// Recall grid used for AP interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApInterpolation {
    /// Eleven points {0.0, 0.1, ..., 1.0}.
    Points11,
    /// Forty points {1/40, 2/40, ..., 1.0}.
    Points40,
}

impl ApInterpolation {
    fn grid(&self) -> Vec<f64> {
        match self {
            Self::Points11 => (0..=10).map(|i| i as f64 / 10.0).collect(),
            Self::Points40 => (1..=40).map(|i| i as f64 / 40.0).collect(),
        }
    }
}

/// Precision/recall curve with its interpolated AP value in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// (recall, precision) after each counted detection, recall non-decreasing.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum DetStatus {
    TruePositive,
    FalsePositive,
    Ignored,
}

/// Average precision for one class and difficulty over per-image record
/// lists (`gt` and `det` aligned by index).
///
/// Detections are matched greedily per image in descending score order, each
/// to the unmatched in-difficulty GT of that class with the highest IoU at
/// or above `iou_threshold`. Under [`GtFilterMode::DevkitIgnore`], a
/// detection that fails that but overlaps an out-of-difficulty GT is dropped
/// from both the TP and FP counts. The curve accumulates over all images in
/// descending score order and AP interpolates precision as
/// `p(r) = max { precision at recall >= r }` over the chosen grid.
pub fn average_precision(
    gt: &[Vec<LabelRecord>],
    det: &[Vec<LabelRecord>],
    class: &str,
    iou_fn: impl Fn(&LabelRecord, &LabelRecord) -> f64,
    iou_threshold: f64,
    difficulty: &Difficulty,
    interpolation: ApInterpolation,
    filter_mode: GtFilterMode,
) -> Result<PrCurve, EvalError> {
    assert_eq!(gt.len(), det.len(), "gt/det image lists must align");
    let mut n_gt = 0usize;
    // (score, image index, detection index, status) for deterministic ordering
    let mut marks: Vec<(f64, usize, usize, DetStatus)> = Vec::new();

    for (img, (gts, dets)) in gt.iter().zip(det.iter()).enumerate() {
        let class_gts: Vec<&LabelRecord> = gts
            .iter()
            .filter(|g| g.class_name == class && !g.is_dont_care())
            .collect();
        let valid: Vec<bool> = class_gts.iter().map(|g| difficulty.passes(g)).collect();
        n_gt += valid.iter().filter(|v| **v).count();

        let mut order: Vec<usize> = dets
            .iter()
            .enumerate()
            .filter(|(_, d)| d.class_name == class)
            .map(|(i, _)| i)
            .collect();
        order.sort_by(|&a, &b| {
            let sa = dets[a].score.unwrap_or(0.0);
            let sb = dets[b].score.unwrap_or(0.0);
            sb.total_cmp(&sa).then(a.cmp(&b))
        });

        let mut used = vec![false; class_gts.len()];
        for det_idx in order {
            let d = &dets[det_idx];
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in class_gts.iter().enumerate() {
                if used[j] || (filter_mode == GtFilterMode::Strict && !valid[j]) {
                    continue;
                }
                if filter_mode == GtFilterMode::DevkitIgnore && !valid[j] {
                    continue; // ignored GT is handled below, never consumed
                }
                let iou = iou_fn(d, g);
                if iou >= iou_threshold && best.is_none_or(|(_, bi)| iou > bi) {
                    best = Some((j, iou));
                }
            }
            let status = if let Some((j, _)) = best {
                used[j] = true;
                DetStatus::TruePositive
            } else if filter_mode == GtFilterMode::DevkitIgnore
                && class_gts
                    .iter()
                    .enumerate()
                    .any(|(j, g)| !valid[j] && iou_fn(d, g) >= iou_threshold)
            {
                DetStatus::Ignored
            } else {
                DetStatus::FalsePositive
            };
            marks.push((d.score.unwrap_or(0.0), img, det_idx, status));
        }
    }

    if n_gt == 0 {
        return Err(EvalError::EmptyGroundTruth);
    }

    marks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut points = Vec::new();
    for (_, _, _, status) in &marks {
        match status {
            DetStatus::TruePositive => tp += 1,
            DetStatus::FalsePositive => fp += 1,
            DetStatus::Ignored => continue,
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }

    let grid = interpolation.grid();
    let ap = grid
        .iter()
        .map(|&r| {
            points
                .iter()
                .filter(|(rec, _)| *rec >= r)
                .map(|(_, prec)| *prec)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / grid.len() as f64;

    Ok(PrCurve { points, ap })
}

/// Fraction (as a percentage) of aligned box pairs with 3D IoU at or above
/// the threshold.
pub fn accuracy_at_iou(pairs: &[(Box3D, Box3D)], threshold: f64) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let hits = pairs
        .iter()
        .filter(|(a, b)| iou_3d(a, b) >= threshold)
        .count();
    Ok(100.0 * hits as f64 / pairs.len() as f64)
}
