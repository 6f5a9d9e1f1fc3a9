//! Shared generators and oracles for the integration suites.

use monolift::eval::Box3D;
use monolift::geometry::{
    corners_at_origin, global_to_local, projected_bbox, ray_angle, transform_corners, Box2D,
    CameraMatrix, Dims3D, Translation,
};
use monolift::kitti::LabelRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::f64::consts::PI;

/// A real KITTI P2 projection matrix (sequence 2011_09_26).
pub const KITTI_P2: [f64; 12] = [
    721.5377, 0.0, 609.5593, 44.85728, 0.0, 721.5377, 172.854, 0.2163791, 0.0, 0.0, 1.0,
    0.002745884,
];

pub const IMG_W: f64 = 1242.0;
pub const IMG_H: f64 = 375.0;

pub fn kitti_cam() -> CameraMatrix {
    CameraMatrix::from_row_major(KITTI_P2).unwrap()
}

pub const CLASS_MEANS: [(&str, [f64; 3]); 3] = [
    ("Car", [1.53, 1.63, 3.88]),
    ("Pedestrian", [1.76, 0.66, 0.84]),
    ("Cyclist", [1.74, 0.60, 1.76]),
];

/// Draws an untruncated ground-truth record: dims log-jittered around the
/// class mean, depth uniform in `tz_range`, yaw uniform, projected box fully
/// inside the image with a small margin.
pub fn sample_record(
    rng: &mut ChaCha12Rng,
    p: &CameraMatrix,
    class_pool: &[usize],
    tz_range: (f64, f64),
) -> LabelRecord {
    loop {
        let class = class_pool[rng.random_range(0..class_pool.len())];
        let (name, means) = CLASS_MEANS[class];
        let scale = |rng: &mut ChaCha12Rng| (rng.random_range(-0.1..0.1f64)).exp();
        let d = Dims3D::new(
            means[0] * scale(rng),
            means[1] * scale(rng),
            means[2] * scale(rng),
        )
        .unwrap();
        let tz = rng.random_range(tz_range.0..tz_range.1);
        if tz < 2.0 * d.h.max(d.w).max(d.l) {
            continue;
        }
        let t = Translation::new(
            rng.random_range(-0.45..0.45) * tz,
            rng.random_range(1.1..2.1),
            tz,
        );
        let ry = rng.random_range(-PI..=PI);
        let cam = transform_corners(&corners_at_origin(&d), ry, &t);
        let Ok(bbox) = projected_bbox(&cam, p) else {
            continue;
        };
        if bbox.x_min < 2.0 || bbox.y_min < 2.0 || bbox.x_max > IMG_W - 2.0 || bbox.y_max > IMG_H - 2.0
        {
            continue;
        }
        let alpha = global_to_local(ry, ray_angle(&bbox, p));
        return LabelRecord {
            class_name: name.to_string(),
            truncated: 0.0,
            occluded: 0,
            alpha,
            bbox,
            dims: [d.h, d.w, d.l],
            location: t,
            rotation_y: ry,
            score: None,
        };
    }
}

pub fn gt_box3d(r: &LabelRecord) -> Box3D {
    Box3D::from_record(r).expect("generated records have valid dims")
}

pub fn jitter_bbox(rng: &mut ChaCha12Rng, b: &Box2D, px: f64) -> Option<Box2D> {
    Box2D::new(
        b.x_min + rng.random_range(-px..=px),
        b.y_min + rng.random_range(-px..=px),
        b.x_max + rng.random_range(-px..=px),
        b.y_max + rng.random_range(-px..=px),
    )
    .ok()
}

/// Monte-Carlo IoU oracle for y-aligned rotated boxes, independent of the
/// polygon-clipping implementation.
pub fn mc_iou_3d(a: &Box3D, b: &Box3D, n: usize, seed: u64) -> f64 {
    let inside = |bx: &Box3D, x: f64, y: f64, z: f64| {
        if y > bx.location.ty || y < bx.location.ty - bx.dims.h {
            return false;
        }
        let (s, c) = bx.yaw.sin_cos();
        let dx = x - bx.location.tx;
        let dz = z - bx.location.tz;
        let lx = c * dx - s * dz;
        let lz = s * dx + c * dz;
        lx.abs() <= 0.5 * bx.dims.l && lz.abs() <= 0.5 * bx.dims.w
    };
    let reach = |bx: &Box3D| 0.5 * (bx.dims.l.powi(2) + bx.dims.w.powi(2)).sqrt();
    let x0 = (a.location.tx - reach(a)).min(b.location.tx - reach(b));
    let x1 = (a.location.tx + reach(a)).max(b.location.tx + reach(b));
    let y0 = (a.location.ty - a.dims.h).min(b.location.ty - b.dims.h);
    let y1 = a.location.ty.max(b.location.ty);
    let z0 = (a.location.tz - reach(a)).min(b.location.tz - reach(b));
    let z1 = (a.location.tz + reach(a)).max(b.location.tz + reach(b));
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (mut na, mut nb, mut nboth) = (0u64, 0u64, 0u64);
    for _ in 0..n {
        let x = rng.random_range(x0..x1);
        let y = rng.random_range(y0..y1);
        let z = rng.random_range(z0..z1);
        let ia = inside(a, x, y, z);
        let ib = inside(b, x, y, z);
        na += ia as u64;
        nb += ib as u64;
        nboth += (ia && ib) as u64;
    }
    let union = na + nb - nboth;
    if union == 0 {
        0.0
    } else {
        nboth as f64 / union as f64
    }
}

/// BEV variant of the Monte-Carlo oracle.
pub fn mc_iou_bev(a: &Box3D, b: &Box3D, n: usize, seed: u64) -> f64 {
    let inside = |bx: &Box3D, x: f64, z: f64| {
        let (s, c) = bx.yaw.sin_cos();
        let dx = x - bx.location.tx;
        let dz = z - bx.location.tz;
        let lx = c * dx - s * dz;
        let lz = s * dx + c * dz;
        lx.abs() <= 0.5 * bx.dims.l && lz.abs() <= 0.5 * bx.dims.w
    };
    let reach = |bx: &Box3D| 0.5 * (bx.dims.l.powi(2) + bx.dims.w.powi(2)).sqrt();
    let x0 = (a.location.tx - reach(a)).min(b.location.tx - reach(b));
    let x1 = (a.location.tx + reach(a)).max(b.location.tx + reach(b));
    let z0 = (a.location.tz - reach(a)).min(b.location.tz - reach(b));
    let z1 = (a.location.tz + reach(a)).max(b.location.tz + reach(b));
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (mut na, mut nb, mut nboth) = (0u64, 0u64, 0u64);
    for _ in 0..n {
        let x = rng.random_range(x0..x1);
        let z = rng.random_range(z0..z1);
        let ia = inside(a, x, z);
        let ib = inside(b, x, z);
        na += ia as u64;
        nb += ib as u64;
        nboth += (ia && ib) as u64;
    }
    let union = na + nb - nboth;
    if union == 0 {
        0.0
    } else {
        nboth as f64 / union as f64
    }
}
