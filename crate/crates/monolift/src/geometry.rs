//! Core 3D/2D geometric types and transforms.
//!
//! Conventions follow the KITTI camera frame: x right, y down, z forward.
//! Object boxes are anchored at the bottom-face center, with local x along
//! the box length and local z along the width; yaw is measured about the
//! camera y-axis. Angles are always normalized to `(-pi, pi]`, matching the
//! KITTI `alpha` / `rotation_y` ranges.
//!
//! All operations here are pure functions on immutable values.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use std::f64::consts::PI;
use thiserror::Error;

/// Projective depths below this magnitude count as lying on the principal plane.
pub const MIN_PROJECTIVE_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("camera matrix entries must be finite")]
    NonFiniteCamera,
    #[error("camera matrix left 3x3 block is singular")]
    SingularCamera,
    #[error("2D box requires finite coordinates with x_min < x_max and y_min < y_max")]
    InvalidBox2D,
    #[error("box dimensions must be finite and positive")]
    InvalidDims,
    #[error("point lies on the camera principal plane")]
    DegenerateDepth,
    #[error("corner {index} is behind the camera (depth {depth})")]
    BehindCamera { index: usize, depth: f64 },
}

/// Row-major 3x4 projection matrix mapping homogeneous camera coordinates to
/// homogeneous pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraMatrix {
    m: Matrix3x4<f64>,
}

impl CameraMatrix {
    /// Builds a camera matrix from 12 row-major entries. The left 3x3 block
    /// must be invertible.
    pub fn from_row_major(vals: [f64; 12]) -> Result<Self, GeometryError> {
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFiniteCamera);
        }
        let m = Matrix3x4::from_row_slice(&vals);
        let left: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        if left.determinant().abs() < 1e-12 {
            return Err(GeometryError::SingularCamera);
        }
        Ok(Self { m })
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.m
    }

    pub fn row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                out[r * 4 + c] = self.m[(r, c)];
            }
        }
        out
    }

    /// Left 3x3 block (intrinsics times rotation).
    pub fn left_block(&self) -> Matrix3<f64> {
        self.m.fixed_view::<3, 3>(0, 0).into()
    }

    /// Horizontal focal length, read directly from the first row.
    pub fn focal_u(&self) -> f64 {
        self.m[(0, 0)]
    }

    /// Horizontal principal point, read directly from the first row.
    pub fn center_u(&self) -> f64 {
        self.m[(0, 2)]
    }
}

/// Axis-aligned image rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Box2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let all_finite =
            x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite();
        if !all_finite || x_min >= x_max || y_min >= y_max {
            return Err(GeometryError::InvalidBox2D);
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Horizontal center in pixels.
    pub fn center_u(&self) -> f64 {
        0.5 * (self.x_min + self.x_max)
    }
}

/// Object dimensions in meters: height, width, length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dims3D {
    pub h: f64,
    pub w: f64,
    pub l: f64,
}

impl Dims3D {
    pub fn new(h: f64, w: f64, l: f64) -> Result<Self, GeometryError> {
        let ok = [h, w, l].iter().all(|v| v.is_finite() && *v > 0.0);
        if !ok {
            return Err(GeometryError::InvalidDims);
        }
        Ok(Self { h, w, l })
    }
}

/// Translation of the box bottom-face center in camera coordinates, meters.
///
/// A physically valid translation has `tz > 0`; that check belongs to
/// consumers, not the constructor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Translation {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl Translation {
    pub fn new(tx: f64, ty: f64, tz: f64) -> Self {
        Self { tx, ty, tz }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.tx, self.ty, self.tz)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Yaw observed relative to the camera-to-object ray (`alpha_local`), yaw in
/// camera coordinates (`alpha_global`), and the ray angle linking the two:
/// `alpha_global = alpha_local - theta_ray`, all normalized to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationY {
    alpha_local: f64,
    alpha_global: f64,
    theta_ray: f64,
}

impl OrientationY {
    pub fn from_local(alpha_local: f64, theta_ray: f64) -> Self {
        let alpha_local = normalize_angle(alpha_local);
        let theta_ray = normalize_angle(theta_ray);
        Self {
            alpha_local,
            alpha_global: local_to_global(alpha_local, theta_ray),
            theta_ray,
        }
    }

    pub fn from_global(alpha_global: f64, theta_ray: f64) -> Self {
        let alpha_global = normalize_angle(alpha_global);
        let theta_ray = normalize_angle(theta_ray);
        Self {
            alpha_local: global_to_local(alpha_global, theta_ray),
            alpha_global,
            theta_ray,
        }
    }

    pub fn alpha_local(&self) -> f64 {
        self.alpha_local
    }

    pub fn alpha_global(&self) -> f64 {
        self.alpha_global
    }

    pub fn theta_ray(&self) -> f64 {
        self.theta_ray
    }
}

/// Coordinate frame a corner set lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    ObjectLocal,
    Camera,
}

/// Ordered 8-corner representation of a 3D box.
///
/// Indices 0..3 walk the bottom ring counter-clockwise when viewed from
/// above; indices 4..7 are the tops of the same ring (corner `i + 4` sits
/// directly above corner `i`). Vertical edge `i` joins corners `i` and
/// `i + 4`; its diagonal opposite is edge `(i + 2) % 4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners3D {
    pub points: [Vector3<f64>; 8],
    pub frame: Frame,
}

/// Normalizes an angle to `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Rotation about the camera y-axis: `x' = x cos a + z sin a`,
/// `z' = -x sin a + z cos a`.
pub fn rot_y(alpha: f64) -> Matrix3<f64> {
    let (s, c) = alpha.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Reconstructs the 8 box corners in the object-local frame: origin at the
/// bottom-face center, so the corner coordinates are `{+-l/2} x {0, -h} x {+-w/2}`
/// and the centroid sits at `(0, -h/2, 0)`.
pub fn corners_at_origin(d: &Dims3D) -> Corners3D {
    let hx = 0.5 * d.l;
    let hz = 0.5 * d.w;
    let ring = [(hx, hz), (-hx, hz), (-hx, -hz), (hx, -hz)];
    let mut points = [Vector3::zeros(); 8];
    for (i, &(x, z)) in ring.iter().enumerate() {
        points[i] = Vector3::new(x, 0.0, z);
        points[i + 4] = Vector3::new(x, -d.h, z);
    }
    Corners3D {
        points,
        frame: Frame::ObjectLocal,
    }
}

/// Maps object-local corners into the camera frame: `x_cam = R_y(a_G) x + t`.
pub fn transform_corners(c: &Corners3D, alpha_g: f64, t: &Translation) -> Corners3D {
    assert_eq!(c.frame, Frame::ObjectLocal, "corners must be object-local");
    let rot = rot_y(alpha_g);
    let tv = t.as_vector();
    let mut points = [Vector3::zeros(); 8];
    for (out, p) in points.iter_mut().zip(c.points.iter()) {
        *out = rot * p + tv;
    }
    Corners3D {
        points,
        frame: Frame::Camera,
    }
}

/// Projective depth of a camera-frame point: the third homogeneous
/// coordinate of `P [x; 1]`.
pub fn projective_depth(pt: &Vector3<f64>, p: &CameraMatrix) -> f64 {
    let m = p.matrix();
    m[(2, 0)] * pt.x + m[(2, 1)] * pt.y + m[(2, 2)] * pt.z + m[(2, 3)]
}

/// Projects a camera-frame point to pixels.
pub fn project(pt: &Vector3<f64>, p: &CameraMatrix) -> Result<[f64; 2], GeometryError> {
    let uvw = p.matrix() * Vector4::new(pt.x, pt.y, pt.z, 1.0);
    if uvw.z.abs() < MIN_PROJECTIVE_DEPTH {
        return Err(GeometryError::DegenerateDepth);
    }
    Ok([uvw.x / uvw.z, uvw.y / uvw.z])
}

/// Axis-aligned bounding box of the 8 projected corners. Every corner must
/// have positive projective depth.
pub fn projected_bbox(c: &Corners3D, p: &CameraMatrix) -> Result<Box2D, GeometryError> {
    let mut x_min = f64::INFINITY;
    let mut y_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (index, pt) in c.points.iter().enumerate() {
        let depth = projective_depth(pt, p);
        if depth <= 0.0 {
            return Err(GeometryError::BehindCamera { index, depth });
        }
        let px = project(pt, p)?;
        x_min = x_min.min(px[0]);
        y_min = y_min.min(px[1]);
        x_max = x_max.max(px[0]);
        y_max = y_max.max(px[1]);
    }
    Box2D::new(x_min, y_min, x_max, y_max)
}

/// Horizontal angle of the ray from the camera origin through the 2D box
/// center, from the intrinsics embedded in `P`'s first row. The vertical
/// image coordinate plays no part: rotation is about y only.
pub fn ray_angle(b: &Box2D, p: &CameraMatrix) -> f64 {
    normalize_angle((b.center_u() - p.center_u()).atan2(p.focal_u()))
}

/// `alpha_global = alpha_local - theta_ray`, normalized.
pub fn local_to_global(alpha_l: f64, theta_ray: f64) -> f64 {
    normalize_angle(alpha_l - theta_ray)
}

/// Inverse of [`local_to_global`].
pub fn global_to_local(alpha_g: f64, theta_ray: f64) -> f64 {
    normalize_angle(alpha_g + theta_ray)
}

/// Intersection-over-union of two axis-aligned boxes; 0 when disjoint.
pub fn iou_2d(a: &Box2D, b: &Box2D) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
