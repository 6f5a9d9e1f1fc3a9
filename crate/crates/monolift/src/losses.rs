//! Differentiable encoding and loss math used around the pipeline: sin/cos
//! angle regression with a unit-norm constraint, log-scale dimension offsets
//! against per-class means, the signed translation displacement error, and
//! the volume displacement loss with analytic gradients.
//!
//! The volume displacement loss weighs each axis of the rotation-decomposed
//! displacement by the box face area swept when sliding along that axis, so
//! it approximates the displaced volume between two boxes sharing dimensions
//! and yaw.
//!
//! When these terms are combined with 2D detection objectives in a full
//! multi-task detector, the reference task weights are 1.0 (classification),
//! 2.0 (2D box), 5.0 (orientation) and 100.0 (dimensions).

use crate::geometry::{normalize_angle, rot_y, Dims3D, Translation};
use nalgebra::Vector3;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("cannot decode an angle from the zero vector")]
    ZeroVector,
    #[error("dimensions and class means must be strictly positive")]
    NonPositive,
}

/// Raw sin/cos regression outputs for a local yaw angle. A *normalized*
/// encoding satisfies `sin^2 + cos^2 = 1`; general encodings need not.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleEncoding {
    pub sin_hat: f64,
    pub cos_hat: f64,
}

impl AngleEncoding {
    pub fn new(sin_hat: f64, cos_hat: f64) -> Self {
        Self { sin_hat, cos_hat }
    }

    /// The exact (unit-norm) encoding of an angle.
    pub fn exact(alpha: f64) -> Self {
        let (s, c) = alpha.sin_cos();
        Self::new(s, c)
    }
}

/// Logarithmic dimension offsets relative to a class mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimOffsets {
    pub dh: f64,
    pub dw: f64,
    pub dl: f64,
}

/// Per-class mean dimensions in meters, keyed by class name.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMeans {
    means: BTreeMap<String, Dims3D>,
}

impl ClassMeans {
    pub fn empty() -> Self {
        Self {
            means: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, class: &str, dims: Dims3D) {
        self.means.insert(class.to_string(), dims);
    }

    pub fn get(&self, class: &str) -> Option<&Dims3D> {
        self.means.get(class)
    }
}

impl Default for ClassMeans {
    /// KITTI training-set means for the three evaluated classes.
    fn default() -> Self {
        let mut m = Self::empty();
        m.insert("Car", Dims3D::new(1.53, 1.63, 3.88).unwrap());
        m.insert("Pedestrian", Dims3D::new(1.76, 0.66, 0.84).unwrap());
        m.insert("Cyclist", Dims3D::new(1.74, 0.60, 1.76).unwrap());
        m
    }
}

/// Squared-error angle regression loss with a unit-norm constraint term:
/// `(sin a - s)^2 + (cos a - c)^2 + (1 - (s^2 + c^2))^2`.
///
/// Returns the loss and its gradient with respect to `(sin_hat, cos_hat)`.
pub fn angle_loss(pred: &AngleEncoding, alpha_gt: f64) -> (f64, [f64; 2]) {
    let (s, c) = (pred.sin_hat, pred.cos_hat);
    let (sg, cg) = alpha_gt.sin_cos();
    let norm_defect = 1.0 - (s * s + c * c);
    let loss = (sg - s).powi(2) + (cg - c).powi(2) + norm_defect.powi(2);
    let d_sin = -2.0 * (sg - s) - 4.0 * s * norm_defect;
    let d_cos = -2.0 * (cg - c) - 4.0 * c * norm_defect;
    (loss, [d_sin, d_cos])
}

/// Recovers the angle from a sin/cos encoding: `atan2(sin_hat, cos_hat)`.
pub fn decode_angle(pred: &AngleEncoding) -> Result<f64, LossError> {
    if pred.sin_hat == 0.0 && pred.cos_hat == 0.0 {
        return Err(LossError::ZeroVector);
    }
    Ok(normalize_angle(pred.sin_hat.atan2(pred.cos_hat)))
}

/// Componentwise log-scale offsets `ln(d / mean)`.
pub fn encode_dims(d: &Dims3D, mean: &Dims3D) -> Result<DimOffsets, LossError> {
    let vals = [d.h, d.w, d.l, mean.h, mean.w, mean.l];
    if vals.iter().any(|v| *v <= 0.0 || !v.is_finite()) {
        return Err(LossError::NonPositive);
    }
    Ok(DimOffsets {
        dh: (d.h / mean.h).ln(),
        dw: (d.w / mean.w).ln(),
        dl: (d.l / mean.l).ln(),
    })
}

/// Exact exponential inverse of [`encode_dims`].
pub fn decode_dims(off: &DimOffsets, mean: &Dims3D) -> Result<Dims3D, LossError> {
    if [mean.h, mean.w, mean.l].iter().any(|v| *v <= 0.0) {
        return Err(LossError::NonPositive);
    }
    Dims3D::new(
        off.dh.exp() * mean.h,
        off.dw.exp() * mean.w,
        off.dl.exp() * mean.l,
    )
    .map_err(|_| LossError::NonPositive)
}

/// Signed translation displacement error: componentwise `t_pred - t_gt`.
pub fn stde(t_pred: &Translation, t_gt: &Translation) -> Vector3<f64> {
    t_pred.as_vector() - t_gt.as_vector()
}

/// Decomposes a displacement onto the object's local axes: `R_y(a_G) dt`.
pub fn rotate_displacement(dt: &Vector3<f64>, alpha_g: f64) -> Vector3<f64> {
    rot_y(alpha_g) * dt
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Volume displacement loss between two boxes sharing `d` and `alpha_g`:
/// each component of the rotated displacement is weighted by the face area
/// orthogonal to it,
/// `L = w*h*|dx_a| + w*l*|dy_a| + h*l*|dz_a|`.
///
/// Returns the loss and its gradient with respect to `t_pred`, using the
/// `sign(0) = 0` subgradient at the kinks.
pub fn vdl(
    t_pred: &Translation,
    t_gt: &Translation,
    d: &Dims3D,
    alpha_g: f64,
) -> (f64, Vector3<f64>) {
    let rot = rot_y(alpha_g);
    let disp = rot * stde(t_pred, t_gt);
    let face_areas = Vector3::new(d.w * d.h, d.w * d.l, d.h * d.l);
    let loss = face_areas.x * disp.x.abs() + face_areas.y * disp.y.abs() + face_areas.z * disp.z.abs();
    let grad = rot.transpose() * face_areas.component_mul(&disp.map(sign0));
    (loss, grad)
}
