//! Monocular 3D object box toolkit.
//!
//! Lifts 2D detections to 3D boxes through a closed-form camera-projection
//! constraint solver, refines the recovered translation with a small
//! regression network trained under a volume displacement loss, and scores
//! results with KITTI-style 3D / bird's-eye-view metrics.
//!
//! Pipeline stages:
//!
//! 1. **Geometry** ([`geometry`]) - camera frame conventions, yaw rotations,
//!    box corner reconstruction and projection.
//! 2. **Lift** ([`lift`]) - enumerates the 64 side-to-corner constraint
//!    configurations, solves each over-constrained linear system for the
//!    translation, and keeps the candidate with the best reprojection IoU.
//! 3. **Refinement** ([`shiftnet`]) - a fully-connected network with explicit
//!    forward/backward passes that maps the lift output plus detection
//!    quantities to an improved translation.
//! 4. **Evaluation** ([`eval`]) - rotated-box IoU and average precision with
//!    KITTI difficulty filtering.
//!
//! [`kitti`] provides the label/calibration parsers and the synthetic
//! perturbation generator used to build training data; [`cli`] wires the
//! stages into the `monolift` command-line tool.

pub mod cli;
pub mod eval;
pub mod geometry;
pub mod kitti;
pub mod lift;
pub mod losses;
pub mod shiftnet;

pub use geometry::{Box2D, CameraMatrix, Corners3D, Dims3D, OrientationY, Translation};
pub use lift::{lift, LiftSolution};
pub use shiftnet::{Mlp, Sample, TrainConfig};
