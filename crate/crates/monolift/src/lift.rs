//! Closed-form recovery of the 3D translation from a 2D box.
//!
//! A box with known dimensions and yaw, projected through a known camera
//! matrix, must fit tightly inside its 2D detection: two of the four
//! vertical 3D edges pin the vertical 2D sides, and one top / one bottom
//! corner pin the horizontal sides. With the second vertical edge forced to
//! be diagonally opposite the first, 4 x 1 x 4 x 4 = 64 side-to-corner
//! assignments remain. Each assignment yields four linear constraints on the
//! translation; the least-squares minimizer of the over-constrained system
//! is the candidate translation, and the candidate whose reprojected box
//! best overlaps the input 2D box wins.

use crate::geometry::{
    corners_at_origin, iou_2d, local_to_global, projected_bbox, projective_depth, ray_angle,
    rot_y, transform_corners, Box2D, CameraMatrix, Dims3D, Translation,
};
use nalgebra::{Matrix3, Matrix4x3, RowVector3, Vector3, Vector4};
use thiserror::Error;

/// Candidate translations closer than this are physically implausible.
pub const MIN_TZ: f64 = 0.5;
/// Candidates with any corner at projective depth below this are discarded.
pub const MIN_CORNER_DEPTH: f64 = 0.1;
/// Reciprocal condition-number floor: sigma_min must exceed
/// sigma_max times this, i.e. cond(A^T A) stays below 1e12.
const RCOND_LIMIT: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiftError {
    #[error("constraint system is numerically singular")]
    SingularSystem,
    #[error("all 64 configurations were discarded")]
    NoValidSolution,
}

/// One assignment of 3D edges/corners to the four 2D box sides.
///
/// `xmin_edge` indexes the vertical edge (0..3, bottom-corner index) pinned
/// to the left 2D side; `xmax_edge` is forced to its diagonal opposite.
/// `ymin_corner` is one of the four top corners (4..7) pinned to the upper
/// 2D side and `ymax_corner` one of the four bottom corners (0..3) pinned to
/// the lower side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Configuration {
    pub xmin_edge: usize,
    pub xmax_edge: usize,
    pub ymin_corner: usize,
    pub ymax_corner: usize,
}

/// One linear constraint `a . t = b` on the translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintRow {
    pub a: Vector3<f64>,
    pub b: f64,
}

/// Best-scoring lift candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftSolution {
    pub translation: Translation,
    pub configuration: Configuration,
    /// IoU between the input box and the reprojection of the solved box.
    pub reprojection_iou: f64,
    /// Euclidean norm of the constraint residual at the solution.
    pub residual_norm: f64,
}

/// All 64 side-to-corner assignments, in a fixed deterministic order.
pub fn enumerate_configurations() -> Vec<Configuration> {
    let mut out = Vec::with_capacity(64);
    for xmin_edge in 0..4 {
        for ymin_corner in 4..8 {
            for ymax_corner in 0..4 {
                out.push(Configuration {
                    xmin_edge,
                    xmax_edge: (xmin_edge + 2) % 4,
                    ymin_corner,
                    ymax_corner,
                });
            }
        }
    }
    out
}

/// Which pixel coordinate a constraint pins.
#[derive(Clone, Copy)]
enum Axis {
    U,
    V,
}

/// Builds one row of the constraint system from the corner assigned to a 2D
/// side. With `M = P [[I, R x]; [0, 1]]` (a 3x4 matrix built from that
/// corner), a u-side gives `a = m_1 - m_3 u, b = m_34 u - m_14` and a v-side
/// the same pattern on row 2.
fn constraint_row(
    corner_local: &Vector3<f64>,
    axis: Axis,
    side: f64,
    rot: &Matrix3<f64>,
    p: &CameraMatrix,
) -> ConstraintRow {
    let m = p.matrix();
    // M's left 3x3 block equals P's; only the fourth column depends on the corner.
    let m4 = p.left_block() * (rot * corner_local) + m.column(3);
    let row_i = match axis {
        Axis::U => 0,
        Axis::V => 1,
    };
    let a = Vector3::new(m[(row_i, 0)], m[(row_i, 1)], m[(row_i, 2)])
        - Vector3::new(m[(2, 0)], m[(2, 1)], m[(2, 2)]) * side;
    let b = m4.z * side - m4[row_i];
    ConstraintRow { a, b }
}

/// Builds the four constraint rows for one configuration, ordered
/// (x_min, y_min, x_max, y_max). Horizontal sides use the bottom corner of
/// the assigned vertical edge; both corners of a vertical edge share x and z
/// in the object frame, so either is valid and the bottom one is the fixed
/// choice.
pub fn build_system(
    cfg: &Configuration,
    b2d: &Box2D,
    d: &Dims3D,
    alpha_g: f64,
    p: &CameraMatrix,
) -> [ConstraintRow; 4] {
    let corners = corners_at_origin(d);
    let rot = rot_y(alpha_g);
    [
        constraint_row(&corners.points[cfg.xmin_edge], Axis::U, b2d.x_min, &rot, p),
        constraint_row(&corners.points[cfg.ymin_corner], Axis::V, b2d.y_min, &rot, p),
        constraint_row(&corners.points[cfg.xmax_edge], Axis::U, b2d.x_max, &rot, p),
        constraint_row(&corners.points[cfg.ymax_corner], Axis::V, b2d.y_max, &rot, p),
    ]
}

fn stack_system(rows: &[ConstraintRow; 4]) -> (Matrix4x3<f64>, Vector4<f64>) {
    let a = Matrix4x3::from_rows(&[
        RowVector3::new(rows[0].a.x, rows[0].a.y, rows[0].a.z),
        RowVector3::new(rows[1].a.x, rows[1].a.y, rows[1].a.z),
        RowVector3::new(rows[2].a.x, rows[2].a.y, rows[2].a.z),
        RowVector3::new(rows[3].a.x, rows[3].a.y, rows[3].a.z),
    ]);
    let b = Vector4::new(rows[0].b, rows[1].b, rows[2].b, rows[3].b);
    (a, b)
}

/// Least-squares minimizer of `||A t - b||`. The closed form is
/// `(A^T A)^{-1} A^T b`; an SVD solve computes the same minimizer with
/// better conditioning, and one step of iterative refinement keeps the
/// normal-equations residual small when the box is nearly degenerate (a
/// distant object subtends a few pixels, making rows almost collinear).
pub fn solve_normal_equations(rows: &[ConstraintRow; 4]) -> Result<Translation, LiftError> {
    let (a, b) = stack_system(rows);
    let svd = a.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_min > s_max * RCOND_LIMIT) {
        return Err(LiftError::SingularSystem);
    }
    let mut t = svd.solve(&b, 0.0).map_err(|_| LiftError::SingularSystem)?;
    for _ in 0..2 {
        let r = b - a * t;
        let dt = svd.solve(&r, 0.0).map_err(|_| LiftError::SingularSystem)?;
        t += dt;
    }
    Ok(Translation::new(t[(0, 0)], t[(1, 0)], t[(2, 0)]))
}

fn residual_norm(rows: &[ConstraintRow; 4], t: &Translation) -> f64 {
    let tv = t.as_vector();
    rows.iter()
        .map(|r| (r.a.dot(&tv) - r.b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Recovers the translation for a 2D box with known dimensions and local
/// yaw: solves all 64 configurations, discards candidates behind or too
/// close to the camera, and returns the one whose reprojected box maximizes
/// 2D IoU with the input. Ties fall to the smaller residual, then to the
/// earlier configuration.
pub fn lift(
    b2d: &Box2D,
    d: &Dims3D,
    alpha_l: f64,
    p: &CameraMatrix,
) -> Result<LiftSolution, LiftError> {
    let theta_ray = ray_angle(b2d, p);
    let alpha_g = local_to_global(alpha_l, theta_ray);
    let local = corners_at_origin(d);
    let mut best: Option<LiftSolution> = None;
    for cfg in enumerate_configurations() {
        let rows = build_system(&cfg, b2d, d, alpha_g, p);
        let Ok(t) = solve_normal_equations(&rows) else {
            continue;
        };
        if !(t.tz > MIN_TZ) {
            continue;
        }
        let cam = transform_corners(&local, alpha_g, &t);
        if cam
            .points
            .iter()
            .any(|pt| !(projective_depth(pt, p) > MIN_CORNER_DEPTH))
        {
            continue;
        }
        let Ok(reproj) = projected_bbox(&cam, p) else {
            continue;
        };
        let iou = iou_2d(b2d, &reproj);
        let residual = residual_norm(&rows, &t);
        let better = match &best {
            None => true,
            Some(t_best) => {
                iou > t_best.reprojection_iou
                    || (iou == t_best.reprojection_iou && residual < t_best.residual_norm)
            }
        };
        if better {
            best = Some(LiftSolution {
                translation: t,
                configuration: cfg,
                reprojection_iou: iou,
                residual_norm: residual,
            });
        }
    }
    best.ok_or(LiftError::NoValidSolution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{iou_3d, Box3D};
    
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use std::collections::HashSet;
    use std::f64::consts::PI;

    const KITTI_P2: [f64; 12] = [
        721.5377, 0.0, 609.5593, 44.85728, 0.0, 721.5377, 172.854, 0.2163791, 0.0, 0.0, 1.0,
        0.002745884,
    ];

    fn kitti_cam() -> CameraMatrix {
        CameraMatrix::from_row_major(KITTI_P2).unwrap()
    }

    /// Forward-projection oracle: a ground-truth box, its exact projected
    /// bbox, and the local angle an annotator would derive from it.
    pub(crate) fn synthesize(
        d: &Dims3D,
        ry: f64,
        t: &Translation,
        p: &CameraMatrix,
    ) -> Option<(Box2D, f64)> {
        let cam = transform_corners(&corners_at_origin(d), ry, t);
        let bbox = projected_bbox(&cam, p).ok()?;
        let alpha_l = crate::geometry::global_to_local(ry, ray_angle(&bbox, p));
        Some((bbox, alpha_l))
    }

    fn sample_object(rng: &mut ChaCha12Rng, p: &CameraMatrix) -> (Dims3D, f64, Translation, Box2D, f64) {
        loop {
            let class = rng.random_range(0..3);
            let (mh, mw, ml) = match class {
                0 => (1.53, 1.63, 3.88),
                1 => (1.76, 0.66, 0.84),
                _ => (1.74, 0.60, 1.76),
            };
            let scale = |rng: &mut ChaCha12Rng| (rng.random_range(-0.1..0.1f64)).exp();
            let d = Dims3D::new(mh * scale(rng), mw * scale(rng), ml * scale(rng)).unwrap();
            let tz = rng.random_range(5.0..60.0);
            let t = Translation::new(
                rng.random_range(-0.5..0.5) * tz,
                rng.random_range(1.0..2.2),
                tz,
            );
            if t.tz < 2.0 * d.h.max(d.w).max(d.l) {
                continue;
            }
            let ry = rng.random_range(-PI..=PI);
            let Some((bbox, alpha_l)) = synthesize(&d, ry, &t, p) else {
                continue;
            };
            // keep only untruncated objects
            if bbox.x_min < 0.0 || bbox.y_min < 0.0 || bbox.x_max > 1242.0 || bbox.y_max > 375.0 {
                continue;
            }
            return (d, ry, t, bbox, alpha_l);
        }
    }

    fn gt_box(d: &Dims3D, ry: f64, t: &Translation) -> Box3D {
        Box3D {
            dims: *d,
            location: *t,
            yaw: ry,
        }
    }

    #[test]
    fn sixty_four_distinct_configurations() {
        let cfgs = enumerate_configurations();
        assert_eq!(cfgs.len(), 64);
        let unique: HashSet<_> = cfgs
            .iter()
            .map(|c| (c.xmin_edge, c.xmax_edge, c.ymin_corner, c.ymax_corner))
            .collect();
        assert_eq!(unique.len(), 64);
        for c in &cfgs {
            assert_eq!(c.xmax_edge, (c.xmin_edge + 2) % 4, "edges must be diagonal");
            assert!((4..8).contains(&c.ymin_corner));
            assert!((0..4).contains(&c.ymax_corner));
        }
        for edge in 0..4 {
            assert_eq!(cfgs.iter().filter(|c| c.xmin_edge == edge).count(), 16);
        }
    }

    #[test]
    fn build_system_zero_fourth_column_zero_corner() {
        let p = CameraMatrix::from_row_major([
            700.0, 0.0, 320.0, 0.0, 0.0, 700.0, 240.0, 0.0, 0.0, 0.0, 1.0, 0.0,
        ])
        .unwrap();
        let zero = Vector3::zeros();
        let rot = rot_y(0.7);
        for (axis, side) in [(Axis::U, 123.0), (Axis::V, -45.0)] {
            let row = constraint_row(&zero, axis, side, &rot, &p);
            assert_eq!(row.b, 0.0);
        }
    }

    #[test]
    fn build_system_rows_are_independent() {
        let p = kitti_cam();
        let d = Dims3D::new(1.5, 1.6, 3.9).unwrap();
        let cfg = enumerate_configurations()[10];
        let b1 = Box2D::new(100.0, 120.0, 300.0, 240.0).unwrap();
        let b2 = Box2D::new(100.0, 150.0, 300.0, 240.0).unwrap(); // only y_min differs
        let r1 = build_system(&cfg, &b1, &d, 0.4, &p);
        let r2 = build_system(&cfg, &b2, &d, 0.4, &p);
        assert_eq!(r1[0], r2[0], "x_min row must not change");
        assert_eq!(r1[2], r2[2], "x_max row must not change");
        assert_ne!(r1[1], r2[1]);
        assert_eq!(r1[3], r2[3]);
    }

    #[test]
    fn build_system_exact_at_true_translation() {
        // rows evaluated at the true translation must be consistent when the
        // bbox is the exact projection under the chosen configuration
        let p = kitti_cam();
        let d = Dims3D::new(1.5, 1.6, 3.9).unwrap();
        let ry = 0.3;
        let t = Translation::new(2.0, 1.6, 14.0);
        let cam = transform_corners(&corners_at_origin(&d), ry, &t);

        // determine which corner actually realizes each bbox side
        let projected: Vec<[f64; 2]> = cam
            .points
            .iter()
            .map(|pt| crate::geometry::project(pt, &p).unwrap())
            .collect();
        let bbox = projected_bbox(&cam, &p).unwrap();
        let argmin_u = (0..8)
            .min_by(|&i, &j| projected[i][0].total_cmp(&projected[j][0]))
            .unwrap();
        let argmax_u = (0..8)
            .max_by(|&i, &j| projected[i][0].total_cmp(&projected[j][0]))
            .unwrap();
        let argmin_v = (0..8)
            .min_by(|&i, &j| projected[i][1].total_cmp(&projected[j][1]))
            .unwrap();
        let argmax_v = (0..8)
            .max_by(|&i, &j| projected[i][1].total_cmp(&projected[j][1]))
            .unwrap();
        let cfg = Configuration {
            xmin_edge: argmin_u % 4,
            xmax_edge: argmax_u % 4,
            ymin_corner: argmin_v,
            ymax_corner: argmax_v,
        };
        // for this pose the extreme edges are diagonal, as assumed
        assert_eq!(cfg.xmax_edge, (cfg.xmin_edge + 2) % 4);
        assert!(cfg.ymin_corner >= 4 && cfg.ymax_corner < 4);

        let rows = build_system(&cfg, &bbox, &d, ry, &p);
        let tv = t.as_vector();
        for row in &rows {
            assert!((row.a.dot(&tv) - row.b).abs() < 1e-6);
        }
    }

    #[test]
    fn solve_identity_padded_system() {
        let rows = [
            ConstraintRow { a: Vector3::new(1.0, 0.0, 0.0), b: 1.0 },
            ConstraintRow { a: Vector3::new(0.0, 1.0, 0.0), b: 2.0 },
            ConstraintRow { a: Vector3::new(0.0, 0.0, 1.0), b: 3.0 },
            ConstraintRow { a: Vector3::zeros(), b: 0.0 },
        ];
        let t = solve_normal_equations(&rows).unwrap();
        assert_relative_eq!(t.tx, 1.0, epsilon = 1e-12);
        assert_relative_eq!(t.ty, 2.0, epsilon = 1e-12);
        assert_relative_eq!(t.tz, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn solve_rank_deficient_system() {
        // all rows confined to a 2D subspace
        let rows = [
            ConstraintRow { a: Vector3::new(1.0, 0.0, 0.0), b: 1.0 },
            ConstraintRow { a: Vector3::new(2.0, 0.0, 0.0), b: 2.0 },
            ConstraintRow { a: Vector3::new(0.0, 0.0, 1.0), b: 3.0 },
            ConstraintRow { a: Vector3::new(3.0, 0.0, 0.0), b: 3.0 },
        ];
        assert_eq!(
            solve_normal_equations(&rows).unwrap_err(),
            LiftError::SingularSystem
        );
    }

    /// True corner-to-side assignment of a pose, when it is representable
    /// (horizontal extremes on diagonally opposite vertical edges).
    fn true_configuration(
        d: &Dims3D,
        ry: f64,
        t: &Translation,
        p: &CameraMatrix,
    ) -> Option<Configuration> {
        let cam = transform_corners(&corners_at_origin(d), ry, t);
        let proj: Vec<[f64; 2]> = cam
            .points
            .iter()
            .map(|pt| crate::geometry::project(pt, p).unwrap())
            .collect();
        let amin_u = (0..8).min_by(|&a, &b| proj[a][0].total_cmp(&proj[b][0]))?;
        let amax_u = (0..8).max_by(|&a, &b| proj[a][0].total_cmp(&proj[b][0]))?;
        let amin_v = (0..8).min_by(|&a, &b| proj[a][1].total_cmp(&proj[b][1]))?;
        let amax_v = (0..8).max_by(|&a, &b| proj[a][1].total_cmp(&proj[b][1]))?;
        let diagonal = (amin_u % 4 + 2) % 4 == amax_u % 4;
        (diagonal && amin_v >= 4 && amax_v < 4).then_some(Configuration {
            xmin_edge: amin_u % 4,
            xmax_edge: amax_u % 4,
            ymin_corner: amin_v,
            ymax_corner: amax_v,
        })
    }

    #[test]
    fn solve_recovers_translation_from_exact_system() {
        // rows built from the pose's true corner-to-side assignment are
        // consistent, so the least-squares solve must return the exact
        // translation
        let p = kitti_cam();
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let mut checked = 0;
        while checked < 100 {
            let (d, ry, t, bbox, _alpha_l) = sample_object(&mut rng, &p);
            let Some(cfg) = true_configuration(&d, ry, &t, &p) else {
                continue;
            };
            checked += 1;
            let rows = build_system(&cfg, &bbox, &d, ry, &p);
            let got = solve_normal_equations(&rows).unwrap();
            assert!(
                (got.as_vector() - t.as_vector()).norm() < 1e-4,
                "expected {:?}, got {:?} (ry {ry})",
                t,
                got
            );
        }
    }

    #[test]
    fn solve_satisfies_normal_equations() {
        let p = kitti_cam();
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        for _ in 0..200 {
            let (d, _ry, _t, bbox, alpha_l) = sample_object(&mut rng, &p);
            let alpha_g = local_to_global(alpha_l, ray_angle(&bbox, &p));
            let cfg = enumerate_configurations()[rng.random_range(0..64)];
            let rows = build_system(&cfg, &bbox, &d, alpha_g, &p);
            let Ok(t) = solve_normal_equations(&rows) else {
                continue;
            };
            let (a, b) = stack_system(&rows);
            let lhs = (a.transpose() * (a * t.as_vector() - b)).norm();
            let rhs = 1e-6 * (a.transpose() * b).norm() + 1e-9;
            assert!(lhs < rhs, "normal equations violated: {lhs} >= {rhs}");
        }
    }

    #[test]
    fn lift_exact_inputs_recover_high_iou() {
        // poses whose horizontal extremes sit on diagonally opposite edges
        // recover essentially exactly; the remaining few percent are
        // adjacent-edge poses outside the configuration family (see
        // diag_oracle_selector_bound), which land lower
        let p = kitti_cam();
        let mut rng = ChaCha12Rng::seed_from_u64(47);
        let mut good = 0;
        let mut representable = 0;
        let mut representable_good = 0;
        let n = 300;
        for _ in 0..n {
            let (d, ry, t, bbox, alpha_l) = sample_object(&mut rng, &p);
            let sol = lift(&bbox, &d, alpha_l, &p).unwrap();
            let iou = iou_3d(
                &gt_box(&d, ry, &sol.translation),
                &gt_box(&d, ry, &t),
            );
            if iou >= 0.95 {
                good += 1;
            }
            if true_configuration(&d, ry, &t, &p).is_some() {
                representable += 1;
                if iou >= 0.95 {
                    representable_good += 1;
                }
            }
        }
        assert!(good as f64 >= 0.95 * n as f64, "only {good}/{n} recovered");
        assert_eq!(
            representable, representable_good,
            "every representable pose must recover"
        );
        assert!(representable as f64 >= 0.9 * n as f64);
    }

    #[test]
    fn lift_winner_dominates_candidates() {
        // re-run the candidate scan and verify no candidate beats the winner
        let p = kitti_cam();
        let mut rng = ChaCha12Rng::seed_from_u64(53);
        for _ in 0..20 {
            let (d, _ry, _t, bbox, alpha_l) = sample_object(&mut rng, &p);
            let sol = lift(&bbox, &d, alpha_l, &p).unwrap();
            let theta = ray_angle(&bbox, &p);
            let alpha_g = local_to_global(alpha_l, theta);
            let local = corners_at_origin(&d);
            for cfg in enumerate_configurations() {
                let rows = build_system(&cfg, &bbox, &d, alpha_g, &p);
                let Ok(t) = solve_normal_equations(&rows) else {
                    continue;
                };
                if !(t.tz > MIN_TZ) {
                    continue;
                }
                let cam = transform_corners(&local, alpha_g, &t);
                if cam
                    .points
                    .iter()
                    .any(|pt| !(projective_depth(pt, &p) > MIN_CORNER_DEPTH))
                {
                    continue;
                }
                let Ok(reproj) = projected_bbox(&cam, &p) else {
                    continue;
                };
                assert!(iou_2d(&bbox, &reproj) <= sol.reprojection_iou + 1e-15);
            }
        }
    }

    #[test]
    fn lift_is_deterministic() {
        let p = kitti_cam();
        let d = Dims3D::new(1.5, 1.6, 3.9).unwrap();
        let bbox = Box2D::new(400.0, 150.0, 560.0, 230.0).unwrap();
        let a = lift(&bbox, &d, 0.4, &p).unwrap();
        let b = lift(&bbox, &d, 0.4, &p).unwrap();
        assert_eq!(a, b);
        assert!(a.translation.tz > 0.0);
        assert!((0.0..=1.0).contains(&a.reprojection_iou));
    }

    #[test]
    fn lift_noisy_boxes_degrade_sharply() {
        let p = kitti_cam();
        let mut rng = ChaCha12Rng::seed_from_u64(59);
        let n = 300;
        let mut clean_good = 0;
        let mut noisy_good = 0;
        for _ in 0..n {
            let (d, ry, t, bbox, alpha_l) = sample_object(&mut rng, &p);
            let truth = gt_box(&d, ry, &t);
            if let Ok(sol) = lift(&bbox, &d, alpha_l, &p) {
                if iou_3d(&gt_box(&d, ry, &sol.translation), &truth) >= 0.7 {
                    clean_good += 1;
                }
            }
            let noisy = Box2D::new(
                bbox.x_min + rng.random_range(-10.0..10.0),
                bbox.y_min + rng.random_range(-10.0..10.0),
                bbox.x_max + rng.random_range(-10.0..10.0),
                bbox.y_max + rng.random_range(-10.0..10.0),
            );
            let Ok(noisy) = noisy else { continue };
            if let Ok(sol) = lift(&noisy, &d, alpha_l, &p) {
                if iou_3d(&gt_box(&d, ry, &sol.translation), &truth) >= 0.7 {
                    noisy_good += 1;
                }
            }
        }
        let clean = clean_good as f64 / n as f64;
        let noisy = noisy_good as f64 / n as f64;
        assert!(clean > 0.95, "clean accuracy {clean}");
        assert!(noisy < 0.35, "noisy accuracy {noisy}");
    }

    /// Documents the coverage limit of the 64-configuration family. When an
    /// object is seen nearly head-on or side-on, the bbox's horizontal
    /// extremes come from two *adjacent* vertical edges of the same face;
    /// the family only pairs diagonally opposite edges, so no candidate is
    /// exactly consistent there. Even an oracle that picks the candidate by
    /// true 3D IoU fails the 0.95 bar on ~3% of uniform-yaw poses, which is
    /// why the exact-recovery rate tops out near 97%.
    #[test]
    #[ignore]
    fn diag_oracle_selector_bound() {
        let p = kitti_cam();
        let mut rng = ChaCha12Rng::seed_from_u64(47);
        let n = 2000;
        let mut oracle_fail = 0;
        let mut selector_fail = 0;
        for _ in 0..n {
            let (d, ry, t, bbox, alpha_l) = sample_object(&mut rng, &p);
            let truth = gt_box(&d, ry, &t);
            let sol = lift(&bbox, &d, alpha_l, &p).unwrap();
            if iou_3d(&gt_box(&d, ry, &sol.translation), &truth) < 0.95 {
                selector_fail += 1;
            }
            let theta = ray_angle(&bbox, &p);
            let alpha_g = local_to_global(alpha_l, theta);
            let mut best = 0.0f64;
            for cfg in enumerate_configurations() {
                let rows = build_system(&cfg, &bbox, &d, alpha_g, &p);
                let Ok(cand) = solve_normal_equations(&rows) else {
                    continue;
                };
                if cand.tz <= MIN_TZ {
                    continue;
                }
                best = best.max(iou_3d(&gt_box(&d, ry, &cand), &truth));
            }
            if best < 0.95 {
                oracle_fail += 1;
            }
        }
        println!(
            "selector failures {selector_fail}/{n} ({:.2}%), oracle failures {oracle_fail}/{n} ({:.2}%)",
            100.0 * selector_fail as f64 / n as f64,
            100.0 * oracle_fail as f64 / n as f64
        );
    }

    #[test]
    fn lift_no_valid_solution_behind_camera() {
        // camera rotated half a turn about y: every t with tz > 0 projects behind
        let f = 700.0;
        let p = CameraMatrix::from_row_major([
            -f, 0.0, -320.0, 0.0, 0.0, f, 240.0, 0.0, 0.0, 0.0, -1.0, 0.0,
        ])
        .unwrap();
        let d = Dims3D::new(1.5, 1.6, 3.9).unwrap();
        let bbox = Box2D::new(100.0, 100.0, 300.0, 200.0).unwrap();
        assert_eq!(lift(&bbox, &d, 0.3, &p).unwrap_err(), LiftError::NoValidSolution);
    }
}
