//! Linear estimate of the LRF mount from the scans of a single plane.
//!
//! With the flange poses taken from the (approximate) robot model and the
//! plane roughly known, each scan point gives one equation that is linear
//! in nine entries of the flange→LRF matrix: the first and third rotation
//! columns and the translation. The middle column never multiplies
//! anything because scan points have `y = 0`.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::geometry::{nearest_rotation, Mat3, PlaneParams, Transform, Vec3};
use crate::kinematics::{forward_kinematics, RobotModel};
use crate::lrf::{ExtrinsicParams, ScanPoint};
use crate::simulator::ScanRecord;

/// Relative singular-value floor below which the system counts as rank deficient.
pub const RANK_TOL: f64 = 1e-8;

/// Stacked linear system `X Φ = D`.
#[derive(Clone, Debug)]
pub struct DesignSystem {
    pub x: DMatrix<f64>,
    pub d: DVector<f64>,
}

/// `[n_x, n_y, n_z, −l] · T_E` as a row 4-vector; its dot product with a
/// flange-frame homogeneous point is the point's signed plane distance.
pub fn transformed_normal(plane: &PlaneParams, flange: &Transform) -> [f64; 4] {
    let n = plane.normal();
    let nr = flange.rotation().transpose() * n;
    [nr.x, nr.y, nr.z, n.dot(flange.translation()) - plane.offset()]
}

/// One row of the design matrix and its right-hand side `l − n′₄`.
pub fn build_design_row(p: &ScanPoint, n: &[f64; 4], l: f64) -> ([f64; 9], f64) {
    let (x, z) = (p.x, p.z);
    (
        [x * n[0], x * n[1], x * n[2], z * n[0], z * n[1], z * n[2], n[0], n[1], n[2]],
        l - n[3],
    )
}

/// The nine unknowns `[r11 r21 r31 r13 r23 r33 r14 r24 r34]` of a transform.
pub fn stacked_unknowns(t: &Transform) -> [f64; 9] {
    let r = t.rotation();
    let p = t.translation();
    [r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 2)], r[(1, 2)], r[(2, 2)], p.x, p.y, p.z]
}

/// Assembles `X Φ = D` from records that all observe `plane`.
///
/// The plane offset is folded into `n′₄` by [`transformed_normal`], so
/// rows are built with a zero offset argument.
pub fn design_system<'a>(
    records: impl IntoIterator<Item = &'a ScanRecord>,
    robot: &RobotModel,
    plane: &PlaneParams,
) -> DesignSystem {
    let mut rows: Vec<[f64; 9]> = Vec::new();
    let mut rhs = Vec::new();
    for rec in records {
        let n = transformed_normal(plane, &forward_kinematics(robot, &rec.joints));
        for p in &rec.points {
            let (row, d) = build_design_row(p, &n, 0.0);
            rows.push(row);
            rhs.push(d);
        }
    }
    let x = DMatrix::from_fn(rows.len(), 9, |i, j| rows[i][j]);
    DesignSystem {
        x,
        d: DVector::from_vec(rhs),
    }
}

/// Minimum-norm least-squares solution via SVD. Fails when
/// `σ_min / σ_max < RANK_TOL`.
pub fn solve_min_norm(sys: &DesignSystem) -> Result<DVector<f64>> {
    let cols = sys.x.ncols();
    if sys.x.nrows() < cols {
        return Err(Error::DegenerateData(format!(
            "{} equations for {cols} unknowns",
            sys.x.nrows()
        )));
    }
    let svd = SVD::new(sys.x.clone(), true, true);
    let s = &svd.singular_values;
    let smax = s.max();
    let smin = s.min();
    if smax.is_nan() || smax <= 0.0 || smin / smax < RANK_TOL {
        let deficient = s.iter().filter(|v| **v < RANK_TOL * smax).count();
        return Err(Error::DegenerateData(format!(
            "design matrix is rank deficient by {deficient} (σ_min/σ_max = {:e})",
            if smax > 0.0 { smin / smax } else { 0.0 }
        )));
    }
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("Vᵀ requested");
    let mut utb = u.transpose() * &sys.d;
    for (i, v) in utb.iter_mut().enumerate() {
        *v /= s[i];
    }
    Ok(v_t.transpose() * utb)
}

/// Rebuilds a rigid transform from the nine solved entries: normalize the
/// first and third rotation columns, take the second as `c₃ × c₁`, then
/// project onto the nearest rotation.
pub fn reconstruct_transform(phi: &[f64]) -> Result<Transform> {
    let c1 = Vec3::new(phi[0], phi[1], phi[2]);
    let c3 = Vec3::new(phi[3], phi[4], phi[5]);
    let t = Vec3::new(phi[6], phi[7], phi[8]);
    if c1.norm() < f64::EPSILON || c3.norm() < f64::EPSILON {
        return Err(Error::DegenerateData("recovered rotation column vanishes".into()));
    }
    let c1 = c1.normalize();
    let c3 = c3.normalize();
    let c2 = c3.cross(&c1);
    let raw = Mat3::from_columns(&[c1, c2, c3]);
    Transform::new(nearest_rotation(&raw), t)
}

/// Linear estimate of the flange→LRF mount from scans of one plane.
pub fn solve_extrinsic_lsq<'a>(
    records: impl IntoIterator<Item = &'a ScanRecord>,
    robot: &RobotModel,
    plane_guess: &PlaneParams,
) -> Result<ExtrinsicParams> {
    let sys = design_system(records, robot, plane_guess);
    let phi = solve_min_norm(&sys)?;
    let t = reconstruct_transform(phi.as_slice())?;
    Ok(ExtrinsicParams::from_transform(&t))
}
