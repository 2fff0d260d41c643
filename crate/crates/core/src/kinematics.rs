//! Modified Denavit–Hartenberg forward kinematics for a six-joint arm.
//!
//! Each link contributes `RotX(α)·TransX(a)·RotZ(θ_offset + q)·TransZ(d)`,
//! so a row's `α` and `a` describe the common normal *preceding* its joint.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Transform, Vec3};
use crate::lrf::{ExtrinsicParams, ScanPoint};

pub const NUM_JOINTS: usize = 6;

/// One row of the DH table (radians and meters).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DhRow {
    pub alpha: f64,
    pub a: f64,
    pub theta_offset: f64,
    pub d: f64,
}

impl DhRow {
    pub fn new(alpha: f64, a: f64, theta_offset: f64, d: f64) -> Self {
        Self {
            alpha,
            a,
            theta_offset,
            d,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.a.is_finite() && self.theta_offset.is_finite() && self.d.is_finite()
    }
}

/// The six-row DH table defining the base→flange chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotModel {
    rows: [DhRow; NUM_JOINTS],
}

impl RobotModel {
    pub fn new(rows: [DhRow; NUM_JOINTS]) -> Result<Self> {
        if let Some(i) = rows.iter().position(|r| !r.is_finite()) {
            return Err(Error::InvalidInput(format!("DH row {} is not finite", i + 1)));
        }
        Ok(Self { rows })
    }

    pub(crate) fn new_unchecked(rows: [DhRow; NUM_JOINTS]) -> Self {
        Self { rows }
    }

    pub fn from_rows(rows: &[DhRow]) -> Result<Self> {
        let rows: [DhRow; NUM_JOINTS] = rows.try_into().map_err(|_| {
            Error::InvalidInput(format!("expected {NUM_JOINTS} DH rows, got {}", rows.len()))
        })?;
        Self::new(rows)
    }

    /// Builds a model from `[alpha_deg, a_mm, theta_offset_deg, d_mm]` rows.
    pub fn from_table_deg_mm(table: &[[f64; 4]]) -> Result<Self> {
        let rows: Vec<DhRow> = table
            .iter()
            .map(|r| DhRow::new(r[0].to_radians(), r[1] * 1e-3, r[2].to_radians(), r[3] * 1e-3))
            .collect();
        Self::from_rows(&rows)
    }

    pub fn to_table_deg_mm(&self) -> Vec<[f64; 4]> {
        self.rows
            .iter()
            .map(|r| [r.alpha.to_degrees(), r.a * 1e3, r.theta_offset.to_degrees(), r.d * 1e3])
            .collect()
    }

    /// The Denso VS060 nominal table.
    pub fn denso_vs060() -> Self {
        Self::from_table_deg_mm(&[
            [0.0, 0.0, 0.0, 345.0],
            [-90.0, 0.0, -90.0, 0.0],
            [0.0, 305.0, 90.0, 0.0],
            [90.0, -10.0, 0.0, 300.0],
            [-90.0, 0.0, 0.0, 0.0],
            [90.0, 0.0, 0.0, 70.0],
        ])
        .expect("static table is valid")
    }

    pub fn rows(&self) -> &[DhRow; NUM_JOINTS] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [DhRow; NUM_JOINTS] {
        &mut self.rows
    }
}

/// Commanded joint angles in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointVector(pub [f64; NUM_JOINTS]);

impl JointVector {
    pub fn zeros() -> Self {
        Self([0.0; NUM_JOINTS])
    }

    pub fn as_array(&self) -> &[f64; NUM_JOINTS] {
        &self.0
    }
}

impl From<[f64; NUM_JOINTS]> for JointVector {
    fn from(q: [f64; NUM_JOINTS]) -> Self {
        Self(q)
    }
}

/// Per-joint `[lower, upper]` limits in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointLimits {
    pub lower: [f64; NUM_JOINTS],
    pub upper: [f64; NUM_JOINTS],
}

impl Default for JointLimits {
    /// ±170° on joints 1, 4, 6 and ±120° on joints 2, 3, 5.
    fn default() -> Self {
        Self::symmetric_deg([170.0, 120.0, 120.0, 170.0, 120.0, 170.0])
    }
}

impl JointLimits {
    pub fn symmetric_deg(limits: [f64; NUM_JOINTS]) -> Self {
        let upper = limits.map(f64::to_radians);
        Self {
            lower: upper.map(|u| -u),
            upper,
        }
    }

    pub fn contains(&self, q: &JointVector) -> bool {
        q.0.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..NUM_JOINTS {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) || hi - lo > 2.0 * PI + 1e-12 {
                return Err(Error::InvalidInput(format!("joint {} limits [{lo}, {hi}] are invalid", i + 1)));
            }
        }
        Ok(())
    }
}

/// `RotX(α)·TransX(a)·RotZ(θ_offset + q)·TransZ(d)`, written out in closed form.
pub fn link_transform(row: &DhRow, q: f64) -> Transform {
    let (sa, ca) = row.alpha.sin_cos();
    let (st, ct) = (row.theta_offset + q).sin_cos();
    let rotation = Mat3::new(
        ct,
        -st,
        0.0,
        st * ca,
        ct * ca,
        -sa,
        st * sa,
        ct * sa,
        ca,
    );
    let translation = Vec3::new(row.a, -sa * row.d, ca * row.d);
    Transform::from_parts(rotation, translation)
}

/// Base→flange transform.
pub fn forward_kinematics(model: &RobotModel, q: &JointVector) -> Transform {
    model
        .rows
        .iter()
        .zip(q.0.iter())
        .fold(Transform::identity(), |acc, (row, qi)| acc.compose(&link_transform(row, *qi)))
}

/// Base→LRF transform.
pub fn lrf_pose_in_base(model: &RobotModel, q: &JointVector, ext: &ExtrinsicParams) -> Transform {
    forward_kinematics(model, q).compose(&ext.to_transform())
}

/// Maps a scan point `(x, z)` of the LRF plane into the base frame.
pub fn lrf_point_in_base(
    model: &RobotModel,
    q: &JointVector,
    ext: &ExtrinsicParams,
    p: &ScanPoint,
) -> Vec3 {
    lrf_pose_in_base(model, q, ext).transform_point(&p.to_vec3())
}
