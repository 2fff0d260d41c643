//! Joint refinement of the DH table, the scanner mount and the three planes.
//!
//! Every scan point contributes one residual `nₖᵀ p − lₖ`, where `p` is the
//! point mapped into the base frame through the current robot and mount.
//! The sum of their squares is minimized with [`lm::levenberg_marquardt`]
//! over the entries of the [`ParameterVector`] that are neither eliminated
//! nor fixed.

pub mod lm;
pub mod params;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{rodrigues, PlaneParams, Transform};
use crate::kinematics::{forward_kinematics, RobotModel};
use crate::lrf::ExtrinsicParams;
use crate::simulator::{ScanDataset, NUM_PLANES};

pub use lm::{LmDiagnostics, LmOptions, Termination};
pub use params::{FixedMask, ParameterVector, DEFAULT_FIXED, NUM_FREE, NUM_PARAMS};

/// Planar residuals in record order, then point order within a record.
pub fn residuals(pv: &ParameterVector, data: &ScanDataset) -> DVector<f64> {
    let u = pv.unpack();
    // the mount is used exactly as charted so that the map stays smooth
    // when the angle crosses π
    let mount = Transform::from_parts(rodrigues(&u.mount_axis, u.mount_angle), u.ext.position);
    let per_record: Vec<Vec<f64>> = data
        .records
        .par_iter()
        .map(|rec| {
            let t = forward_kinematics(&u.robot, &rec.joints).compose(&mount);
            let plane = &u.planes[rec.plane];
            rec.points
                .iter()
                .map(|p| plane.residual(&t.transform_point(&p.to_vec3())))
                .collect()
        })
        .collect();
    DVector::from_iterator(data.num_points(), per_record.into_iter().flatten())
}

/// Copies the fixed DH entries of `reference` into `robot`.
///
/// Fixed parameters are never updated, so they keep whatever value the
/// start model gives them; pinning them to the nominal table is what makes
/// the rest of the model recoverable.
pub fn pin_fixed_dh(robot: &RobotModel, reference: &RobotModel, fixed: &FixedMask) -> RobotModel {
    let mut out = *robot;
    for i in fixed.indices().filter(|i| *i < params::EXT_START) {
        let (link, field) = (i / 4, i % 4);
        let src = reference.rows()[link];
        let row = &mut out.rows_mut()[link];
        match field {
            0 => row.alpha = src.alpha,
            1 => row.a = src.a,
            2 => row.theta_offset = src.theta_offset,
            _ => row.d = src.d,
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct CalibrationResult {
    pub robot: RobotModel,
    pub ext: ExtrinsicParams,
    pub planes: [PlaneParams; NUM_PLANES],
    pub parameters: ParameterVector,
    pub initial_parameters: ParameterVector,
    pub diagnostics: LmDiagnostics,
    /// Largest unit-norm error of a rebuilt axis or normal over all accepted iterates.
    pub max_unit_norm_error: f64,
    /// Some accepted iterate needed its unit-vector components clamped.
    pub clamped: bool,
    pub num_residuals: usize,
}

impl CalibrationResult {
    pub fn fixed_names(&self) -> Vec<String> {
        self.parameters.fixed().names()
    }

    pub fn optimized_names(&self) -> Vec<String> {
        ParameterVector::names_of(&self.parameters.optimized_indices())
    }
}

/// Refines all non-fixed parameters against the scans.
pub fn calibrate(
    data: &ScanDataset,
    robot0: &RobotModel,
    ext0: &ExtrinsicParams,
    planes0: &[PlaneParams; NUM_PLANES],
    fixed: &FixedMask,
    opts: &LmOptions,
) -> Result<CalibrationResult> {
    data.validate()?;
    let pv0 = ParameterVector::pack(robot0, ext0, planes0, fixed)?;
    let idx = pv0.optimized_indices();
    let n = data.num_points();
    if n < idx.len() {
        return Err(Error::DegenerateData(format!(
            "{n} scan points cannot determine {} parameters",
            idx.len()
        )));
    }
    let f = |x: &DVector<f64>| residuals(&pv0.scatter(&idx, x), data);

    let mut max_err: f64 = 0.0;
    let mut clamped = false;
    let out = lm::levenberg_marquardt(f, pv0.gather(&idx), opts, |it| {
        let u = pv0.scatter(&idx, it.x).unpack();
        max_err = max_err.max(u.max_unit_norm_error);
        clamped |= u.clamped;
    })?;

    let pv = pv0.scatter(&idx, &out.x);
    let u = pv.unpack();
    Ok(CalibrationResult {
        robot: u.robot,
        ext: u.ext,
        planes: u.planes,
        parameters: pv,
        initial_parameters: pv0,
        diagnostics: out.diagnostics,
        max_unit_norm_error: max_err,
        clamped,
        num_residuals: n,
    })
}
