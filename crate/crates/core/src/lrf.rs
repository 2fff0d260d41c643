//! Laser range finder mounting (flange → LRF) and scan points.

use crate::geometry::{rotation_to_axis_angle, AxisAngle, Transform, Vec3};

/// A 2D scan point in the LRF's XZ plane; `y` is zero by construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanPoint {
    pub x: f64,
    pub z: f64,
}

impl ScanPoint {
    pub fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    pub fn to_vec3(&self) -> Vec3 {
        Vec3::new(self.x, 0.0, self.z)
    }
}

/// Pose of the LRF frame in the flange frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtrinsicParams {
    pub rotation: AxisAngle,
    pub position: Vec3,
}

impl ExtrinsicParams {
    pub fn new(rotation: AxisAngle, position: Vec3) -> Self {
        Self { rotation, position }
    }

    pub fn identity() -> Self {
        Self::new(AxisAngle::identity(), Vec3::zeros())
    }

    /// Half turn about the flange axis, offset `[-127.5, -33.0, 101.5]` mm.
    pub fn nominal_mount() -> Self {
        Self::new(
            AxisAngle::new(Vec3::z(), std::f64::consts::PI).expect("unit axis"),
            Vec3::new(-0.1275, -0.033, 0.1015),
        )
    }

    pub fn to_transform(&self) -> Transform {
        extrinsic_to_transform(self)
    }

    pub fn from_transform(t: &Transform) -> Self {
        transform_to_extrinsic(t)
    }
}

pub fn extrinsic_to_transform(ext: &ExtrinsicParams) -> Transform {
    Transform::from_parts(ext.rotation.to_rotation(), ext.position)
}

pub fn transform_to_extrinsic(t: &Transform) -> ExtrinsicParams {
    ExtrinsicParams::new(rotation_to_axis_angle(t.rotation()), *t.translation())
}
