//! Rigid transforms, axis-angle rotations and plane residuals.
//!
//! Rotations live as 3×3 matrices everywhere except in the parameter
//! vector, where the extrinsic rotation is carried in axis-angle form.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Orthonormality tolerance enforced by the checked constructors.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Below this angle a rotation is reported as the identity.
const IDENTITY_ANGLE: f64 = 1e-12;

/// Rigid transform `p ↦ R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    rotation: Mat3,
    translation: Vec3,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Checked constructor; rejects rotations that are not proper and orthonormal.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        check_rotation(&rotation, ORTHONORMAL_TOL)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("translation is not finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a transform whose rotation is already known to be valid
    /// (products of elementary rotations, Rodrigues output).
    pub(crate) fn from_parts(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::from_parts(Mat3::identity(), t)
    }

    pub fn from_rotation(r: Mat3) -> Result<Self> {
        Self::new(r, Vec3::zeros())
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_parts(rot_x(angle), Vec3::zeros())
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_parts(rot_z(angle), Vec3::zeros())
    }

    pub fn trans_x(a: f64) -> Self {
        Self::from_translation(Vec3::new(a, 0.0, 0.0))
    }

    pub fn trans_z(d: f64) -> Self {
        Self::from_translation(Vec3::new(0.0, 0.0, d))
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Transform) -> Transform {
        Transform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn invert(&self) -> Transform {
        let rt = self.rotation.transpose();
        Transform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Largest entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Mat3::identity()).amax()
    }
}

impl Mul for Transform {
    type Output = Transform;

    fn mul(self, rhs: Transform) -> Transform {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Transform> for &'a Transform {
    type Output = Transform;

    fn mul(self, rhs: &'a Transform) -> Transform {
        self.compose(rhs)
    }
}

/// Free-function form of [`Transform::compose`].
pub fn compose(a: &Transform, b: &Transform) -> Transform {
    a.compose(b)
}

/// Free-function form of [`Transform::invert`].
pub fn invert(t: &Transform) -> Transform {
    t.invert()
}

pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn check_rotation(r: &Mat3, tol: f64) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("rotation is not finite".into()));
    }
    let orth = (r.transpose() * r - Mat3::identity()).amax();
    if orth > tol {
        return Err(Error::InvalidInput(format!(
            "rotation is not orthonormal (max |RᵀR − I| = {orth:e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tol {
        return Err(Error::InvalidInput(format!(
            "rotation determinant is {det}, expected +1"
        )));
    }
    Ok(())
}

/// Nearest rotation in the Frobenius sense (polar projection via SVD).
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Unit rotation axis plus angle in `[0, π]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAngle {
    axis: Vec3,
    angle: f64,
}

impl AxisAngle {
    /// Strict constructor: `axis` must be unit-norm and `angle ∈ [0, π]`.
    pub fn new(axis: Vec3, angle: f64) -> Result<Self> {
        if !axis.iter().all(|v| v.is_finite()) || !angle.is_finite() {
            return Err(Error::InvalidInput("axis-angle is not finite".into()));
        }
        if (axis.norm() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidInput(format!(
                "rotation axis norm is {}, expected 1",
                axis.norm()
            )));
        }
        if !(0.0..=std::f64::consts::PI).contains(&angle) {
            return Err(Error::InvalidInput(format!(
                "rotation angle {angle} outside [0, π]"
            )));
        }
        Ok(Self { axis, angle })
    }

    /// Accepts any nonzero axis and any angle and maps them onto the
    /// canonical range (unit axis, angle in `[0, π]`).
    pub fn canonical(axis: Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n.is_finite() && n > 0.0) || !angle.is_finite() {
            return Err(Error::InvalidInput(
                "rotation axis must be finite and nonzero".into(),
            ));
        }
        let mut axis = axis / n;
        let mut angle = angle.rem_euclid(std::f64::consts::TAU);
        if angle > std::f64::consts::PI {
            angle = std::f64::consts::TAU - angle;
            axis = -axis;
        }
        if angle < IDENTITY_ANGLE {
            return Ok(Self::identity());
        }
        if angle == std::f64::consts::PI {
            axis = pi_tie_break(axis);
        }
        Ok(Self { axis, angle })
    }

    pub fn identity() -> Self {
        Self {
            axis: Vec3::z(),
            angle: 0.0,
        }
    }

    pub fn axis(&self) -> &Vec3 {
        &self.axis
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn to_rotation(&self) -> Mat3 {
        axis_angle_to_rotation(self)
    }
}

/// Rodrigues' formula: `R = I + sin θ K + (1 − cos θ) K²`.
pub fn axis_angle_to_rotation(aa: &AxisAngle) -> Mat3 {
    rodrigues(&aa.axis, aa.angle)
}

/// Rodrigues' formula without the canonical-range requirement. `axis`
/// must be unit-norm.
pub fn rodrigues(axis: &Vec3, angle: f64) -> Mat3 {
    let k = skew(axis);
    let (s, c) = angle.sin_cos();
    Mat3::identity() + k * s + k * k * (1.0 - c)
}

/// Inverse of [`axis_angle_to_rotation`].
///
/// Identity maps to axis `+z`, angle 0. At exactly π the axis sign is
/// ambiguous; the first component with magnitude above 1e-12 is made
/// positive.
pub fn rotation_to_axis_angle(r: &Mat3) -> AxisAngle {
    let vee = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = 0.5 * vee.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let angle = s.atan2(c);
    if angle < IDENTITY_ANGLE {
        return AxisAngle::identity();
    }
    let axis = if angle < std::f64::consts::FRAC_PI_2 {
        vee / vee.norm()
    } else {
        // (R + Rᵀ)/2 = cos θ I + (1 − cos θ) a aᵀ
        let sym = (r + r.transpose()) * 0.5;
        let outer = (sym - Mat3::identity() * c) / (1.0 - c);
        let mut best = 0;
        for i in 1..3 {
            if outer[(i, i)] > outer[(best, best)] {
                best = i;
            }
        }
        let mut a: Vec3 = outer.column(best).into_owned();
        a /= a.norm();
        if vee.norm() > 1e-10 {
            if a.dot(&vee) < 0.0 {
                a = -a;
            }
            a
        } else {
            pi_tie_break(a)
        }
    };
    AxisAngle { axis, angle }
}

/// Makes the first component with magnitude above 1e-12 positive.
fn pi_tie_break(a: Vec3) -> Vec3 {
    for v in a.iter() {
        if v.abs() > 1e-12 {
            return if *v < 0.0 { -a } else { a };
        }
    }
    a
}

/// Plane `{p : nᵀp = l}` with a unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneParams {
    normal: Vec3,
    offset: f64,
}

impl PlaneParams {
    pub fn new(normal: Vec3, offset: f64) -> Result<Self> {
        if !normal.iter().all(|v| v.is_finite()) || !offset.is_finite() {
            return Err(Error::InvalidInput("plane parameters are not finite".into()));
        }
        if (normal.norm() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidInput(format!(
                "plane normal norm is {}, expected 1",
                normal.norm()
            )));
        }
        Ok(Self { normal, offset })
    }

    pub(crate) fn new_unchecked(normal: Vec3, offset: f64) -> Self {
        Self { normal, offset }
    }

    /// Scales an arbitrary `(n, l)` pair so that `n` is unit-norm.
    pub fn from_unnormalized(normal: Vec3, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidInput("plane normal must be nonzero".into()));
        }
        Self::new(normal / n, offset / n)
    }

    pub fn normal(&self) -> &Vec3 {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Homogeneous row `[n_x, n_y, n_z, −l]`.
    pub fn homogeneous(&self) -> [f64; 4] {
        [self.normal.x, self.normal.y, self.normal.z, -self.offset]
    }

    /// Signed distance `nᵀp − l`.
    pub fn residual(&self, point: &Vec3) -> f64 {
        plane_residual(self, point)
    }
}

/// Signed distance of `point` to `plane`, positive on the normal side.
pub fn plane_residual(plane: &PlaneParams, point: &Vec3) -> f64 {
    plane.normal.dot(point) - plane.offset
}
