//! The packed 43-entry calibration state.
//!
//! Layout: 24 DH entries (`α, a, θ, d` per link), 7 mount entries
//! (`r_x, r_y, r_z, r_θ, p_x, p_y, p_z`), 12 plane entries
//! (`n_x, n_y, n_z, l` per plane). Each of the four unit vectors (mount
//! axis and three normals) has one component eliminated: it is rebuilt
//! from the other two as `±√(1 − u² − v²)`. The eliminated component is
//! the one of largest magnitude when the vector is packed, so no unit
//! vector ever sits on the singular rim of its chart.

use std::collections::BTreeSet;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::{AxisAngle, PlaneParams, Vec3};
use crate::kinematics::{DhRow, RobotModel, NUM_JOINTS};
use crate::lrf::ExtrinsicParams;
use crate::simulator::NUM_PLANES;

pub const NUM_PARAMS: usize = 43;
pub const NUM_FREE: usize = NUM_PARAMS - NUM_UNIT_BLOCKS;
pub const NUM_UNIT_BLOCKS: usize = 4;

pub const EXT_START: usize = 4 * NUM_JOINTS;
pub const PLANE_START: usize = EXT_START + 7;

/// Largest allowed squared norm of the two free components of a unit vector.
pub const MAX_FREE_SQUARED: f64 = 1.0 - 1e-12;

const DH_FIELDS: [&str; 4] = ["alpha", "a", "theta", "d"];
const EXT_FIELDS: [&str; 7] = ["r_x", "r_y", "r_z", "r_theta", "p_x", "p_y", "p_z"];
const AXES: [&str; 3] = ["x", "y", "z"];

/// The seven parameters fixed for a six-axis arm of this structure.
pub const DEFAULT_FIXED: [&str; 7] = ["d6", "theta6", "d2", "a1", "alpha1", "theta1", "d1"];

pub fn dh_index(link: usize, field: usize) -> usize {
    4 * link + field
}

pub fn plane_offset_index(plane: usize) -> usize {
    PLANE_START + 4 * plane + 3
}

/// Name of every entry, in layout order (e.g. `alpha1`, `r_theta`, `n2_y`, `l3`).
pub fn parameter_names() -> Vec<String> {
    let mut names = Vec::with_capacity(NUM_PARAMS);
    for link in 1..=NUM_JOINTS {
        for f in DH_FIELDS {
            names.push(format!("{f}{link}"));
        }
    }
    names.extend(EXT_FIELDS.iter().map(|s| s.to_string()));
    for k in 1..=NUM_PLANES {
        for a in AXES {
            names.push(format!("n{k}_{a}"));
        }
        names.push(format!("l{k}"));
    }
    names
}

pub fn parameter_index(name: &str) -> Option<usize> {
    parameter_names().iter().position(|n| n == name)
}

/// Whether an entry is an angle (radians) rather than a length or a
/// unit-vector component.
pub fn is_angle(index: usize) -> bool {
    (index < EXT_START && matches!(index % 4, 0 | 2)) || index == EXT_START + 3
}

/// A unit vector stored in three consecutive slots with one slot eliminated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitBlock {
    pub start: usize,
    pub eliminated: usize,
    pub sign: f64,
}

impl UnitBlock {
    fn choose(start: usize, v: &Vec3) -> Self {
        let eliminated = v.iamax();
        let sign = if v[eliminated] < 0.0 { -1.0 } else { 1.0 };
        Self {
            start,
            eliminated,
            sign,
        }
    }

    pub fn eliminated_index(&self) -> usize {
        self.start + self.eliminated
    }

    /// Rebuilds the unit vector; returns it and whether clamping was needed.
    fn rebuild(&self, values: &[f64; NUM_PARAMS]) -> (Vec3, bool) {
        let mut v = Vec3::new(values[self.start], values[self.start + 1], values[self.start + 2]);
        v[self.eliminated] = 0.0;
        let mut sq = v.norm_squared();
        let clamped = sq > MAX_FREE_SQUARED;
        if clamped {
            v *= (MAX_FREE_SQUARED / sq).sqrt();
            sq = MAX_FREE_SQUARED;
        }
        v[self.eliminated] = self.sign * (1.0 - sq).sqrt();
        (v, clamped)
    }
}

/// Set of fixed (not optimized) entries.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FixedMask {
    indices: BTreeSet<usize>,
}

impl FixedMask {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut indices = BTreeSet::new();
        for n in names {
            let i = parameter_index(n.as_ref())
                .ok_or_else(|| Error::InvalidInput(format!("unknown parameter name `{}`", n.as_ref())))?;
            indices.insert(i);
        }
        Ok(Self { indices })
    }

    pub fn default_mask() -> Self {
        Self::from_names(&DEFAULT_FIXED).expect("static names")
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        Self {
            indices: indices.into_iter().collect(),
        }
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.contains(&index)
    }

    pub fn insert(&mut self, index: usize) -> bool {
        self.indices.insert(index)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn names(&self) -> Vec<String> {
        let all = parameter_names();
        self.indices.iter().map(|i| all[*i].clone()).collect()
    }
}

/// Models reconstructed from a [`ParameterVector`].
#[derive(Clone, Debug, PartialEq)]
pub struct Unpacked {
    pub robot: RobotModel,
    pub ext: ExtrinsicParams,
    /// Mount rotation exactly as charted (angle may leave `[0, π]`).
    pub mount_axis: Vec3,
    pub mount_angle: f64,
    pub planes: [PlaneParams; NUM_PLANES],
    /// Some unit vector's free components had to be clamped.
    pub clamped: bool,
    /// Largest `| ‖u‖ − 1 |` over the four rebuilt unit vectors.
    pub max_unit_norm_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector {
    values: [f64; NUM_PARAMS],
    blocks: [UnitBlock; NUM_UNIT_BLOCKS],
    fixed: FixedMask,
}

impl ParameterVector {
    pub fn pack(
        robot: &RobotModel,
        ext: &ExtrinsicParams,
        planes: &[PlaneParams; NUM_PLANES],
        fixed: &FixedMask,
    ) -> Result<Self> {
        let mut values = [0.0; NUM_PARAMS];
        for (link, row) in robot.rows().iter().enumerate() {
            values[dh_index(link, 0)] = row.alpha;
            values[dh_index(link, 1)] = row.a;
            values[dh_index(link, 2)] = row.theta_offset;
            values[dh_index(link, 3)] = row.d;
        }
        let axis = ext.rotation.axis();
        values[EXT_START..EXT_START + 3].copy_from_slice(axis.as_slice());
        values[EXT_START + 3] = ext.rotation.angle();
        values[EXT_START + 4..EXT_START + 7].copy_from_slice(ext.position.as_slice());
        let mut blocks = [UnitBlock::choose(EXT_START, axis); NUM_UNIT_BLOCKS];
        for (k, p) in planes.iter().enumerate() {
            let s = PLANE_START + 4 * k;
            values[s..s + 3].copy_from_slice(p.normal().as_slice());
            values[s + 3] = p.offset();
            blocks[k + 1] = UnitBlock::choose(s, p.normal());
        }
        let pv = Self {
            values,
            blocks,
            fixed: FixedMask::empty(),
        };
        pv.with_fixed(fixed)
    }

    /// Replaces the fixed mask. Eliminated entries cannot be fixed.
    pub fn with_fixed(mut self, fixed: &FixedMask) -> Result<Self> {
        let names = parameter_names();
        for i in fixed.indices() {
            if i >= NUM_PARAMS {
                return Err(Error::InvalidInput(format!("parameter index {i} out of range")));
            }
            if self.is_eliminated(i) {
                return Err(Error::InvalidInput(format!(
                    "`{}` is reconstructed from its unit-norm constraint and cannot be fixed",
                    names[i]
                )));
            }
        }
        self.fixed = fixed.clone();
        Ok(self)
    }

    pub fn values(&self) -> &[f64; NUM_PARAMS] {
        &self.values
    }

    pub fn blocks(&self) -> &[UnitBlock; NUM_UNIT_BLOCKS] {
        &self.blocks
    }

    pub fn fixed(&self) -> &FixedMask {
        &self.fixed
    }

    pub fn is_eliminated(&self, index: usize) -> bool {
        self.blocks.iter().any(|b| b.eliminated_index() == index)
    }

    /// The 39 non-eliminated entries in layout order.
    pub fn free_indices(&self) -> Vec<usize> {
        (0..NUM_PARAMS).filter(|i| !self.is_eliminated(*i)).collect()
    }

    /// Free entries that are not fixed.
    pub fn optimized_indices(&self) -> Vec<usize> {
        self.free_indices()
            .into_iter()
            .filter(|i| !self.fixed.contains(*i))
            .collect()
    }

    pub fn names_of(indices: &[usize]) -> Vec<String> {
        let all = parameter_names();
        indices.iter().map(|i| all[*i].clone()).collect()
    }

    pub fn gather(&self, indices: &[usize]) -> DVector<f64> {
        DVector::from_iterator(indices.len(), indices.iter().map(|i| self.values[*i]))
    }

    /// Copy with `values[indices[i]] = x[i]`.
    pub fn scatter(&self, indices: &[usize], x: &DVector<f64>) -> Self {
        let mut out = self.clone();
        for (i, v) in indices.iter().zip(x.iter()) {
            out.values[*i] = *v;
        }
        out
    }

    pub fn set(&mut self, index: usize, value: f64) {
        self.values[index] = value;
    }

    pub fn unpack(&self) -> Unpacked {
        let v = &self.values;
        let rows: [DhRow; NUM_JOINTS] = std::array::from_fn(|link| {
            DhRow::new(
                v[dh_index(link, 0)],
                v[dh_index(link, 1)],
                v[dh_index(link, 2)],
                v[dh_index(link, 3)],
            )
        });
        // unchecked so that a non-finite entry shows up in the residuals
        let robot = RobotModel::new_unchecked(rows);

        let mut clamped = false;
        let mut max_err: f64 = 0.0;
        let mut units = [Vec3::zeros(); NUM_UNIT_BLOCKS];
        for (b, u) in self.blocks.iter().zip(units.iter_mut()) {
            let (vec, c) = b.rebuild(v);
            clamped |= c;
            max_err = max_err.max((vec.norm() - 1.0).abs());
            *u = vec;
        }
        let mount_axis = units[0];
        let mount_angle = v[EXT_START + 3];
        let rotation = AxisAngle::canonical(mount_axis, mount_angle).unwrap_or_else(|_| AxisAngle::identity());
        let position = Vec3::new(v[EXT_START + 4], v[EXT_START + 5], v[EXT_START + 6]);
        let planes: [PlaneParams; NUM_PLANES] = std::array::from_fn(|k| {
            PlaneParams::new_unchecked(units[k + 1], v[plane_offset_index(k)])
        });
        Unpacked {
            robot,
            ext: ExtrinsicParams::new(rotation, position),
            mount_axis,
            mount_angle,
            planes,
            clamped,
            max_unit_norm_error: max_err,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::Scene;
    use approx::assert_abs_diff_eq;

    fn scene_pv(fixed: &FixedMask) -> (Scene, ParameterVector) {
        let s = Scene::default_setup();
        let pv = ParameterVector::pack(&s.true_robot, &s.true_ext, &s.true_planes, fixed).unwrap();
        (s, pv)
    }

    #[test]
    fn layout_counts() {
        let names = parameter_names();
        assert_eq!(names.len(), NUM_PARAMS);
        assert_eq!(names[0], "alpha1");
        assert_eq!(names[23], "d6");
        assert_eq!(names[27], "r_theta");
        assert_eq!(names[42], "l3");
        let (_, pv) = scene_pv(&FixedMask::default_mask());
        assert_eq!(pv.free_indices().len(), NUM_FREE);
        assert_eq!(pv.optimized_indices().len(), NUM_FREE - 7);
        assert!(is_angle(0) && !is_angle(1) && is_angle(22) && is_angle(27) && !is_angle(28));
    }

    #[test]
    fn round_trip_on_true_scene() {
        let (s, pv) = scene_pv(&FixedMask::empty());
        let u = pv.unpack();
        assert_eq!(u.robot, s.true_robot);
        assert_abs_diff_eq!(*u.ext.rotation.axis(), Vec3::z(), epsilon = 0.0);
        assert_eq!(u.ext.rotation.angle(), std::f64::consts::PI);
        assert_eq!(u.ext.position, s.true_ext.position);
        assert_eq!(u.planes, s.true_planes);
        assert!(!u.clamped);
    }

    #[test]
    fn mount_axis_eliminates_z() {
        let (_, pv) = scene_pv(&FixedMask::empty());
        assert_eq!(pv.blocks()[0].eliminated_index(), parameter_index("r_z").unwrap());
        let mut moved = pv.clone();
        moved.set(EXT_START, 0.0);
        moved.set(EXT_START + 1, 0.0);
        assert_eq!(moved.unpack().mount_axis.z, 1.0);
    }

    #[test]
    fn wall_normal_eliminates_its_largest_component() {
        let (_, pv) = scene_pv(&FixedMask::empty());
        let b = pv.blocks()[2];
        assert_eq!(b.eliminated_index(), parameter_index("n2_x").unwrap());
        // tilt the wall: n = (√(1 − y² − z²), y, z)
        let mut t = pv.clone();
        t.set(parameter_index("n2_y").unwrap(), 0.3);
        t.set(parameter_index("n2_z").unwrap(), -0.2);
        let n = *t.unpack().planes[1].normal();
        assert_abs_diff_eq!(n.x, (1.0f64 - 0.09 - 0.04).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(n.norm(), 1.0, epsilon = 1e-15);

        let neg = PlaneParams::new(Vec3::new(-0.6, 0.0, -0.8), 0.1).unwrap();
        let s = Scene::default_setup();
        let planes = [s.true_planes[0], neg, s.true_planes[2]];
        let pv = ParameterVector::pack(&s.true_robot, &s.true_ext, &planes, &FixedMask::empty()).unwrap();
        assert_eq!(pv.blocks()[2].eliminated_index(), parameter_index("n2_z").unwrap());
        assert_eq!(pv.blocks()[2].sign, -1.0);
        assert_abs_diff_eq!(*pv.unpack().planes[1].normal(), *neg.normal(), epsilon = 1e-15);
    }

    #[test]
    fn oversized_free_components_are_clamped() {
        let (_, mut pv) = scene_pv(&FixedMask::empty());
        pv.set(PLANE_START, 0.9);
        pv.set(PLANE_START + 1, 0.9);
        let u = pv.unpack();
        assert!(u.clamped);
        assert!(u.max_unit_norm_error <= 1e-10);
        let n = u.planes[0].normal();
        assert!(n.x * n.x + n.y * n.y <= MAX_FREE_SQUARED + 1e-15);
    }

    #[test]
    fn masks_resolve_names_and_reject_eliminated_entries() {
        let m = FixedMask::default_mask();
        assert_eq!(m.len(), 7);
        let mut names = m.names();
        names.sort();
        assert_eq!(names, vec!["a1", "alpha1", "d1", "d2", "d6", "theta1", "theta6"]);
        assert!(FixedMask::from_names(&["bogus"]).is_err());
        let s = Scene::default_setup();
        let bad = FixedMask::from_names(&["r_z"]).unwrap();
        assert!(ParameterVector::pack(&s.true_robot, &s.true_ext, &s.true_planes, &bad).is_err());
    }

    #[test]
    fn scatter_gather_round_trip() {
        let (_, pv) = scene_pv(&FixedMask::default_mask());
        let idx = pv.optimized_indices();
        let x = pv.gather(&idx);
        assert_eq!(pv.scatter(&idx, &x), pv);
    }
}
