//! Accuracy of a calibrated model against ground truth over random poses.

use rand::Rng;
use rayon::prelude::*;

use crate::geometry::{rotation_to_axis_angle, Transform};
use crate::kinematics::{lrf_pose_in_base, JointLimits, JointVector, RobotModel};
use crate::lrf::ExtrinsicParams;
use crate::rng;

/// Stream tag for evaluation poses.
const EVAL_TAG: u64 = 0x4556_414c;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorStats {
    /// Meters.
    pub mean_position: f64,
    pub max_position: f64,
    /// Radians.
    pub mean_orientation: f64,
    pub max_orientation: f64,
    pub num_poses: usize,
    pub seed: u64,
}

/// Position and rotation-angle error of `ΔT = model⁻¹ · truth`.
pub fn pose_error(model: &Transform, truth: &Transform) -> (f64, f64) {
    let delta = model.invert().compose(truth);
    (delta.translation().norm(), rotation_to_axis_angle(delta.rotation()).angle())
}

/// Compensated (Neumaier) sum, so the mean does not drift with pose count.
fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Joint angles drawn uniformly within the limits; pose `i` has its own stream.
pub fn random_pose(limits: &JointLimits, seed: u64, index: usize) -> JointVector {
    let mut rng = rng::stream(seed, &[EVAL_TAG, index as u64]);
    JointVector(std::array::from_fn(|j| rng.random_range(limits.lower[j]..=limits.upper[j])))
}

/// Compares scanner poses of `model` and `truth` over `num_poses` random
/// joint vectors.
pub fn evaluate_model(
    model: (&RobotModel, &ExtrinsicParams),
    truth: (&RobotModel, &ExtrinsicParams),
    limits: &JointLimits,
    num_poses: usize,
    seed: u64,
) -> ErrorStats {
    let errors: Vec<(f64, f64)> = (0..num_poses)
        .into_par_iter()
        .map(|i| {
            let q = random_pose(limits, seed, i);
            pose_error(&lrf_pose_in_base(model.0, &q, model.1), &lrf_pose_in_base(truth.0, &q, truth.1))
        })
        .collect();
    let n = num_poses.max(1) as f64;
    ErrorStats {
        mean_position: neumaier_sum(errors.iter().map(|e| e.0)) / n,
        max_position: errors.iter().map(|e| e.0).fold(0.0, f64::max),
        mean_orientation: neumaier_sum(errors.iter().map(|e| e.1)) / n,
        max_orientation: errors.iter().map(|e| e.1).fold(0.0, f64::max),
        num_poses,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rodrigues, Vec3};
    use crate::simulator::{make_perturbed_model, PerturbationConfig, Scene};
    use approx::assert_abs_diff_eq;

    fn sample_transform() -> Transform {
        Transform::new(rodrigues(&Vec3::new(0.3, -1.0, 0.4).normalize(), 0.8), Vec3::new(0.2, 0.1, -0.4)).unwrap()
    }

    #[test]
    fn identical_transforms_have_no_error() {
        let t = sample_transform();
        assert_eq!(pose_error(&t, &t), (0.0, 0.0));
    }

    #[test]
    fn translation_offset_is_euclidean() {
        let t = Transform::identity();
        let u = Transform::from_translation(Vec3::new(0.001, 0.002, 0.002));
        let (dp, dth) = pose_error(&t, &u);
        assert_abs_diff_eq!(dp, 0.003, epsilon = 1e-15);
        assert_eq!(dth, 0.0);
    }

    #[test]
    fn rotation_offset_is_its_angle() {
        let t = sample_transform();
        for axis in [Vec3::x(), Vec3::new(1.0, 1.0, -2.0).normalize()] {
            let r = Transform::from_rotation(rodrigues(&axis, 5f64.to_radians())).unwrap();
            let (dp, dth) = pose_error(&t, &t.compose(&r));
            assert_abs_diff_eq!(dth, 5f64.to_radians(), epsilon = 1e-12);
            assert!(dp <= 1e-15);
        }
    }

    #[test]
    fn error_is_symmetric() {
        let a = sample_transform();
        let b = a.compose(&Transform::new(rodrigues(&Vec3::y(), 0.1), Vec3::new(0.01, 0.0, -0.02)).unwrap());
        let (p1, t1) = pose_error(&a, &b);
        let (p2, t2) = pose_error(&b, &a);
        assert_abs_diff_eq!(p1, p2, epsilon = 1e-15);
        assert_abs_diff_eq!(t1, t2, epsilon = 1e-15);
    }

    #[test]
    fn truth_against_itself_is_zero() {
        let s = Scene::default_setup();
        let t = (&s.true_robot, &s.true_ext);
        let e = evaluate_model(t, t, &s.joint_limits, 200, 1);
        assert_eq!((e.mean_position, e.max_position, e.mean_orientation, e.max_orientation), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn mount_z_offset_gives_exact_millimeter() {
        let s = Scene::default_setup();
        let mut ext = s.true_ext;
        ext.position.z += 0.001;
        let e = evaluate_model((&s.true_robot, &ext), (&s.true_robot, &s.true_ext), &s.joint_limits, 300, 2);
        assert_abs_diff_eq!(e.mean_position, 0.001, epsilon = 1e-12);
        assert_abs_diff_eq!(e.max_position, 0.001, epsilon = 1e-12);
        assert!(e.max_orientation <= 1e-12);
    }

    #[test]
    fn deterministic_and_ordered() {
        let s = Scene::default_setup();
        let (robot, ext) = make_perturbed_model(&s.true_robot, &s.true_ext, &PerturbationConfig::default()).unwrap();
        let a = evaluate_model((&robot, &ext), (&s.true_robot, &s.true_ext), &s.joint_limits, 500, 9);
        let b = evaluate_model((&robot, &ext), (&s.true_robot, &s.true_ext), &s.joint_limits, 500, 9);
        assert_eq!(a, b);
        assert!(a.max_position >= a.mean_position && a.mean_position > 0.0);
        assert!(a.max_orientation >= a.mean_orientation && a.mean_orientation > 0.0);
        // a pose does not depend on how many others are drawn
        assert_eq!(random_pose(&s.joint_limits, 9, 17), random_pose(&s.joint_limits, 9, 17));
        let few = evaluate_model((&robot, &ext), (&s.true_robot, &s.true_ext), &s.joint_limits, 1, 9);
        let q = random_pose(&s.joint_limits, 9, 0);
        let single = pose_error(
            &lrf_pose_in_base(&robot, &q, &ext),
            &lrf_pose_in_base(&s.true_robot, &q, &s.true_ext),
        );
        assert_eq!(few.mean_position, single.0);
    }

    #[test]
    fn compensated_sum_beats_naive_sum() {
        let v = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(neumaier_sum(v), 2.0);
    }
}
