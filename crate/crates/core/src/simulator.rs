//! Synthetic calibration experiments: a ground-truth scene, perturbed
//! starting models, reachable calibration poses and noisy 2D scans.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{rodrigues, rotation_to_axis_angle, AxisAngle, Mat3, PlaneParams, Transform, Vec3};
use crate::kinematics::{forward_kinematics, lrf_pose_in_base, JointLimits, JointVector, RobotModel, NUM_JOINTS};
use crate::lrf::{ExtrinsicParams, ScanPoint};
use crate::rng;

pub const NUM_PLANES: usize = 3;

/// Two orthonormal in-plane directions for `normal`, chosen deterministically.
pub fn plane_axes(normal: &Vec3) -> (Vec3, Vec3) {
    let reference = if normal.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
    let u = reference.cross(normal).normalize();
    let v = normal.cross(&u);
    (u, v)
}

/// Rectangular patch of a plane: a center on the plane and half-widths
/// along the [`plane_axes`] directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneExtent {
    pub center: Vec3,
    pub half_widths: [f64; 2],
}

impl PlaneExtent {
    pub fn contains(&self, plane: &PlaneParams, point: &Vec3) -> bool {
        let (u, v) = plane_axes(plane.normal());
        let d = point - self.center;
        d.dot(&u).abs() <= self.half_widths[0] && d.dot(&v).abs() <= self.half_widths[1]
    }
}

/// LRF fan: rays in the sensor's XZ plane, symmetric about `+z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanGeometry {
    pub fan_half_angle: f64,
}

impl Default for ScanGeometry {
    fn default() -> Self {
        Self {
            fan_half_angle: 20f64.to_radians(),
        }
    }
}

impl ScanGeometry {
    /// Beam angles (from `+z` toward `+x`) for `m` evenly spaced rays.
    pub fn beam_angles(&self, m: usize) -> Vec<f64> {
        match m {
            0 => Vec::new(),
            1 => vec![0.0],
            _ => (0..m)
                .map(|i| -self.fan_half_angle + 2.0 * self.fan_half_angle * i as f64 / (m - 1) as f64)
                .collect(),
        }
    }
}

fn beam_direction(angle: f64) -> Vec3 {
    Vec3::new(angle.sin(), 0.0, angle.cos())
}

/// Ground truth of a simulated experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub true_robot: RobotModel,
    pub true_ext: ExtrinsicParams,
    pub true_planes: [PlaneParams; NUM_PLANES],
    pub plane_extents: [PlaneExtent; NUM_PLANES],
    pub joint_limits: JointLimits,
    pub scan: ScanGeometry,
}

impl Scene {
    pub fn new(
        true_robot: RobotModel,
        true_ext: ExtrinsicParams,
        true_planes: [PlaneParams; NUM_PLANES],
        plane_extents: [PlaneExtent; NUM_PLANES],
        joint_limits: JointLimits,
        scan: ScanGeometry,
    ) -> Result<Self> {
        for a in 0..NUM_PLANES {
            for b in a + 1..NUM_PLANES {
                let c = true_planes[a].normal().dot(true_planes[b].normal()).abs();
                if c >= 0.99 {
                    return Err(Error::InvalidInput(format!(
                        "planes {} and {} are nearly parallel (|n·n| = {c:.4})",
                        a + 1,
                        b + 1
                    )));
                }
            }
        }
        joint_limits.validate()?;
        if !(scan.fan_half_angle > 0.0 && scan.fan_half_angle < PI / 2.0) {
            return Err(Error::InvalidInput("fan half-angle must lie in (0, 90°)".into()));
        }
        Ok(Self {
            true_robot,
            true_ext,
            true_planes,
            plane_extents,
            joint_limits,
            scan,
        })
    }

    /// Denso VS060 with the nominal LRF mount, a floor and two walls.
    pub fn default_setup() -> Self {
        let planes = [
            PlaneParams::new(Vec3::z(), 0.0).unwrap(),
            PlaneParams::new(Vec3::x(), 0.8).unwrap(),
            PlaneParams::new(Vec3::y(), 0.8).unwrap(),
        ];
        let extents = [
            PlaneExtent {
                center: Vec3::new(0.45, 0.0, 0.0),
                half_widths: [0.5, 0.5],
            },
            PlaneExtent {
                center: Vec3::new(0.8, 0.0, 0.4),
                half_widths: [0.5, 0.5],
            },
            PlaneExtent {
                center: Vec3::new(0.0, 0.8, 0.4),
                half_widths: [0.5, 0.5],
            },
        ];
        Self::new(
            RobotModel::denso_vs060(),
            ExtrinsicParams::nominal_mount(),
            planes,
            extents,
            JointLimits::default(),
            ScanGeometry::default(),
        )
        .expect("default scene is valid")
    }
}

/// Ranges for the random errors added to a true model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationConfig {
    pub linear_range: f64,
    pub angular_range: f64,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            linear_range: 0.002,
            angular_range: 1f64.to_radians(),
            seed: 0,
        }
    }
}

/// Gaussian draw with σ = range/2, resampled until it falls inside ±range.
fn truncated_gaussian<R: Rng>(rng: &mut R, range: f64) -> f64 {
    if range <= 0.0 {
        return 0.0;
    }
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let v = 0.5 * range * z;
        if v.abs() <= range {
            return v;
        }
    }
}

/// Adds bounded Gaussian errors to every DH and extrinsic parameter.
///
/// Lengths (`a`, `d`, mount position) get draws within ±`linear_range`;
/// angles (`α`, `θ_offset`, two tilts of the mount axis, mount angle)
/// within ±`angular_range`.
pub fn make_perturbed_model(
    true_robot: &RobotModel,
    true_ext: &ExtrinsicParams,
    cfg: &PerturbationConfig,
) -> Result<(RobotModel, ExtrinsicParams)> {
    if !(cfg.linear_range >= 0.0 && cfg.angular_range >= 0.0) {
        return Err(Error::InvalidInput("perturbation ranges must be non-negative".into()));
    }
    let mut rng = rng::stream(cfg.seed, &[0x5052_5442]);
    let (lin, ang) = (cfg.linear_range, cfg.angular_range);
    let mut robot = *true_robot;
    for row in robot.rows_mut() {
        row.alpha += truncated_gaussian(&mut rng, ang);
        row.a += truncated_gaussian(&mut rng, lin);
        row.theta_offset += truncated_gaussian(&mut rng, ang);
        row.d += truncated_gaussian(&mut rng, lin);
    }

    let axis = *true_ext.rotation.axis();
    let (u, v) = plane_axes(&axis);
    let tilt_u = truncated_gaussian(&mut rng, ang);
    let tilt_v = truncated_gaussian(&mut rng, ang);
    let d_angle = truncated_gaussian(&mut rng, ang);
    let new_axis = rodrigues(&u, tilt_u) * rodrigues(&v, tilt_v) * axis;
    let rotation = if ang == 0.0 {
        true_ext.rotation
    } else {
        AxisAngle::canonical(new_axis, true_ext.rotation.angle() + d_angle)?
    };
    let position = true_ext.position
        + Vec3::new(
            truncated_gaussian(&mut rng, lin),
            truncated_gaussian(&mut rng, lin),
            truncated_gaussian(&mut rng, lin),
        );
    Ok((robot, ExtrinsicParams::new(rotation, position)))
}

/// One pose's measurement: joint angles and the selected scan points.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanRecord {
    /// Zero-based plane slot (written as `k = plane + 1` in files).
    pub plane: usize,
    pub pose: usize,
    pub joints: JointVector,
    pub points: Vec<ScanPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Provenance {
    pub pose_seed: u64,
    pub noise_seed: u64,
    pub sigma_noise: f64,
    pub poses_per_plane: usize,
    pub points_per_scan: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanDataset {
    pub records: Vec<ScanRecord>,
    pub provenance: Provenance,
}

impl ScanDataset {
    pub fn num_points(&self) -> usize {
        self.records.iter().map(|r| r.points.len()).sum()
    }

    pub fn records_for_plane(&self, plane: usize) -> impl Iterator<Item = &ScanRecord> {
        self.records.iter().filter(move |r| r.plane == plane)
    }

    /// Keeps only the records of the given planes.
    pub fn restricted_to(&self, planes: &[usize]) -> ScanDataset {
        ScanDataset {
            records: self.records.iter().filter(|r| planes.contains(&r.plane)).cloned().collect(),
            provenance: self.provenance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            if r.plane >= NUM_PLANES {
                return Err(Error::InvalidInput(format!("record has plane index {}", r.plane + 1)));
            }
            if r.points.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "record (k={}, j={}) has no points",
                    r.plane + 1,
                    r.pose
                )));
            }
            let finite = r.joints.0.iter().all(|v| v.is_finite())
                && r.points.iter().all(|p| p.x.is_finite() && p.z.is_finite());
            if !finite {
                return Err(Error::InvalidInput(format!(
                    "record (k={}, j={}) is not finite",
                    r.plane + 1,
                    r.pose
                )));
            }
        }
        Ok(())
    }
}

/// How calibration poses are synthesized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSampling {
    /// Range along the central ray from LRF origin to the plane (meters).
    pub standoff: (f64, f64),
    /// Upper bound on the angle between the central ray and the plane normal.
    pub max_incidence: f64,
    pub min_spacing: f64,
    pub max_attempts: usize,
    pub ik_restarts: usize,
}

impl Default for PoseSampling {
    fn default() -> Self {
        Self {
            standoff: (0.15, 0.60),
            max_incidence: 45f64.to_radians(),
            min_spacing: 0.05,
            max_attempts: 10_000,
            ik_restarts: 3,
        }
    }
}

/// Consecutive rejections on spacing alone after which spacing is waived.
const SPACING_PATIENCE: usize = 200;

/// Range along a LRF-frame beam to the plane, if the beam hits it inside
/// its extent in front of the sensor.
fn beam_hit(
    lrf_pose: &Transform,
    plane: &PlaneParams,
    extent: &PlaneExtent,
    beam_angle: f64,
) -> Option<f64> {
    let o = lrf_pose.translation();
    let d = lrf_pose.transform_vector(&beam_direction(beam_angle));
    let denom = plane.normal().dot(&d);
    if denom.abs() < 1e-9 {
        return None;
    }
    let rho = (plane.offset() - plane.normal().dot(o)) / denom;
    if !(rho.is_finite() && rho > 0.0) {
        return None;
    }
    extent.contains(plane, &(o + d * rho)).then_some(rho)
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

fn rotation_error(target: &Mat3, current: &Mat3) -> Vec3 {
    let aa = rotation_to_axis_angle(&(target * current.transpose()));
    aa.axis() * aa.angle()
}

/// Damped least-squares IK on the flange pose.
fn solve_ik(model: &RobotModel, target: &Transform, seed: JointVector, limits: &JointLimits) -> Option<JointVector> {
    const ITERATIONS: usize = 200;
    const TOL: f64 = 1e-8;
    const DAMPING_SQ: f64 = 1e-4;
    const STEP: f64 = 1e-7;
    const MAX_DQ: f64 = 0.5;

    let pose_error = |t: &Transform| -> nalgebra::Vector6<f64> {
        let dp = target.translation() - t.translation();
        let dw = rotation_error(target.rotation(), t.rotation());
        nalgebra::Vector6::new(dp.x, dp.y, dp.z, dw.x, dw.y, dw.z)
    };

    let mut q = seed;
    for _ in 0..ITERATIONS {
        let t = forward_kinematics(model, &q);
        let e = pose_error(&t);
        if e.norm() < TOL {
            let wrapped = JointVector(q.0.map(wrap_angle));
            return limits.contains(&wrapped).then_some(wrapped);
        }
        let mut jac = nalgebra::Matrix6::<f64>::zeros();
        for i in 0..NUM_JOINTS {
            let mut qh = q;
            qh.0[i] += STEP;
            let th = forward_kinematics(model, &qh);
            let dp = (th.translation() - t.translation()) / STEP;
            let dw = rotation_error(th.rotation(), t.rotation()) / STEP;
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&dp);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&dw);
        }
        let jjt = jac * jac.transpose() + nalgebra::Matrix6::identity() * DAMPING_SQ;
        let y = jjt.cholesky()?.solve(&e);
        let mut dq = jac.transpose() * y;
        let largest = dq.amax();
        if largest > MAX_DQ {
            dq *= MAX_DQ / largest;
        }
        for i in 0..NUM_JOINTS {
            q.0[i] += dq[i];
        }
    }
    None
}

fn random_joints<R: Rng>(rng: &mut R, limits: &JointLimits) -> JointVector {
    JointVector(std::array::from_fn(|i| rng.random_range(limits.lower[i]..=limits.upper[i])))
}

/// Checks a candidate configuration against the sampling constraints and
/// returns the central-ray target point.
fn admissible_target(scene: &Scene, plane: usize, q: &JointVector, sampling: &PoseSampling) -> Option<Vec3> {
    let pose = lrf_pose_in_base(&scene.true_robot, q, &scene.true_ext);
    let p = &scene.true_planes[plane];
    let e = &scene.plane_extents[plane];
    let rho = beam_hit(&pose, p, e, 0.0)?;
    let slack = 1e-6;
    if rho < sampling.standoff.0 - slack || rho > sampling.standoff.1 + slack {
        return None;
    }
    let half = scene.scan.fan_half_angle;
    beam_hit(&pose, p, e, -half)?;
    beam_hit(&pose, p, e, half)?;
    let d = pose.transform_vector(&Vec3::z());
    Some(pose.translation() + d * rho)
}

/// Finds `n` joint configurations whose central LRF ray hits plane
/// `plane` (zero-based) inside its extent, with the whole fan on the
/// plane and targets spread at least `min_spacing` apart while that is
/// still achievable.
pub fn sample_calibration_poses(
    scene: &Scene,
    plane: usize,
    n: usize,
    sampling: &PoseSampling,
    seed: u64,
) -> Result<Vec<JointVector>> {
    if plane >= NUM_PLANES {
        return Err(Error::InvalidInput(format!("plane index {} out of range", plane + 1)));
    }
    let mut rng = rng::stream(seed, &[0x504F_5345, plane as u64]);
    let p = &scene.true_planes[plane];
    let extent = &scene.plane_extents[plane];
    let (u, v) = plane_axes(p.normal());
    let home = forward_kinematics(&scene.true_robot, &JointVector::zeros());
    // the side of the plane the robot stands on
    let side = if p.residual(home.translation()) >= 0.0 { *p.normal() } else { -p.normal() };
    let mount_inv = scene.true_ext.to_transform().invert();

    let mut poses = Vec::with_capacity(n);
    let mut targets: Vec<Vec3> = Vec::with_capacity(n);
    let mut spacing_rejects = 0;
    let mut attempts = 0;
    while poses.len() < n {
        if attempts >= sampling.max_attempts {
            return Err(Error::SamplingFailed {
                plane: plane + 1,
                attempts,
                found: poses.len(),
                requested: n,
            });
        }
        attempts += 1;

        let target = extent.center
            + u * rng.random_range(-extent.half_widths[0]..=extent.half_widths[0])
            + v * rng.random_range(-extent.half_widths[1]..=extent.half_widths[1]);
        let enforce_spacing = spacing_rejects < SPACING_PATIENCE;
        if enforce_spacing && targets.iter().any(|t| (t - target).norm() < sampling.min_spacing) {
            spacing_rejects += 1;
            continue;
        }

        let incidence = rng.random_range(0.0..=sampling.max_incidence);
        let azimuth = rng.random_range(0.0..TAU);
        let roll = rng.random_range(0.0..TAU);
        let standoff = rng.random_range(sampling.standoff.0..=sampling.standoff.1);
        let ray = -side * incidence.cos() + (u * azimuth.cos() + v * azimuth.sin()) * incidence.sin();
        let (a, b) = plane_axes(&ray);
        let x_axis = a * roll.cos() + b * roll.sin();
        let y_axis = ray.cross(&x_axis);
        let lrf_rot = Mat3::from_columns(&[x_axis, y_axis, ray]);
        let lrf_pose = Transform::from_parts(lrf_rot, target - ray * standoff);
        let flange_target = lrf_pose.compose(&mount_inv);

        let solution = (0..sampling.ik_restarts.max(1)).find_map(|_| {
            let seed_q = random_joints(&mut rng, &scene.joint_limits);
            solve_ik(&scene.true_robot, &flange_target, seed_q, &scene.joint_limits)
        });
        let Some(q) = solution else { continue };
        let Some(hit) = admissible_target(scene, plane, &q, sampling) else { continue };
        if enforce_spacing && targets.iter().any(|t| (t - hit).norm() < sampling.min_spacing) {
            spacing_rejects += 1;
            continue;
        }
        spacing_rejects = 0;
        targets.push(hit);
        poses.push(q);
    }
    Ok(poses)
}

/// Simulates `m` evenly spaced fan rays at configuration `q` under the
/// scene's true model, adding zero-mean range noise of std `sigma_noise`.
pub fn simulate_scan(
    scene: &Scene,
    q: &JointVector,
    plane: usize,
    pose_index: usize,
    m: usize,
    sigma_noise: f64,
    seed: u64,
) -> Result<ScanRecord> {
    if plane >= NUM_PLANES {
        return Err(Error::InvalidInput(format!("plane index {} out of range", plane + 1)));
    }
    if m == 0 {
        return Err(Error::InvalidInput("at least one point per scan is required".into()));
    }
    if !(sigma_noise >= 0.0 && sigma_noise.is_finite()) {
        return Err(Error::InvalidInput("noise std must be finite and non-negative".into()));
    }
    let pose = lrf_pose_in_base(&scene.true_robot, q, &scene.true_ext);
    let p = &scene.true_planes[plane];
    let e = &scene.plane_extents[plane];
    let angles = scene.scan.beam_angles(m);
    let ranges: Vec<Option<f64>> = angles.iter().map(|a| beam_hit(&pose, p, e, *a)).collect();
    let available = ranges.iter().filter(|r| r.is_some()).count();
    if available < m {
        return Err(Error::InsufficientRays {
            plane: plane + 1,
            available,
            requested: m,
        });
    }
    let noise = Normal::new(0.0, sigma_noise).expect("validated std");
    let mut rng = rng::stream(seed, &[0x5343_414E, plane as u64, pose_index as u64]);
    let points = angles
        .iter()
        .zip(ranges)
        .map(|(a, rho)| {
            let eps = if sigma_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let r = rho.expect("checked") + eps;
            ScanPoint::new(r * a.sin(), r * a.cos())
        })
        .collect();
    Ok(ScanRecord {
        plane,
        pose: pose_index,
        joints: *q,
        points,
    })
}

/// Plane priors at a set distance from the truth.
///
/// Each normal is tilted by exactly `tilt` about a random in-plane axis
/// through the plane's extent center, then the plane is shifted by exactly
/// `shift` along its new normal, in a random direction.
pub fn disturb_planes(scene: &Scene, shift: f64, tilt: f64, seed: u64) -> Result<[PlaneParams; NUM_PLANES]> {
    if !(shift.is_finite() && shift >= 0.0 && tilt.is_finite() && (0.0..PI / 2.0).contains(&tilt)) {
        return Err(Error::InvalidInput("plane disturbance must be finite, tilt below 90°".into()));
    }
    let mut out = scene.true_planes;
    for (k, plane) in out.iter_mut().enumerate() {
        let mut rng = rng::stream(seed, &[0x504c_414e, k as u64]);
        let (u, v) = plane_axes(plane.normal());
        let phi = rng.random_range(0.0..TAU);
        let axis = u * phi.cos() + v * phi.sin();
        let normal = rodrigues(&axis, tilt) * plane.normal();
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let offset = normal.dot(&scene.plane_extents[k].center) + sign * shift;
        *plane = PlaneParams::from_unnormalized(normal, offset)?;
    }
    Ok(out)
}

/// Parameters of one synthetic dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetSpec {
    pub poses_per_plane: usize,
    pub points_per_scan: usize,
    pub sigma_noise: f64,
    pub pose_seed: u64,
    pub noise_seed: u64,
}

/// Samples poses for each plane and simulates one scan per pose.
pub fn generate_dataset(scene: &Scene, spec: &DatasetSpec, sampling: &PoseSampling) -> Result<ScanDataset> {
    let per_plane: Vec<Result<Vec<ScanRecord>>> = (0..NUM_PLANES)
        .into_par_iter()
        .map(|k| {
            let poses = sample_calibration_poses(scene, k, spec.poses_per_plane, sampling, spec.pose_seed)?;
            poses
                .iter()
                .enumerate()
                .map(|(j, q)| simulate_scan(scene, q, k, j, spec.points_per_scan, spec.sigma_noise, spec.noise_seed))
                .collect()
        })
        .collect();
    let mut records = Vec::with_capacity(NUM_PLANES * spec.poses_per_plane);
    for r in per_plane {
        records.extend(r?);
    }
    Ok(ScanDataset {
        records,
        provenance: Provenance {
            pose_seed: spec.pose_seed,
            noise_seed: spec.noise_seed,
            sigma_noise: spec.sigma_noise,
            poses_per_plane: spec.poses_per_plane,
            points_per_scan: spec.points_per_scan,
        },
    })
}
