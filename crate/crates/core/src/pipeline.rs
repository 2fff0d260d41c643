//! The end-to-end experiment: simulate, estimate the mount, analyse
//! identifiability, calibrate and evaluate. Each stage is also exposed on
//! its own so that it can be run from files.

use rayon::prelude::*;

use crate::calibrator::{calibrate, pin_fixed_dh, CalibrationResult, FixedMask, LmOptions, ParameterVector};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_model, ErrorStats};
use crate::geometry::PlaneParams;
use crate::identifiability::{analyze, resolve_combos, AnalysisOptions, IdentifiabilityReport, ResolvedCombo};
use crate::init_estimate::solve_extrinsic_lsq;
use crate::io;
use crate::kinematics::{JointLimits, RobotModel};
use crate::lrf::ExtrinsicParams;
use crate::rng::derive_seed;
use crate::simulator::{
    disturb_planes, generate_dataset, make_perturbed_model, PoseSampling, ScanDataset, Scene, NUM_PLANES,
};

/// Everything the simulator hands to the calibration stages.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub scene: Scene,
    /// The model the calibration is told about; also the ground truth.
    pub nominal: RobotModel,
    pub start_robot: RobotModel,
    pub start_ext: ExtrinsicParams,
    pub plane_priors: [PlaneParams; NUM_PLANES],
    pub dataset: ScanDataset,
}

pub fn load_nominal(cfg: &RunConfig) -> Result<RobotModel> {
    match &cfg.model {
        Some(path) => io::read_model(path),
        None => Ok(RobotModel::denso_vs060()),
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<Experiment> {
    cfg.validate()?;
    let nominal = load_nominal(cfg)?;
    let mut scene = Scene::default_setup();
    scene.true_robot = nominal;
    let dataset = generate_dataset(&scene, &cfg.dataset_spec(), &PoseSampling::default())?;
    let (start_robot, start_ext) = make_perturbed_model(&scene.true_robot, &scene.true_ext, &cfg.perturbation_config())?;
    let plane_priors = disturb_planes(
        &scene,
        cfg.plane_prior.position_mm * 1e-3,
        cfg.plane_prior.orientation_deg.to_radians(),
        cfg.seeds().plane_prior,
    )?;
    Ok(Experiment {
        scene,
        nominal,
        start_robot,
        start_ext,
        plane_priors,
        dataset,
    })
}

/// Linear mount estimate from the first plane's scans.
pub fn stage_init(data: &ScanDataset, robot: &RobotModel, planes: &[PlaneParams; NUM_PLANES]) -> Result<ExtrinsicParams> {
    solve_extrinsic_lsq(data.records_for_plane(0), robot, &planes[0])
}

#[derive(Clone, Debug)]
pub struct Identification {
    pub report: IdentifiabilityReport,
    pub mask: FixedMask,
    /// Empty when the mask does not pin the null space one-to-one.
    pub resolved: Vec<ResolvedCombo>,
}

/// Identifiability at the given model.
pub fn stage_identify(
    data: &ScanDataset,
    robot: &RobotModel,
    ext: &ExtrinsicParams,
    planes: &[PlaneParams; NUM_PLANES],
    opts: &AnalysisOptions,
) -> Result<Identification> {
    let pv = ParameterVector::pack(robot, ext, planes, &FixedMask::empty())?;
    let (report, mask) = analyze(&pv, data, opts)?;
    let resolved = resolve_combos(&report, &mask).unwrap_or_default();
    Ok(Identification { report, mask, resolved })
}

/// Calibration from `start`, with the fixed DH entries taken from `nominal`.
#[allow(clippy::too_many_arguments)]
pub fn stage_calibrate(
    data: &ScanDataset,
    start: &RobotModel,
    nominal: &RobotModel,
    ext: &ExtrinsicParams,
    planes: &[PlaneParams; NUM_PLANES],
    mask: &FixedMask,
    opts: &LmOptions,
) -> Result<CalibrationResult> {
    let robot0 = pin_fixed_dh(start, nominal, mask);
    calibrate(data, &robot0, ext, planes, mask, opts)
}

pub fn stage_evaluate(
    model: (&RobotModel, &ExtrinsicParams),
    truth: (&RobotModel, &ExtrinsicParams),
    limits: &JointLimits,
    num_poses: usize,
    seed: u64,
) -> ErrorStats {
    evaluate_model(model, truth, limits, num_poses, seed)
}

/// Offset difference and normal angle between an estimated and a true plane.
pub fn plane_error(estimate: &PlaneParams, truth: &PlaneParams) -> (f64, f64) {
    let cos = estimate.normal().dot(truth.normal()).clamp(-1.0, 1.0);
    // `acos` loses precision near 1; the cross product does not
    let angle = estimate.normal().cross(truth.normal()).norm().atan2(cos);
    ((estimate.offset() - truth.offset()).abs(), angle)
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub experiment: Experiment,
    pub init_ext: ExtrinsicParams,
    pub identification: Identification,
    /// The mask actually used (the configured override, if any).
    pub mask: FixedMask,
    pub calibration: CalibrationResult,
    /// Perturbed robot and mount against the truth.
    pub initial_stats: ErrorStats,
    /// Perturbed robot with the linear mount estimate.
    pub init_stats: ErrorStats,
    pub final_stats: ErrorStats,
    /// Per plane: offset difference (m) and normal angle (rad).
    pub plane_errors: [(f64, f64); NUM_PLANES],
    pub reanalysis: Option<Identification>,
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    let experiment = simulate(cfg)?;
    run_stages(cfg, experiment)
}

/// The calibration stages on an already simulated experiment.
pub fn run_stages(cfg: &RunConfig, experiment: Experiment) -> Result<PipelineOutput> {
    let e = &experiment;
    let data = &e.dataset;
    let init_ext = stage_init(data, &e.start_robot, &e.plane_priors)?;
    let identification = stage_identify(data, &e.nominal, &init_ext, &e.plane_priors, &cfg.identifiability)?;
    let mask = match &cfg.mask {
        Some(names) => FixedMask::from_names(names)?,
        None => identification.mask.clone(),
    };
    let calibration = stage_calibrate(data, &e.start_robot, &e.nominal, &init_ext, &e.plane_priors, &mask, &cfg.lm)?;

    let truth = (&e.scene.true_robot, &e.scene.true_ext);
    let limits = &e.scene.joint_limits;
    let (n, seed) = (cfg.eval_poses, cfg.seeds().eval);
    let initial_stats = stage_evaluate((&e.start_robot, &e.start_ext), truth, limits, n, seed);
    let init_stats = stage_evaluate((&e.start_robot, &init_ext), truth, limits, n, seed);
    let final_stats = stage_evaluate((&calibration.robot, &calibration.ext), truth, limits, n, seed);
    let plane_errors = std::array::from_fn(|k| plane_error(&calibration.planes[k], &e.scene.true_planes[k]));
    let reanalysis = if cfg.reanalyze {
        Some(stage_identify(
            data,
            &calibration.robot,
            &calibration.ext,
            &calibration.planes,
            &cfg.identifiability,
        )?)
    } else {
        None
    };
    Ok(PipelineOutput {
        experiment,
        init_ext,
        identification,
        mask,
        calibration,
        initial_stats,
        init_stats,
        final_stats,
        plane_errors,
        reanalysis,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    /// Noise σ in millimeters.
    Noise,
    /// Total pose count 3N.
    Poses,
    /// Points per scan M.
    Points,
    /// Plane-prior offset error in millimeters.
    PlanePosition,
    /// Plane-prior tilt in degrees.
    PlaneOrientation,
}

impl SweepKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "noise" => Self::Noise,
            "poses" => Self::Poses,
            "points" => Self::Points,
            "plane_position" => Self::PlanePosition,
            "plane_orientation" => Self::PlaneOrientation,
            _ => {
                return Err(Error::InvalidInput(format!(
                    "unknown sweep `{s}` (expected noise, poses, points, plane_position or plane_orientation)"
                )))
            }
        })
    }

    /// Applies one grid value to a copy of `base`.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = base.clone();
        let count = |v: f64, what: &str| -> Result<usize> {
            if v.fract() != 0.0 || v < 1.0 {
                return Err(Error::InvalidInput(format!("{what} must be a positive integer, got {v}")));
            }
            Ok(v as usize)
        };
        match self {
            Self::Noise => cfg.noise_mm = value,
            Self::Poses => {
                let total = count(value, "pose count")?;
                if total % NUM_PLANES != 0 {
                    return Err(Error::InvalidInput(format!("pose count {total} is not a multiple of {NUM_PLANES}")));
                }
                cfg.poses_per_plane = total / NUM_PLANES;
            }
            Self::Points => cfg.points_per_scan = count(value, "point count")?,
            Self::PlanePosition => cfg.plane_prior.position_mm = value,
            Self::PlaneOrientation => cfg.plane_prior.orientation_deg = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub repetition: usize,
    pub outcome: std::result::Result<SweepCell, String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepCell {
    pub stats: ErrorStats,
    pub final_cost: f64,
    pub iterations: usize,
}

/// Runs one pipeline per `(value, repetition)`.
///
/// Repetitions differ only in their noise draw; pose sets, perturbations
/// and plane priors are shared across the grid so that cells are compared
/// on common random numbers. Rows come back ordered by value, then
/// repetition, whatever the degree of parallelism.
pub fn run_sweep(base: &RunConfig, kind: SweepKind, grid: &[f64], repetitions: usize) -> Result<Vec<SweepRow>> {
    if grid.is_empty() || repetitions == 0 {
        return Err(Error::InvalidInput("a sweep needs a non-empty grid and at least one repetition".into()));
    }
    base.validate()?;
    let cells: Vec<(f64, usize)> = grid
        .iter()
        .flat_map(|v| (0..repetitions).map(move |r| (*v, r)))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(value, repetition)| {
            let outcome = kind
                .apply(base, value)
                .and_then(|cfg| run_cell(&cfg, repetition))
                .map_err(|e| e.to_string());
            SweepRow {
                value,
                repetition,
                outcome,
            }
        })
        .collect())
}

fn run_cell(cfg: &RunConfig, repetition: usize) -> Result<SweepCell> {
    let mut experiment_cfg = cfg.clone();
    experiment_cfg.reanalyze = false;
    let mut experiment = simulate(&experiment_cfg)?;
    if repetition > 0 {
        // same poses, fresh noise
        let mut spec = cfg.dataset_spec();
        spec.noise_seed = derive_seed(spec.noise_seed, &[repetition as u64]);
        experiment.dataset = generate_dataset(&experiment.scene, &spec, &PoseSampling::default())?;
    }
    let out = run_stages(&experiment_cfg, experiment)?;
    Ok(SweepCell {
        stats: out.final_stats,
        final_cost: out.calibration.diagnostics.final_cost,
        iterations: out.calibration.diagnostics.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig {
            poses_per_plane: 8,
            points_per_scan: 10,
            noise_mm: 0.0,
            eval_poses: 200,
            ..RunConfig::default()
        }
    }

    #[test]
    fn zero_noise_pipeline_is_exact() {
        let out = run_pipeline(&small()).unwrap();
        assert_eq!(out.mask, FixedMask::default_mask());
        assert!(out.final_stats.mean_position <= 1e-9, "{:?}", out.final_stats);
        assert!(out.final_stats.mean_orientation <= 1e-9);
        assert!(out.initial_stats.mean_position > 1e-3);
        for (dl, da) in out.plane_errors {
            assert!(dl <= 1e-9 && da <= 1e-9);
        }
    }

    #[test]
    fn mask_override_is_honored() {
        let mut cfg = small();
        cfg.mask = Some(vec!["d6".into(), "theta6".into()]);
        let out = run_pipeline(&cfg).unwrap();
        assert_eq!(out.calibration.fixed_names(), vec!["theta6", "d6"]);
        assert_eq!(out.identification.mask, FixedMask::default_mask());
    }

    #[test]
    fn plane_error_examples() {
        let a = PlaneParams::new(nalgebra::Vector3::z(), 0.1).unwrap();
        let b = PlaneParams::from_unnormalized(nalgebra::Vector3::new(0.0, 1e-9, 1.0), 0.1005).unwrap();
        let (dl, da) = plane_error(&a, &b);
        assert!((dl - 5e-4).abs() < 1e-15);
        assert!((da - 1e-9).abs() < 1e-20);
    }

    #[test]
    fn sweep_kinds_apply_their_value() {
        let base = small();
        assert_eq!(SweepKind::parse("poses").unwrap().apply(&base, 60.0).unwrap().poses_per_plane, 20);
        assert!(SweepKind::Poses.apply(&base, 61.0).is_err());
        assert_eq!(SweepKind::Noise.apply(&base, 0.5).unwrap().noise_mm, 0.5);
        assert_eq!(SweepKind::PlaneOrientation.apply(&base, 30.0).unwrap().plane_prior.orientation_deg, 30.0);
        assert!(SweepKind::parse("speed").is_err());
    }

    #[test]
    fn sweep_rows_are_ordered_and_failures_recorded() {
        let rows = run_sweep(&small(), SweepKind::Points, &[10.0, 2.5], 2).unwrap();
        let keys: Vec<(f64, usize)> = rows.iter().map(|r| (r.value, r.repetition)).collect();
        assert_eq!(keys, vec![(10.0, 0), (10.0, 1), (2.5, 0), (2.5, 1)]);
        assert!(rows[0].outcome.is_ok() && rows[1].outcome.is_ok());
        assert!(rows[2].outcome.is_err());
    }
}
