//! Run configuration, in millimeters and degrees.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::calibrator::lm::LmOptions;
use crate::error::{Error, Result};
use crate::identifiability::AnalysisOptions;
use crate::rng::derive_seed;
use crate::simulator::{DatasetSpec, PerturbationConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSettings {
    /// Bound on every length error (a, d, mount position).
    pub linear_mm: f64,
    /// Bound on every angle error (α, θ offset, mount axis tilt and angle).
    pub angular_deg: f64,
}

impl Default for PerturbationSettings {
    fn default() -> Self {
        Self {
            linear_mm: 2.0,
            angular_deg: 1.0,
        }
    }
}

/// How far the plane priors handed to the calibrator are from the truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanePriorSettings {
    pub position_mm: f64,
    pub orientation_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Robot model file; the built-in Denso VS060 table when absent.
    pub model: Option<PathBuf>,
    pub poses_per_plane: usize,
    pub points_per_scan: usize,
    pub noise_mm: f64,
    pub perturbation: PerturbationSettings,
    pub plane_prior: PlanePriorSettings,
    /// Parent of every random stream in a run.
    pub seed: u64,
    pub eval_poses: usize,
    pub lm: LmOptions,
    pub identifiability: AnalysisOptions,
    /// Overrides the mask suggested by the identifiability analysis.
    pub mask: Option<Vec<String>>,
    /// Repeat the identifiability analysis at the calibrated model.
    pub reanalyze: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: None,
            poses_per_plane: 40,
            points_per_scan: 100,
            noise_mm: 0.1,
            perturbation: PerturbationSettings::default(),
            plane_prior: PlanePriorSettings::default(),
            seed: 1,
            eval_poses: 10_000,
            lm: LmOptions::default(),
            identifiability: AnalysisOptions::default(),
            mask: None,
            reanalyze: false,
        }
    }
}

/// The independent random streams of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub poses: u64,
    pub noise: u64,
    pub perturbation: u64,
    pub plane_prior: u64,
    pub eval: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("config: {what}")));
        if self.poses_per_plane == 0 || self.points_per_scan == 0 || self.eval_poses == 0 {
            return bad("pose, point and evaluation counts must be positive");
        }
        if !(self.noise_mm.is_finite() && self.noise_mm >= 0.0) {
            return bad("noise_mm must be non-negative");
        }
        let p = &self.perturbation;
        let q = &self.plane_prior;
        for v in [p.linear_mm, p.angular_deg, q.position_mm, q.orientation_deg] {
            if !(v.is_finite() && v >= 0.0) {
                return bad("perturbation and plane-prior magnitudes must be non-negative");
            }
        }
        if q.orientation_deg >= 90.0 {
            return bad("plane_prior.orientation_deg must stay below 90");
        }
        let a = &self.identifiability;
        if !(a.threshold > 0.0 && a.threshold < a.weak_band && a.membership > 0.0 && a.membership < 1.0) {
            return bad("identifiability needs 0 < threshold < weak_band and 0 < membership < 1");
        }
        if let Some(model) = &self.model {
            if !model.exists() {
                return Err(Error::InvalidInput(format!("config: model file {} does not exist", model.display())));
            }
        }
        self.lm.validate()
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            poses: derive_seed(self.seed, &[1]),
            noise: derive_seed(self.seed, &[2]),
            perturbation: derive_seed(self.seed, &[3]),
            plane_prior: derive_seed(self.seed, &[4]),
            eval: derive_seed(self.seed, &[5]),
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        let s = self.seeds();
        DatasetSpec {
            poses_per_plane: self.poses_per_plane,
            points_per_scan: self.points_per_scan,
            sigma_noise: self.noise_mm * 1e-3,
            pose_seed: s.poses,
            noise_seed: s.noise,
        }
    }

    pub fn perturbation_config(&self) -> PerturbationConfig {
        PerturbationConfig {
            linear_range: self.perturbation.linear_mm * 1e-3,
            angular_range: self.perturbation.angular_deg.to_radians(),
            seed: self.seeds().perturbation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_headline_experiment() {
        let c = RunConfig::default();
        assert_eq!(3 * c.poses_per_plane, 120);
        assert_eq!(c.points_per_scan, 100);
        assert_eq!(c.dataset_spec().sigma_noise, 1e-4);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"noise_mm": 0.5, "lm": {"max_iterations": 20}}"#).unwrap();
        assert_eq!(c.noise_mm, 0.5);
        assert_eq!(c.lm.max_iterations, 20);
        assert_eq!(c.lm.initial_damping, 1e-3);
        assert_eq!(c.points_per_scan, 100);
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"noise": 0.5}"#).is_err());
        let c = RunConfig {
            noise_mm: -1.0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn streams_differ_and_follow_the_seed() {
        let s = RunConfig::default().seeds();
        let all = [s.poses, s.noise, s.perturbation, s.plane_prior, s.eval];
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
        let other = RunConfig {
            seed: 2,
            ..RunConfig::default()
        };
        assert_ne!(other.seeds().poses, s.poses);
    }
}
