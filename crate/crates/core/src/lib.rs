//! Joint calibration of a serial arm's kinematic parameters and a 2D laser
//! scanner's mount, using only scans of three planes.
//!
//! The modules follow the pipeline: [`geometry`] and [`kinematics`] model
//! the arm, [`lrf`] the scanner, [`simulator`] builds synthetic data,
//! [`init_estimate`] gives a linear first guess for the mount,
//! [`calibrator`] refines everything with Levenberg–Marquardt, and
//! [`identifiability`] decides which parameters must stay fixed.
//! [`evaluation`] measures the result, and [`pipeline`] runs the stages in
//! order. [`io`] holds the file formats and [`config`] the run settings.
//!
//! ```
//! use planecal::config::RunConfig;
//! use planecal::pipeline::run_pipeline;
//!
//! let cfg = RunConfig { poses_per_plane: 20, points_per_scan: 20, eval_poses: 100, ..RunConfig::default() };
//! let out = run_pipeline(&cfg)?;
//! assert_eq!(out.identification.report.null_count(), 7);
//! # Ok::<(), planecal::Error>(())
//! ```

pub mod calibrator;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod identifiability;
pub mod init_estimate;
pub mod io;
pub mod kinematics;
pub mod lrf;
pub mod pipeline;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};

/// The guide's chapters, compiled so that their snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/kinematics.md")]
    mod kinematics {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/initial_estimate.md")]
    mod initial_estimate {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/identifiability.md")]
    mod identifiability {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
