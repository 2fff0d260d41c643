//! `planecal`: simulate, calibrate and evaluate from the command line.
//!
//! Every stage reads and writes plain JSON files, so the pipeline can be
//! run in one go or one stage at a time. Failures exit nonzero with a JSON
//! error object on stderr.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use planecal::calibrator::FixedMask;
use planecal::config::RunConfig;
use planecal::io;
use planecal::pipeline::{self, SweepKind};
use planecal::simulator::Scene;

#[derive(Parser, Debug)]
#[command(name = "planecal", version, about = "Robot and 2D laser scanner calibration from three planes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset, the perturbed start model and plane priors.
    Simulate(SimulateArgs),
    /// Linear scanner-mount estimate from the first plane's scans.
    Init(InitArgs),
    /// Singular-value analysis of the identification Jacobian and the fixed mask.
    Identify(IdentifyArgs),
    /// Joint Levenberg–Marquardt refinement.
    Calibrate(CalibrateArgs),
    /// Compare a calibrated model with the ground truth over random poses.
    Evaluate(EvaluateArgs),
    /// All stages in order.
    Pipeline(PipelineArgs),
    /// Repeat the pipeline over a grid of one setting and write a CSV.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// JSON run configuration (millimeters and degrees).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parent seed of every random stream.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_mm: Option<f64>,
    #[arg(long)]
    poses_per_plane: Option<usize>,
    #[arg(long)]
    points_per_scan: Option<usize>,
    /// Random poses used for evaluation.
    #[arg(long)]
    eval_poses: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg: RunConfig = match &self.config {
            Some(path) => io::read_json(path)?,
            None => RunConfig::default(),
        };
        if let (Some(model), Some(path)) = (cfg.model.as_mut(), &self.config) {
            // relative model paths are relative to the config file
            if model.is_relative() {
                *model = path.parent().unwrap_or(Path::new(".")).join(&*model);
            }
        }
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.noise_mm = self.noise_mm.unwrap_or(cfg.noise_mm);
        cfg.poses_per_plane = self.poses_per_plane.unwrap_or(cfg.poses_per_plane);
        cfg.points_per_scan = self.points_per_scan.unwrap_or(cfg.points_per_scan);
        cfg.eval_poses = self.eval_poses.unwrap_or(cfg.eval_poses);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InitArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Robot model used for the forward kinematics.
    #[arg(long)]
    robot: PathBuf,
    /// Plane priors; the first plane is used.
    #[arg(long)]
    planes: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct IdentifyArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Model at which the Jacobian is taken (normally the nominal one).
    #[arg(long)]
    robot: PathBuf,
    #[arg(long)]
    extrinsic: PathBuf,
    #[arg(long)]
    planes: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Starting robot model.
    #[arg(long)]
    robot: PathBuf,
    /// Nominal robot model; fixed DH entries take its values.
    #[arg(long)]
    nominal: PathBuf,
    #[arg(long)]
    extrinsic: PathBuf,
    #[arg(long)]
    planes: PathBuf,
    /// Mask file: an identifiability report, a result, or a JSON list of names.
    #[arg(long, conflicts_with = "fixed")]
    mask: Option<PathBuf>,
    /// Comma-separated parameter names to fix, e.g. `d6,theta6`.
    #[arg(long, value_delimiter = ',')]
    fixed: Option<Vec<String>>,
    /// Repeat the identifiability analysis at the calibrated model.
    #[arg(long)]
    reanalyze: bool,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Calibration result file.
    #[arg(long)]
    result: PathBuf,
    #[arg(long)]
    truth_robot: PathBuf,
    #[arg(long)]
    truth_extrinsic: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    reanalyze: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// noise, poses, points, plane_position or plane_orientation.
    #[arg(long)]
    kind: String,
    /// Comma-separated grid (mm for noise and plane_position, degrees for
    /// plane_orientation, 3N for poses, M for points).
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    /// Cells run in parallel; defaults to the number of CPUs.
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = args.config.load()?;
    ensure_dir(&args.out)?;
    let exp = pipeline::simulate(&cfg)?;
    output::write_experiment(&args.out, &cfg, &exp)?;
    output::print_line(serde_json::json!({
        "dataset": args.out.join(output::DATASET),
        "records": exp.dataset.records.len(),
        "points": exp.dataset.num_points(),
    }));
    Ok(())
}

fn init(args: &InitArgs) -> Result<()> {
    let data = io::read_dataset(&args.dataset)?;
    let robot = io::read_model(&args.robot)?;
    let planes = io::read_planes(&args.planes)?;
    ensure_dir(&args.out)?;
    let ext = pipeline::stage_init(&data, &robot, &planes)?;
    let path = args.out.join(output::EXTRINSIC_INIT);
    io::write_extrinsic(&path, &ext)?;
    output::print_line(serde_json::json!({ "extrinsic": path }));
    Ok(())
}

fn identify(args: &IdentifyArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let data = io::read_dataset(&args.dataset)?;
    let robot = io::read_model(&args.robot)?;
    let ext = io::read_extrinsic(&args.extrinsic)?;
    let planes = io::read_planes(&args.planes)?;
    ensure_dir(&args.out)?;
    let id = pipeline::stage_identify(&data, &robot, &ext, &planes, &cfg.identifiability)?;
    let path = args.out.join(output::REPORT);
    output::write_report(&path, &id)?;
    output::print_line(serde_json::json!({
        "report": path,
        "null_count": id.report.null_count(),
        "mask": id.mask.names(),
    }));
    Ok(())
}

fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let data = io::read_dataset(&args.dataset)?;
    let start = io::read_model(&args.robot)?;
    let nominal = io::read_model(&args.nominal)?;
    let ext = io::read_extrinsic(&args.extrinsic)?;
    let planes = io::read_planes(&args.planes)?;
    let mask = match (&args.mask, &args.fixed) {
        (Some(path), _) => io::read_mask(path)?,
        (None, Some(names)) => FixedMask::from_names(names)?,
        (None, None) => match &cfg.mask {
            Some(names) => FixedMask::from_names(names)?,
            None => bail!("no fixed mask given: pass --mask or --fixed"),
        },
    };
    ensure_dir(&args.out)?;
    let result = pipeline::stage_calibrate(&data, &start, &nominal, &ext, &planes, &mask, &cfg.lm)?;
    let path = args.out.join(output::RESULT);
    io::write_result(&path, &result)?;
    if args.reanalyze || cfg.reanalyze {
        let id = pipeline::stage_identify(&data, &result.robot, &result.ext, &result.planes, &cfg.identifiability)?;
        output::write_report(&args.out.join(output::REPORT_AT_OPTIMUM), &id)?;
    }
    output::print_line(serde_json::json!({
        "result": path,
        "final_cost": result.diagnostics.final_cost,
        "iterations": result.diagnostics.iterations,
        "termination": result.diagnostics.termination,
    }));
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let (robot, ext, _) = io::read_result(&args.result)?.models()?;
    let truth_robot = io::read_model(&args.truth_robot)?;
    let truth_ext = io::read_extrinsic(&args.truth_extrinsic)?;
    ensure_dir(&args.out)?;
    let limits = Scene::default_setup().joint_limits;
    let stats = pipeline::stage_evaluate(
        (&robot, &ext),
        (&truth_robot, &truth_ext),
        &limits,
        cfg.eval_poses,
        cfg.seeds().eval,
    );
    let path = args.out.join(output::STATS);
    io::write_stats(&path, &stats)?;
    output::print_line(serde_json::to_value(io::StatsFile::from(&stats))?);
    Ok(())
}

fn run_pipeline(args: &PipelineArgs) -> Result<()> {
    let mut cfg = args.config.load()?;
    cfg.reanalyze |= args.reanalyze;
    ensure_dir(&args.out)?;
    let out = pipeline::run_pipeline(&cfg)?;
    output::write_pipeline(&args.out, &cfg, &out)?;
    output::print_line(output::summary(&out));
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let kind = SweepKind::parse(&args.kind)?;
    ensure_dir(&args.out)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        builder = builder.num_threads(jobs);
    }
    let pool = builder.build().context("cannot start worker threads")?;
    let rows = pool.install(|| pipeline::run_sweep(&cfg, kind, &args.grid, args.repetitions))?;
    let path = args.out.join(format!("sweep_{}.csv", args.kind));
    output::write_sweep_csv(&path, &rows)?;
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    output::print_line(serde_json::json!({ "csv": path, "rows": rows.len(), "failed": failed }));
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Init(a) => init(a),
        Command::Identify(a) => identify(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Pipeline(a) => run_pipeline(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) if !err.use_stderr() => err.exit(),
        Err(err) => {
            eprintln!("{}", output::usage_json(&err));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", output::error_json(&err));
            ExitCode::FAILURE
        }
    }
}
