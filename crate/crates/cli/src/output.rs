//! File layout of a run directory and the stdout/stderr JSON lines.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use planecal::config::RunConfig;
use planecal::io::{self, StatsFile};
use planecal::pipeline::{Experiment, Identification, PipelineOutput, SweepRow};

pub const DATASET: &str = "dataset.jsonl";
pub const NOMINAL_ROBOT: &str = "nominal_robot.json";
pub const TRUTH_EXTRINSIC: &str = "truth_extrinsic.json";
pub const TRUTH_PLANES: &str = "truth_planes.json";
pub const START_ROBOT: &str = "start_robot.json";
pub const START_EXTRINSIC: &str = "start_extrinsic.json";
pub const PLANES_PRIOR: &str = "planes_prior.json";
pub const EXTRINSIC_INIT: &str = "extrinsic_init.json";
pub const REPORT: &str = "report.json";
pub const REPORT_AT_OPTIMUM: &str = "report_optimum.json";
pub const RESULT: &str = "result.json";
pub const STATS: &str = "stats.json";
pub const SUMMARY: &str = "summary.json";
pub const CONFIG: &str = "config.json";

pub fn print_line(value: Value) {
    println!("{value}");
}

pub fn error_json(err: &anyhow::Error) -> Value {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<planecal::Error>())
        .map_or("cli", planecal::Error::kind);
    json!({ "error": { "kind": kind, "message": format!("{err:#}") } })
}

/// Argument errors, rendered without clap's usage banner.
pub fn usage_json(err: &clap::Error) -> Value {
    let text = err.to_string();
    let message = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
    json!({ "error": { "kind": "usage", "message": message } })
}

pub fn write_experiment(dir: &Path, cfg: &RunConfig, exp: &Experiment) -> Result<()> {
    io::write_json(&dir.join(CONFIG), cfg)?;
    io::write_dataset(&dir.join(DATASET), &exp.dataset)?;
    io::write_model(&dir.join(NOMINAL_ROBOT), &exp.nominal)?;
    io::write_extrinsic(&dir.join(TRUTH_EXTRINSIC), &exp.scene.true_ext)?;
    io::write_planes(&dir.join(TRUTH_PLANES), &exp.scene.true_planes)?;
    io::write_model(&dir.join(START_ROBOT), &exp.start_robot)?;
    io::write_extrinsic(&dir.join(START_EXTRINSIC), &exp.start_ext)?;
    io::write_planes(&dir.join(PLANES_PRIOR), &exp.plane_priors)?;
    Ok(())
}

pub fn write_report(path: &Path, id: &Identification) -> Result<()> {
    io::write_json(path, &io::report_to_json(&id.report, &id.mask, &id.resolved))?;
    Ok(())
}

pub fn summary(out: &PipelineOutput) -> Value {
    let d = &out.calibration.diagnostics;
    let planes: Vec<Value> = out
        .plane_errors
        .iter()
        .map(|(dl, ang)| json!({ "offset_error_mm": dl * 1e3, "normal_error_deg": ang.to_degrees() }))
        .collect();
    json!({
        "initial": StatsFile::from(&out.initial_stats),
        "after_init": StatsFile::from(&out.init_stats),
        "final": StatsFile::from(&out.final_stats),
        "planes": planes,
        "null_count": out.identification.report.null_count(),
        "fixed": out.mask.names(),
        "termination": d.termination,
        "iterations": d.iterations,
        "final_cost": d.final_cost,
        "num_residuals": out.calibration.num_residuals,
    })
}

pub fn write_pipeline(dir: &Path, cfg: &RunConfig, out: &PipelineOutput) -> Result<()> {
    write_experiment(dir, cfg, &out.experiment)?;
    io::write_extrinsic(&dir.join(EXTRINSIC_INIT), &out.init_ext)?;
    write_report(&dir.join(REPORT), &out.identification)?;
    io::write_result(&dir.join(RESULT), &out.calibration)?;
    io::write_stats(&dir.join(STATS), &out.final_stats)?;
    if let Some(re) = &out.reanalysis {
        write_report(&dir.join(REPORT_AT_OPTIMUM), re)?;
    }
    io::write_json(&dir.join(SUMMARY), &summary(out))?;
    Ok(())
}

#[derive(Serialize)]
struct CsvRow<'a> {
    sweep_value: f64,
    repetition: usize,
    mean_pos_mm: Option<f64>,
    mean_ori_deg: Option<f64>,
    max_pos_mm: Option<f64>,
    max_ori_deg: Option<f64>,
    final_cost: Option<f64>,
    iterations: Option<usize>,
    error: &'a str,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for row in rows {
        let rec = match &row.outcome {
            Ok(c) => CsvRow {
                sweep_value: row.value,
                repetition: row.repetition,
                mean_pos_mm: Some(c.stats.mean_position * 1e3),
                mean_ori_deg: Some(c.stats.mean_orientation.to_degrees()),
                max_pos_mm: Some(c.stats.max_position * 1e3),
                max_ori_deg: Some(c.stats.max_orientation.to_degrees()),
                final_cost: Some(c.final_cost),
                iterations: Some(c.iterations),
                error: "",
            },
            Err(msg) => CsvRow {
                sweep_value: row.value,
                repetition: row.repetition,
                mean_pos_mm: None,
                mean_ori_deg: None,
                max_pos_mm: None,
                max_ori_deg: None,
                final_cost: None,
                iterations: None,
                error: msg,
            },
        };
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}
