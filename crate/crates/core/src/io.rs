//! JSON and JSON Lines file formats.
//!
//! Human-facing fields use millimeters and degrees, with the unit in the
//! field name. Files written by this crate also carry the exact SI values
//! (`*_m`, `*_rad`, `dh_si`), which readers prefer when present, so a model
//! survives a write/read cycle bit for bit.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::calibrator::params::FixedMask;
use crate::calibrator::CalibrationResult;
use crate::error::{Error, Result};
use crate::evaluation::ErrorStats;
use crate::geometry::{AxisAngle, PlaneParams, Vec3};
use crate::identifiability::{Combo, IdentifiabilityReport, ResolvedCombo};
use crate::kinematics::{DhRow, JointVector, RobotModel, NUM_JOINTS};
use crate::lrf::{ExtrinsicParams, ScanPoint};
use crate::simulator::{Provenance, ScanDataset, ScanRecord, NUM_PLANES};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Pretty-printed, newline-terminated.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn mm(v: &Vec3) -> [f64; 3] {
    [v.x * 1e3, v.y * 1e3, v.z * 1e3]
}

// ---- robot model ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    /// `[alpha_deg, a_mm, theta_offset_deg, d_mm]` per link.
    pub dh: Vec<[f64; 4]>,
    /// `[alpha_rad, a_m, theta_offset_rad, d_m]` per link.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dh_si: Option<Vec<[f64; 4]>>,
}

impl ModelFile {
    pub fn from_model(model: &RobotModel) -> Self {
        Self {
            dh: model.to_table_deg_mm(),
            dh_si: Some(model.rows().iter().map(|r| [r.alpha, r.a, r.theta_offset, r.d]).collect()),
        }
    }

    pub fn to_model(&self) -> Result<RobotModel> {
        if self.dh.len() != NUM_JOINTS {
            return Err(Error::Format(format!("expected {NUM_JOINTS} DH rows, got {}", self.dh.len())));
        }
        match &self.dh_si {
            Some(si) => {
                let rows: Vec<DhRow> = si.iter().map(|r| DhRow::new(r[0], r[1], r[2], r[3])).collect();
                RobotModel::from_rows(&rows)
            }
            None => RobotModel::from_table_deg_mm(&self.dh),
        }
    }
}

pub fn read_model(path: &Path) -> Result<RobotModel> {
    read_json::<ModelFile>(path)?.to_model()
}

pub fn write_model(path: &Path, model: &RobotModel) -> Result<()> {
    write_json(path, &ModelFile::from_model(model))
}

// ---- extrinsic ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicFile {
    pub axis: [f64; 3],
    pub angle_deg: f64,
    pub position_mm: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_rad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_m: Option<[f64; 3]>,
}

impl ExtrinsicFile {
    pub fn from_ext(ext: &ExtrinsicParams) -> Self {
        let a = ext.rotation.axis();
        Self {
            axis: [a.x, a.y, a.z],
            angle_deg: ext.rotation.angle().to_degrees(),
            position_mm: mm(&ext.position),
            angle_rad: Some(ext.rotation.angle()),
            position_m: Some([ext.position.x, ext.position.y, ext.position.z]),
        }
    }

    pub fn to_ext(&self) -> Result<ExtrinsicParams> {
        let angle = self.angle_rad.unwrap_or(self.angle_deg.to_radians());
        let p = self.position_m.unwrap_or(self.position_mm.map(|v| v * 1e-3));
        let axis = Vec3::from(self.axis);
        // unit axes in range are kept as written so that files round-trip exactly
        let rotation = if (axis.norm() - 1.0).abs() <= 1e-12 {
            AxisAngle::new(axis, angle).or_else(|_| AxisAngle::canonical(axis, angle))?
        } else {
            AxisAngle::canonical(axis, angle)?
        };
        let position = Vec3::from(p);
        if !position.iter().all(|v| v.is_finite()) {
            return Err(Error::Format("extrinsic position is not finite".into()));
        }
        Ok(ExtrinsicParams::new(rotation, position))
    }
}

pub fn read_extrinsic(path: &Path) -> Result<ExtrinsicParams> {
    read_json::<ExtrinsicFile>(path)?.to_ext()
}

pub fn write_extrinsic(path: &Path, ext: &ExtrinsicParams) -> Result<()> {
    write_json(path, &ExtrinsicFile::from_ext(ext))
}

// ---- planes ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneFile {
    pub normal: [f64; 3],
    pub offset_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanesFile {
    pub planes: Vec<PlaneFile>,
}

impl PlanesFile {
    pub fn from_planes(planes: &[PlaneParams; NUM_PLANES]) -> Self {
        Self {
            planes: planes
                .iter()
                .map(|p| PlaneFile {
                    normal: [p.normal().x, p.normal().y, p.normal().z],
                    offset_mm: p.offset() * 1e3,
                    offset_m: Some(p.offset()),
                })
                .collect(),
        }
    }

    pub fn to_planes(&self) -> Result<[PlaneParams; NUM_PLANES]> {
        if self.planes.len() != NUM_PLANES {
            return Err(Error::Format(format!("expected {NUM_PLANES} planes, got {}", self.planes.len())));
        }
        let parsed: Vec<PlaneParams> = self
            .planes
            .iter()
            .map(|p| {
                let offset = p.offset_m.unwrap_or(p.offset_mm * 1e-3);
                let n = Vec3::from(p.normal);
                // exact unit normals are kept as written
                if (n.norm() - 1.0).abs() <= 1e-12 {
                    PlaneParams::new(n, offset)
                } else {
                    PlaneParams::from_unnormalized(n, offset)
                }
            })
            .collect::<Result<_>>()?;
        Ok([parsed[0], parsed[1], parsed[2]])
    }
}

pub fn read_planes(path: &Path) -> Result<[PlaneParams; NUM_PLANES]> {
    read_json::<PlanesFile>(path)?.to_planes()
}

pub fn write_planes(path: &Path, planes: &[PlaneParams; NUM_PLANES]) -> Result<()> {
    write_json(path, &PlanesFile::from_planes(planes))
}

// ---- dataset ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ProvenanceLine {
    provenance: ProvenanceFields,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ProvenanceFields {
    pose_seed: u64,
    noise_seed: u64,
    sigma_noise_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma_noise_m: Option<f64>,
    poses_per_plane: usize,
    points_per_scan: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RecordLine {
    k: usize,
    j: usize,
    q: [f64; NUM_JOINTS],
    pts: Vec<[f64; 2]>,
}

pub fn write_dataset(path: &Path, data: &ScanDataset) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let p = &data.provenance;
    let header = ProvenanceLine {
        provenance: ProvenanceFields {
            pose_seed: p.pose_seed,
            noise_seed: p.noise_seed,
            sigma_noise_mm: p.sigma_noise * 1e3,
            sigma_noise_m: Some(p.sigma_noise),
            poses_per_plane: p.poses_per_plane,
            points_per_scan: p.points_per_scan,
        },
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for r in &data.records {
        let line = RecordLine {
            k: r.plane + 1,
            j: r.pose,
            q: r.joints.0,
            pts: r.points.iter().map(|p| [p.x, p.z]).collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<ScanDataset> {
    let file = fs::File::open(path).map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    let mut provenance = None;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |e: serde_json::Error| Error::Format(format!("{} line {}: {e}", path.display(), n + 1));
        if provenance.is_none() && records.is_empty() && line.contains("\"provenance\"") {
            let h: ProvenanceLine = serde_json::from_str(&line).map_err(at)?;
            let f = h.provenance;
            provenance = Some(Provenance {
                pose_seed: f.pose_seed,
                noise_seed: f.noise_seed,
                sigma_noise: f.sigma_noise_m.unwrap_or(f.sigma_noise_mm * 1e-3),
                poses_per_plane: f.poses_per_plane,
                points_per_scan: f.points_per_scan,
            });
            continue;
        }
        let r: RecordLine = serde_json::from_str(&line).map_err(at)?;
        if r.k == 0 || r.k > NUM_PLANES {
            return Err(Error::Format(format!(
                "{} line {}: plane index k={} outside 1..={NUM_PLANES}",
                path.display(),
                n + 1,
                r.k
            )));
        }
        records.push(ScanRecord {
            plane: r.k - 1,
            pose: r.j,
            joints: JointVector(r.q),
            points: r.pts.iter().map(|p| ScanPoint::new(p[0], p[1])).collect(),
        });
    }
    if records.is_empty() {
        return Err(Error::Format(format!("{} holds no scan records", path.display())));
    }
    let provenance =
        provenance.ok_or_else(|| Error::Format(format!("{} lacks its provenance header line", path.display())))?;
    let data = ScanDataset { records, provenance };
    data.validate()?;
    Ok(data)
}

// ---- masks ----

/// Reads a fixed mask from a report or result file (`"mask"` or `"fixed"`
/// field) or from a bare JSON list of names.
pub fn read_mask(path: &Path) -> Result<FixedMask> {
    let v: Value = read_json(path)?;
    let list = match &v {
        Value::Array(_) => &v,
        Value::Object(o) => o
            .get("mask")
            .or_else(|| o.get("fixed"))
            .ok_or_else(|| Error::Format(format!("{} has no `mask` field", path.display())))?,
        _ => return Err(Error::Format(format!("{} is not a mask file", path.display()))),
    };
    let names: Vec<String> = serde_json::from_value(list.clone())?;
    FixedMask::from_names(&names)
}

// ---- identifiability report ----

fn components(members: &[(String, f64)]) -> Map<String, Value> {
    members.iter().map(|(n, c)| (n.clone(), Value::from(*c))).collect()
}

fn combo_value(c: &Combo) -> Value {
    let mut o = Map::new();
    o.insert("singular_value".into(), c.singular_value.into());
    o.insert("relative".into(), c.relative.into());
    o.insert("components".into(), Value::Object(components(&c.members)));
    Value::Object(o)
}

fn resolved_value(c: &ResolvedCombo) -> Value {
    let mut o = Map::new();
    o.insert("pivot".into(), c.pivot.clone().into());
    o.insert("components".into(), Value::Object(components(&c.members)));
    Value::Object(o)
}

pub fn report_to_json(report: &IdentifiabilityReport, mask: &FixedMask, resolved: &[ResolvedCombo]) -> Value {
    let mut o = Map::new();
    o.insert("parameters".into(), report.parameter_names.clone().into());
    o.insert("singular_values".into(), report.singular_values.clone().into());
    o.insert("threshold".into(), report.options.threshold.into());
    o.insert("weak_band".into(), report.options.weak_band.into());
    o.insert("membership".into(), report.options.membership.into());
    o.insert("null_count".into(), report.null_count().into());
    o.insert("condition_ratio".into(), report.condition_ratio().into());
    o.insert("null_combos".into(), report.null_combos.iter().map(combo_value).collect());
    o.insert("weak_combos".into(), report.weak_combos.iter().map(combo_value).collect());
    o.insert("resolved_combos".into(), resolved.iter().map(resolved_value).collect());
    o.insert("mask".into(), mask.names().into());
    Value::Object(o)
}

// ---- calibration result ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub robot: ModelFile,
    pub extrinsic: ExtrinsicFile,
    pub planes: PlanesFile,
    pub fixed: Vec<String>,
    pub optimized: Vec<String>,
    pub termination: String,
    pub iterations: usize,
    pub evaluations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub gradient_norm: f64,
    pub num_residuals: usize,
    pub max_unit_norm_error: f64,
    pub clamped: bool,
    pub cost_trace: Vec<f64>,
    /// Jacobian column norms by parameter name, at the last iteration.
    pub column_norms: Map<String, Value>,
}

impl ResultFile {
    pub fn from_result(r: &CalibrationResult) -> Self {
        let d = &r.diagnostics;
        let termination = serde_json::to_value(d.termination)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        Self {
            robot: ModelFile::from_model(&r.robot),
            extrinsic: ExtrinsicFile::from_ext(&r.ext),
            planes: PlanesFile::from_planes(&r.planes),
            fixed: r.fixed_names(),
            optimized: r.optimized_names(),
            termination,
            iterations: d.iterations,
            evaluations: d.evaluations,
            initial_cost: d.initial_cost,
            final_cost: d.final_cost,
            // NaN is not valid JSON; it only arises when no iteration ran
            gradient_norm: if d.gradient_norm.is_finite() { d.gradient_norm } else { 0.0 },
            num_residuals: r.num_residuals,
            max_unit_norm_error: r.max_unit_norm_error,
            clamped: r.clamped,
            cost_trace: d.cost_trace.clone(),
            column_norms: r
                .optimized_names()
                .into_iter()
                .zip(d.column_norms.iter())
                .map(|(n, v)| (n, Value::from(*v)))
                .collect(),
        }
    }

    pub fn models(&self) -> Result<(RobotModel, ExtrinsicParams, [PlaneParams; NUM_PLANES])> {
        Ok((self.robot.to_model()?, self.extrinsic.to_ext()?, self.planes.to_planes()?))
    }
}

pub fn write_result(path: &Path, r: &CalibrationResult) -> Result<()> {
    write_json(path, &ResultFile::from_result(r))
}

pub fn read_result(path: &Path) -> Result<ResultFile> {
    read_json(path)
}

// ---- statistics ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    pub mean_position_m: f64,
    pub max_position_m: f64,
    pub mean_orientation_rad: f64,
    pub max_orientation_rad: f64,
    pub mean_position_mm: f64,
    pub max_position_mm: f64,
    pub mean_orientation_deg: f64,
    pub max_orientation_deg: f64,
    pub num_poses: usize,
    pub seed: u64,
}

impl From<&ErrorStats> for StatsFile {
    fn from(s: &ErrorStats) -> Self {
        Self {
            mean_position_m: s.mean_position,
            max_position_m: s.max_position,
            mean_orientation_rad: s.mean_orientation,
            max_orientation_rad: s.max_orientation,
            mean_position_mm: s.mean_position * 1e3,
            max_position_mm: s.max_position * 1e3,
            mean_orientation_deg: s.mean_orientation.to_degrees(),
            max_orientation_deg: s.max_orientation.to_degrees(),
            num_poses: s.num_poses,
            seed: s.seed,
        }
    }
}

pub fn write_stats(path: &Path, s: &ErrorStats) -> Result<()> {
    write_json(path, &StatsFile::from(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate_dataset, DatasetSpec, PoseSampling, Scene};

    #[test]
    fn shipped_model_file_is_the_nominal_table() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/denso_vs060.json");
        assert_eq!(read_model(&path).unwrap(), RobotModel::denso_vs060());
    }

    #[test]
    fn models_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let s = Scene::default_setup();
        let mut robot = s.true_robot;
        robot.rows_mut()[2].a += 1.234_567_891e-4;
        write_model(&dir.path().join("m.json"), &robot).unwrap();
        assert_eq!(read_model(&dir.path().join("m.json")).unwrap(), robot);
        write_extrinsic(&dir.path().join("e.json"), &s.true_ext).unwrap();
        assert_eq!(read_extrinsic(&dir.path().join("e.json")).unwrap(), s.true_ext);
        // an oblique axis whose norm is off by an ulp must come back untouched
        let axis = Vec3::new(-0.0013058782262812846, -0.008319787579887584, -0.9999645372795395);
        let oblique = ExtrinsicParams::new(AxisAngle::new(axis, 3.1349262578904127).unwrap(), s.true_ext.position);
        write_extrinsic(&dir.path().join("o.json"), &oblique).unwrap();
        assert_eq!(read_extrinsic(&dir.path().join("o.json")).unwrap(), oblique);
        write_planes(&dir.path().join("p.json"), &s.true_planes).unwrap();
        assert_eq!(read_planes(&dir.path().join("p.json")).unwrap(), s.true_planes);
    }

    #[test]
    fn human_units_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.json");
        fs::write(&p, r#"{"axis":[0,0,2],"angle_deg":180,"position_mm":[-127.5,-33,101.5]}"#).unwrap();
        let e = read_extrinsic(&p).unwrap();
        assert_eq!(*e.rotation.axis(), Vec3::z());
        assert!((e.position - ExtrinsicParams::nominal_mount().position).amax() < 1e-15);
    }

    #[test]
    fn dataset_round_trips_exactly() {
        let s = Scene::default_setup();
        let spec = DatasetSpec {
            poses_per_plane: 3,
            points_per_scan: 7,
            sigma_noise: 1e-4,
            pose_seed: 1,
            noise_seed: 2,
        };
        let data = generate_dataset(&s, &spec, &PoseSampling::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_dataset(&p, &data).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back, data);
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert!(text.lines().nth(1).unwrap().starts_with(r#"{"k":1,"j":0,"q":["#));
    }

    #[test]
    fn bad_plane_index_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(&p, "{\"provenance\":{\"pose_seed\":0,\"noise_seed\":0,\"sigma_noise_mm\":0,\"poses_per_plane\":1,\"points_per_scan\":1}}\n{\"k\":4,\"j\":0,\"q\":[0,0,0,0,0,0],\"pts\":[[0,0.3]]}\n").unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Format(_))));
    }

    #[test]
    fn masks_from_lists_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        fs::write(&a, r#"["d6", "p_x"]"#).unwrap();
        assert_eq!(read_mask(&a).unwrap().names(), vec!["d6", "p_x"]);
        let b = dir.path().join("b.json");
        fs::write(&b, r#"{"mask": ["theta1"]}"#).unwrap();
        assert_eq!(read_mask(&b).unwrap().names(), vec!["theta1"]);
        fs::write(&b, r#"{"mask": ["nope"]}"#).unwrap();
        assert!(read_mask(&b).is_err());
    }
}
