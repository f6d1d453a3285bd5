//! File formats: dataset and calibration JSON, scale tables and report CSV.
//!
//! JSON is canonical: keys sorted, floats rounded to 12 significant digits,
//! two-space indentation and a trailing newline, so writing a parsed file
//! reproduces it byte for byte. Every JSON file carries `"schema": 1`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::calibration::{
    CalibrationOptions, CalibrationResult, CalibrationView, CameraSolution, IntrinsicsModel,
    Method, ReprojectionStats, ViewStats,
};
use crate::error::{Error, Result};
use crate::homography::Correspondence;
use crate::lens::CurveFit;
use crate::scale::{GridObservation, ParallelView, ScaleRow, ScaleTable, ZoneSegmentation};
use crate::synthetic::{BiasReport, TemplateSpec};
use crate::types::{Distortion, Intrinsics, Point2, Point3, Pose};

pub const SCHEMA_VERSION: u32 = 1;
pub const SIGNIFICANT_DIGITS: usize = 12;

/// `x` rounded to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .unwrap_or(x)
}

/// Shortest decimal text of the rounded value, never in exponent form.
pub fn format_float(x: f64) -> String {
    let r = round_sig(x);
    if r == 0.0 {
        return "0".into();
    }
    format!("{r}")
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().and_then(|x| serde_json::Number::from_f64(round_sig(x))) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Canonical JSON text of `value`.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize: {e}")))?;
    round_value(&mut v);
    let mut text = serde_json::to_string_pretty(&v)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn from_json<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    let v: Value = serde_json::from_str(text)
        .map_err(|e| Error::InvalidInput(format!("{what}: malformed JSON: {e}")))?;
    match v.get("schema").and_then(Value::as_u64) {
        Some(s) if s == SCHEMA_VERSION as u64 => {}
        Some(s) => {
            return Err(Error::InvalidInput(format!(
                "{what}: unsupported schema version {s}"
            )))
        }
        None => return Err(Error::InvalidInput(format!("{what}: missing schema field"))),
    }
    serde_json::from_value(v).map_err(|e| Error::InvalidInput(format!("{what}: {e}")))
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io_err = |e: std::io::Error| Error::InvalidInput(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(contents).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

// ---------------------------------------------------------------- dataset

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateRecord {
    pub rows: usize,
    pub cols: usize,
    pub pitch_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointRecord {
    pub wx_mm: f64,
    pub wy_mm: f64,
    pub u_px: f64,
    pub v_px: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub rodrigues: [f64; 3],
    pub t_mm: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        Self {
            rodrigues: p.rotation.into(),
            t_mm: p.translation.into(),
        }
    }
}

impl From<&PoseRecord> for Pose {
    fn from(r: &PoseRecord) -> Self {
        Pose::new(Vector3::from(r.rodrigues), Vector3::from(r.t_mm))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRecord {
    pub id: String,
    pub distance_mm: f64,
    pub points: Vec<PointRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_pose: Option<PoseRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_px: Option<f64>,
    /// `fixed`, `distance` or `parallel-stack`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size_px: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub schema: u32,
    pub template: TemplateRecord,
    pub views: Vec<ViewRecord>,
    pub meta: DatasetMeta,
}

impl DatasetFile {
    pub fn from_views(template: &TemplateSpec, views: &[CalibrationView], meta: DatasetMeta) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            template: TemplateRecord {
                rows: template.rows,
                cols: template.cols,
                pitch_mm: template.pitch_mm,
            },
            views: views
                .iter()
                .map(|v| ViewRecord {
                    id: v.id.clone(),
                    distance_mm: v.distance_mm,
                    points: v
                        .correspondences
                        .iter()
                        .map(|c| PointRecord {
                            wx_mm: c.world.x,
                            wy_mm: c.world.y,
                            u_px: c.image.u,
                            v_px: c.image.v,
                        })
                        .collect(),
                    gt_pose: v.ground_truth.as_ref().map(PoseRecord::from),
                })
                .collect(),
            meta,
        }
    }

    /// Schema-level checks beyond what parsing enforces.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!("unsupported schema {}", self.schema)));
        }
        self.template_spec()?;
        for v in &self.views {
            if v.points.len() < 4 {
                return Err(Error::InvalidInput(format!(
                    "view {} has {} points, need at least 4",
                    v.id,
                    v.points.len()
                )));
            }
            if !(v.distance_mm > 0.0 && v.distance_mm.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "view {}: distance must be positive",
                    v.id
                )));
            }
        }
        Ok(())
    }

    pub fn template_spec(&self) -> Result<TemplateSpec> {
        TemplateSpec::new(self.template.rows, self.template.cols, self.template.pitch_mm)
    }

    pub fn calibration_views(&self) -> Vec<CalibrationView> {
        self.views
            .iter()
            .map(|v| CalibrationView {
                id: v.id.clone(),
                distance_mm: v.distance_mm,
                correspondences: v
                    .points
                    .iter()
                    .map(|p| {
                        Correspondence::new(
                            Point3::on_plane(p.wx_mm, p.wy_mm),
                            Point2::new(p.u_px, p.v_px),
                        )
                    })
                    .collect(),
                ground_truth: v.gt_pose.as_ref().map(Pose::from),
            })
            .collect()
    }

    /// Views as fronto-parallel grid observations; grid indices come from
    /// the world coordinates and the template pitch.
    pub fn parallel_views(&self) -> Result<Vec<ParallelView>> {
        let [w, h] = self.meta.image_size_px.ok_or_else(|| {
            Error::InvalidInput("dataset meta lacks image_size_px".into())
        })?;
        let pitch = self.template.pitch_mm;
        self.views
            .iter()
            .map(|v| {
                let points = v
                    .points
                    .iter()
                    .map(|p| {
                        let (c, r) = ((p.wx_mm / pitch).round(), (p.wy_mm / pitch).round());
                        if c < 0.0 || r < 0.0 {
                            return Err(Error::InvalidInput(format!(
                                "view {}: point off the template grid",
                                v.id
                            )));
                        }
                        Ok(GridObservation {
                            row: r as usize,
                            col: c as usize,
                            image: Point2::new(p.u_px, p.v_px),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ParallelView {
                    distance_mm: v.distance_mm,
                    pitch_mm: pitch,
                    image_width: w,
                    image_height: h,
                    points,
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = from_json(text, "dataset")?;
        file.validate()?;
        Ok(file)
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }
}

// ------------------------------------------------------------ calibration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewScaleRecord {
    pub view_id: String,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntrinsicsRecord {
    Shared {
        alpha: f64,
        beta: f64,
        gamma: f64,
        u0: f64,
        v0: f64,
    },
    PerView {
        gamma: f64,
        u0: f64,
        v0: f64,
        scales: Vec<ViewScaleRecord>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionRecord {
    pub k1: f64,
    pub k2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewPoseRecord {
    pub view_id: String,
    pub rodrigues: [f64; 3],
    pub t_mm: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewStatsRecord {
    pub id: String,
    pub points: usize,
    pub mean_px: f64,
    pub std_px: f64,
    pub rms_px: f64,
    pub mean_error_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsRecord {
    pub mean_px: f64,
    pub std_px: f64,
    pub median_px: f64,
    pub rms_px: f64,
    pub mean_error_px: f64,
    pub max_error_px: f64,
    pub per_view: Vec<ViewStatsRecord>,
}

impl From<&ReprojectionStats> for StatsRecord {
    fn from(s: &ReprojectionStats) -> Self {
        Self {
            mean_px: s.mean_px,
            std_px: s.std_px,
            median_px: s.median_px,
            rms_px: s.rms_px,
            mean_error_px: s.mean_error_px,
            max_error_px: s.max_error_px,
            per_view: s
                .per_view
                .iter()
                .map(|v| ViewStatsRecord {
                    id: v.id.clone(),
                    points: v.points,
                    mean_px: v.mean_px,
                    std_px: v.std_px,
                    rms_px: v.rms_px,
                    mean_error_px: v.mean_error_px,
                })
                .collect(),
        }
    }
}

impl From<&StatsRecord> for ReprojectionStats {
    fn from(s: &StatsRecord) -> Self {
        Self {
            mean_px: s.mean_px,
            std_px: s.std_px,
            median_px: s.median_px,
            rms_px: s.rms_px,
            mean_error_px: s.mean_error_px,
            max_error_px: s.max_error_px,
            per_view: s
                .per_view
                .iter()
                .map(|v| ViewStats {
                    id: v.id.clone(),
                    points: v.points,
                    mean_px: v.mean_px,
                    std_px: v.std_px,
                    rms_px: v.rms_px,
                    mean_error_px: v.mean_error_px,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionRecord {
    pub intrinsics: IntrinsicsRecord,
    pub distortion: DistortionRecord,
    pub poses: Vec<ViewPoseRecord>,
    pub stats: StatsRecord,
}

impl SolutionRecord {
    fn new(s: &CameraSolution, view_ids: &[String]) -> Self {
        let intrinsics = match &s.intrinsics {
            IntrinsicsModel::Shared(i) => IntrinsicsRecord::Shared {
                alpha: i.alpha,
                beta: i.beta,
                gamma: i.gamma,
                u0: i.u0,
                v0: i.v0,
            },
            IntrinsicsModel::PerView {
                gamma,
                u0,
                v0,
                scales,
            } => IntrinsicsRecord::PerView {
                gamma: *gamma,
                u0: *u0,
                v0: *v0,
                scales: scales
                    .iter()
                    .zip(view_ids)
                    .map(|(&(alpha, beta), id)| ViewScaleRecord {
                        view_id: id.clone(),
                        alpha,
                        beta,
                    })
                    .collect(),
            },
        };
        Self {
            intrinsics,
            distortion: DistortionRecord {
                k1: s.distortion.k1,
                k2: s.distortion.k2,
            },
            poses: s
                .poses
                .iter()
                .zip(view_ids)
                .map(|(p, id)| ViewPoseRecord {
                    view_id: id.clone(),
                    rodrigues: p.rotation.into(),
                    t_mm: p.translation.into(),
                })
                .collect(),
            stats: StatsRecord::from(&s.stats),
        }
    }

    pub fn intrinsics_model(&self) -> Result<IntrinsicsModel> {
        Ok(match &self.intrinsics {
            IntrinsicsRecord::Shared {
                alpha,
                beta,
                gamma,
                u0,
                v0,
            } => IntrinsicsModel::Shared(Intrinsics::new(*alpha, *beta, *gamma, *u0, *v0)?),
            IntrinsicsRecord::PerView {
                gamma,
                u0,
                v0,
                scales,
            } => IntrinsicsModel::PerView {
                gamma: *gamma,
                u0: *u0,
                v0: *v0,
                scales: scales.iter().map(|s| (s.alpha, s.beta)).collect(),
            },
        })
    }

    pub fn distortion(&self) -> Distortion {
        Distortion::new(self.distortion.k1, self.distortion.k2)
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.poses
            .iter()
            .map(|p| Pose::new(Vector3::from(p.rodrigues), Vector3::from(p.t_mm)))
            .collect()
    }

    pub fn view_ids(&self) -> Vec<String> {
        self.poses.iter().map(|p| p.view_id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverRecord {
    pub converged: bool,
    pub termination: String,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub dataset_sha256: String,
    pub options: BTreeMap<String, Value>,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub schema: u32,
    pub method: String,
    pub converged: bool,
    /// MLE-refined parameters.
    pub intrinsics: IntrinsicsRecord,
    pub distortion: DistortionRecord,
    pub poses: Vec<ViewPoseRecord>,
    pub stats: StatsRecord,
    /// Closed-form starting point of the refinement.
    pub algebraic: SolutionRecord,
    pub solver: SolverRecord,
    pub provenance: Provenance,
}

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Options recorded in the provenance block.
pub fn options_record(opts: &CalibrationOptions) -> BTreeMap<String, Value> {
    let mut m = BTreeMap::new();
    let s = &opts.solver;
    m.insert("max_iterations".into(), Value::from(s.max_iterations));
    m.insert("gradient_tolerance".into(), Value::from(s.gradient_tolerance));
    m.insert("step_tolerance".into(), Value::from(s.step_tolerance));
    m.insert("initial_damping".into(), Value::from(s.initial_damping));
    m.insert("damping_scale".into(), Value::from(s.damping_scale));
    m.insert("numeric_jacobian".into(), Value::from(s.numeric_jacobian));
    m.insert("refine_distortion".into(), Value::from(opts.refine_distortion));
    if let Some((w, h)) = opts.image_size {
        m.insert("image_size_px".into(), Value::from(vec![w, h]));
    }
    if let Some(p) = opts.principal_point {
        m.insert("principal_point_px".into(), Value::from(vec![p.u, p.v]));
    }
    m
}

impl CalibrationFile {
    pub fn new(result: &CalibrationResult, provenance: Provenance) -> Self {
        let refined = SolutionRecord::new(&result.refined, &result.view_ids);
        let s = &result.solver;
        Self {
            schema: SCHEMA_VERSION,
            method: result.method.as_str().into(),
            converged: s.converged,
            intrinsics: refined.intrinsics,
            distortion: refined.distortion,
            poses: refined.poses,
            stats: refined.stats,
            algebraic: SolutionRecord::new(&result.algebraic, &result.view_ids),
            solver: SolverRecord {
                converged: s.converged,
                termination: s.termination.as_str().into(),
                iterations: s.iterations,
                accepted_steps: s.accepted_steps,
                initial_objective: s.initial_objective,
                final_objective: s.final_objective,
            },
            provenance,
        }
    }

    pub fn method(&self) -> Result<Method> {
        match self.method.as_str() {
            "baseline" => Ok(Method::Baseline),
            "proposed" => Ok(Method::Proposed),
            m => Err(Error::InvalidInput(format!("unknown method {m:?}"))),
        }
    }

    /// The refined parameters as a solution record.
    pub fn refined(&self) -> SolutionRecord {
        SolutionRecord {
            intrinsics: self.intrinsics.clone(),
            distortion: self.distortion,
            poses: self.poses.clone(),
            stats: self.stats.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = from_json(text, "calibration")?;
        file.method()?;
        Ok(file)
    }
}

// ---------------------------------------------------- scale and curve files

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationFile {
    pub schema: u32,
    pub zone1_end_mm: f64,
    pub zone2_end_mm: f64,
    pub plateau_alpha_px: f64,
    pub plateau_beta_px: f64,
}

impl From<&ZoneSegmentation> for SegmentationFile {
    fn from(s: &ZoneSegmentation) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            zone1_end_mm: s.zone1_end_mm,
            zone2_end_mm: s.zone2_end_mm,
            plateau_alpha_px: s.plateau_alpha_px,
            plateau_beta_px: s.plateau_beta_px,
        }
    }
}

impl SegmentationFile {
    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_json(text, "segmentation")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveRecord {
    pub k_f: f64,
    pub value0: f64,
}

/// Fitted `alpha(d)` and `beta(d)` curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveFile {
    pub schema: u32,
    pub alpha: CurveRecord,
    pub beta: CurveRecord,
}

impl CurveFile {
    pub fn new(alpha: CurveFit, beta: CurveFit) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            alpha: CurveRecord {
                k_f: alpha.k_f,
                value0: alpha.value0,
            },
            beta: CurveRecord {
                k_f: beta.k_f,
                value0: beta.value0,
            },
        }
    }

    pub fn fits(&self) -> (CurveFit, CurveFit) {
        (
            CurveFit {
                k_f: self.alpha.k_f,
                value0: self.alpha.value0,
            },
            CurveFit {
                k_f: self.beta.k_f,
                value0: self.beta.value0,
            },
        )
    }

    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_json(text, "curve")
    }
}

// -------------------------------------------------------------------- CSV

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(format!("csv: {e}")))
}

pub const SCALE_TABLE_HEADER: [&str; 3] = ["distance_mm", "alpha_px", "beta_px"];

pub fn scale_table_csv(table: &ScaleTable) -> Result<String> {
    csv_text(
        &SCALE_TABLE_HEADER,
        table.rows.iter().map(|r| {
            vec![
                format_float(r.distance_mm),
                format_float(r.alpha_px),
                format_float(r.beta_px),
            ]
        }),
    )
}

pub fn parse_scale_table_csv(text: &str) -> Result<ScaleTable> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let err = |e: csv::Error| Error::InvalidInput(format!("scale table: {e}"));
    let header = r.headers().map_err(err)?.clone();
    if header.iter().collect::<Vec<_>>() != SCALE_TABLE_HEADER {
        return Err(Error::InvalidInput(format!(
            "scale table: expected header {}",
            SCALE_TABLE_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(err)?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::InvalidInput(format!("scale table: bad number in {rec:?}")))
        };
        rows.push(ScaleRow {
            distance_mm: field(0)?,
            alpha_px: field(1)?,
            beta_px: field(2)?,
        });
    }
    ScaleTable::new(rows)
}

pub fn bias_csv(report: &BiasReport) -> Result<String> {
    csv_text(
        &["view_id", "dx_mm", "dy_mm", "dz_mm", "rot_err_rad"],
        report.per_view.iter().map(|b| {
            vec![
                b.id.clone(),
                format_float(b.translation_error.x),
                format_float(b.translation_error.y),
                format_float(b.translation_error.z),
                format_float(b.rotation_error_rad),
            ]
        }),
    )
}

pub fn lens_sweep_csv(sweep: &[(f64, f64)]) -> Result<String> {
    csv_text(
        &["distance_mm", "focal_mm"],
        sweep
            .iter()
            .map(|&(d, f)| vec![format_float(d), format_float(f)]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{calibrate_baseline, CalibrationOptions};
    use crate::synthetic::{generate_dataset, sample_poses, spread_distances, CameraPreset, FocusMode};

    fn dataset(seed: u64) -> DatasetFile {
        let p = CameraPreset::bundled("robotiq").unwrap();
        let poses = sample_poses(&p.template, &spread_distances(80.0, 150.0, 5), seed);
        let views =
            generate_dataset(&p, &p.template, &poses, FocusMode::FixedPlateau, 0.25, seed).unwrap();
        DatasetFile::from_views(
            &p.template,
            &views,
            DatasetMeta {
                preset: Some("robotiq".into()),
                seed: Some(seed),
                noise_px: Some(0.25),
                mode: Some("fixed".into()),
                image_size_px: Some([p.image_width, p.image_height]),
            },
        )
    }

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_sig(1370.80000000000034), 1370.8);
        assert_eq!(round_sig(0.1 + 0.2), 0.3);
        assert_eq!(round_sig(1.234567890123456e-7), 1.23456789012e-7);
        assert_eq!(round_sig(round_sig(std::f64::consts::PI)), round_sig(std::f64::consts::PI));
        assert_eq!(format_float(-0.0), "0");
        assert_eq!(format_float(2.5e-13), "0.00000000000025");
    }

    #[test]
    fn dataset_round_trip_is_byte_identical() {
        let text = dataset(4).to_json().unwrap();
        let again = DatasetFile::from_json(&text).unwrap().to_json().unwrap();
        assert_eq!(text, again);
        assert!(text.starts_with("{\n  \"meta\""));
        assert!(text.contains("\"schema\": 1"));
    }

    #[test]
    fn dataset_hash_is_stable() {
        assert_eq!(dataset(4).hash().unwrap(), dataset(4).hash().unwrap());
        assert_ne!(dataset(4).hash().unwrap(), dataset(5).hash().unwrap());
    }

    #[test]
    fn rejects_wrong_schema_and_unknown_fields() {
        let text = dataset(1).to_json().unwrap();
        let v2 = text.replace("\"schema\": 1", "\"schema\": 2");
        assert!(DatasetFile::from_json(&v2).is_err());
        let extra = text.replacen("\"meta\": {", "\"meta\": {\"colour\": 1,", 1);
        assert!(DatasetFile::from_json(&extra).is_err());
        assert!(DatasetFile::from_json("[1, 2").is_err());
    }

    #[test]
    fn short_view_is_rejected() {
        let mut d = dataset(1);
        d.views[0].points.truncate(3);
        let text = d.to_json().unwrap();
        assert!(DatasetFile::from_json(&text).is_err());
    }

    #[test]
    fn calibration_round_trip_is_byte_identical() {
        let d = dataset(2);
        let opts = CalibrationOptions::default();
        let result = calibrate_baseline(&d.calibration_views(), &opts).unwrap();
        let prov = Provenance {
            dataset_sha256: d.hash().unwrap(),
            options: options_record(&opts),
            tool_version: TOOL_VERSION.into(),
        };
        let text = CalibrationFile::new(&result, prov).to_json().unwrap();
        let parsed = CalibrationFile::from_json(&text).unwrap();
        assert_eq!(parsed.to_json().unwrap(), text);
        assert_eq!(parsed.method().unwrap(), Method::Baseline);
    }

    #[test]
    fn scale_table_csv_round_trip() {
        let t = ScaleTable::new(vec![
            ScaleRow { distance_mm: 100.0, alpha_px: 1360.25, beta_px: 1363.5 },
            ScaleRow { distance_mm: 200.0, alpha_px: 1370.8, beta_px: 1373.8 },
        ])
        .unwrap();
        let text = scale_table_csv(&t).unwrap();
        assert_eq!(
            text,
            "distance_mm,alpha_px,beta_px\n100,1360.25,1363.5\n200,1370.8,1373.8\n"
        );
        let back = parse_scale_table_csv(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(scale_table_csv(&back).unwrap(), text);
        assert!(parse_scale_table_csv("d,a,b\n1,2,3\n").is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "second");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn parallel_views_need_image_size() {
        let mut d = dataset(3);
        assert!(d.parallel_views().is_ok());
        d.meta.image_size_px = None;
        assert!(d.parallel_views().is_err());
    }
}
