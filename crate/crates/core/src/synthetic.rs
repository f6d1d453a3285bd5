//! Ground-truth datasets: template grids, camera presets with a
//! focus-dependent focal length, noisy projections and pose-bias reports.
//!
//! Per-view randomness comes from [`view_seed`], which mixes the dataset
//! seed with the view index through SplitMix64, so views can be generated
//! in any order (or in parallel) with identical output.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Deserialize;

use crate::calibration::CalibrationView;
use crate::error::{Error, Result};
use crate::homography::Correspondence;
use crate::lens::LensSpec;
use crate::scale::{GridObservation, ParallelView};
use crate::types::{project_distorted, rotation_angle_between, Distortion, Intrinsics, Point2, Point3, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateSpec {
    pub rows: usize,
    pub cols: usize,
    pub pitch_mm: f64,
}

impl TemplateSpec {
    pub fn new(rows: usize, cols: usize, pitch_mm: f64) -> Result<Self> {
        let spec = Self {
            rows,
            cols,
            pitch_mm,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::InvalidInput(format!(
                "template needs at least 2x2 points, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.pitch_mm > 0.0 && self.pitch_mm.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "template pitch must be positive, got {}",
                self.pitch_mm
            )));
        }
        Ok(())
    }

    pub fn centre(&self) -> Point3 {
        Point3::on_plane(
            0.5 * (self.cols - 1) as f64 * self.pitch_mm,
            0.5 * (self.rows - 1) as f64 * self.pitch_mm,
        )
    }

    /// `(row, col)` of the point at `index` in [`generate_template`] order.
    pub fn indices(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }
}

/// Grid points `(col * pitch, row * pitch, 0)`, row by row from the origin
/// corner.
pub fn generate_template(spec: &TemplateSpec) -> Vec<Point3> {
    (0..spec.rows)
        .flat_map(|r| {
            (0..spec.cols)
                .map(move |c| Point3::on_plane(c as f64 * spec.pitch_mm, r as f64 * spec.pitch_mm))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FocusMode {
    /// Scale factors stay at the plateau values at every distance.
    FixedPlateau,
    /// Scale factors follow the lens model below the hyperfocal distance.
    DistanceDependent,
}

impl FocusMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FocusMode::FixedPlateau => "fixed",
            FocusMode::DistanceDependent => "distance",
        }
    }
}

/// A simulated camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPreset {
    pub name: String,
    pub image_width: f64,
    pub image_height: f64,
    /// Intrinsics on the plateau, beyond the hyperfocal distance.
    pub intrinsics: Intrinsics,
    pub distortion: Distortion,
    pub lens: LensSpec,
    pub hyperfocal_mm: f64,
    /// Sensor pixels per millimetre of lens-to-sensor distance:
    /// `alpha = pixels_per_mm * f`.
    pub pixels_per_mm: f64,
    pub template: TemplateSpec,
    /// Default camera–template distance range for calibration views.
    pub view_distance_mm: (f64, f64),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetFile {
    name: String,
    #[serde(default)]
    #[allow(dead_code)]
    note: Option<String>,
    image_size_px: [f64; 2],
    intrinsics: IntrinsicsFile,
    distortion: DistortionFile,
    lens: LensFile,
    hyperfocal_mm: f64,
    pixels_per_mm: f64,
    template: TemplateFile,
    view_distance_mm: [f64; 2],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IntrinsicsFile {
    alpha_px: f64,
    beta_px: f64,
    gamma_px: f64,
    u0_px: f64,
    v0_px: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DistortionFile {
    k1: f64,
    k2: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LensFile {
    radius_mm: f64,
    angle_ratio: f64,
    offset_mm: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    rows: usize,
    cols: usize,
    pitch_mm: f64,
}

pub const BUNDLED_PRESETS: [&str; 2] = ["robotiq", "eosens12cxp"];

impl CameraPreset {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: PresetFile = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("preset file: {e}")))?;
        let i = &f.intrinsics;
        let preset = Self {
            name: f.name,
            image_width: f.image_size_px[0],
            image_height: f.image_size_px[1],
            intrinsics: Intrinsics::new(i.alpha_px, i.beta_px, i.gamma_px, i.u0_px, i.v0_px)?,
            distortion: Distortion::new(f.distortion.k1, f.distortion.k2),
            lens: LensSpec::new(f.lens.radius_mm, f.lens.angle_ratio, f.lens.offset_mm)?,
            hyperfocal_mm: f.hyperfocal_mm,
            pixels_per_mm: f.pixels_per_mm,
            template: TemplateSpec::new(f.template.rows, f.template.cols, f.template.pitch_mm)?,
            view_distance_mm: (f.view_distance_mm[0], f.view_distance_mm[1]),
        };
        preset.validate()?;
        Ok(preset)
    }

    /// One of [`BUNDLED_PRESETS`].
    pub fn bundled(name: &str) -> Result<Self> {
        let text = match name {
            "robotiq" => include_str!("../presets/robotiq.json"),
            "eosens12cxp" => include_str!("../presets/eosens12cxp.json"),
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown preset {other:?} (bundled: {})",
                    BUNDLED_PRESETS.join(", ")
                )))
            }
        };
        Self::from_json(text)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.lens.validate()?;
        self.template.validate()?;
        for (name, v) in [
            ("image width", self.image_width),
            ("image height", self.image_height),
            ("hyperfocal distance", self.hyperfocal_mm),
            ("pixels per mm", self.pixels_per_mm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        let (lo, hi) = self.view_distance_mm;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidInput("view distance range is invalid".into()));
        }
        self.lens.sharp_focal_length(self.hyperfocal_mm)?;
        Ok(())
    }

    pub fn image_centre(&self) -> Point2 {
        Point2::new(0.5 * self.image_width, 0.5 * self.image_height)
    }

    /// `(alpha, beta)` for a template at `distance_mm`.
    ///
    /// In distance-dependent mode the plateau values are scaled by
    /// `f(min(d, d_h)) / f(d_h)`: the focus stops moving at the hyperfocal
    /// distance `d_h`.
    pub fn scales_at(&self, distance_mm: f64, mode: FocusMode) -> Result<(f64, f64)> {
        let base = &self.intrinsics;
        match mode {
            FocusMode::FixedPlateau => Ok((base.alpha, base.beta)),
            FocusMode::DistanceDependent => {
                let d = distance_mm.min(self.hyperfocal_mm);
                let ratio = self.lens.sharp_focal_length(d)?
                    / self.lens.sharp_focal_length(self.hyperfocal_mm)?;
                Ok((base.alpha * ratio, base.beta * ratio))
            }
        }
    }

    pub fn intrinsics_at(&self, distance_mm: f64, mode: FocusMode) -> Result<Intrinsics> {
        let (a, b) = self.scales_at(distance_mm, mode)?;
        Ok(self.intrinsics.with_scales(a, b))
    }

    fn in_image(&self, p: &Point2) -> bool {
        p.u >= 0.0 && p.u < self.image_width && p.v >= 0.0 && p.v < self.image_height
    }
}

/// Per-view seed: SplitMix64 of the dataset seed offset by the view index.
pub fn view_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn noise_source(sigma: f64) -> Result<Option<Normal<f64>>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "noise sigma must be non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(None);
    }
    Normal::new(0.0, sigma)
        .map(Some)
        .map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Depth of the template centre along the optical axis.
pub fn view_distance(template: &TemplateSpec, pose: &Pose) -> f64 {
    pose.transform(&template.centre()).z
}

/// Projects the template `(index, pixel)` pairs that land inside the image.
fn observe(
    preset: &CameraPreset,
    template: &TemplateSpec,
    pose: &Pose,
    intr: &Intrinsics,
    sigma: f64,
    seed: u64,
) -> Result<Vec<(usize, Point3, Point2)>> {
    let noise = noise_source(sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (i, w) in generate_template(template).into_iter().enumerate() {
        // draw for every point so visibility does not shift the stream
        let (nu, nv) = match &noise {
            Some(n) => (n.sample(&mut rng), n.sample(&mut rng)),
            None => (0.0, 0.0),
        };
        let Ok(p) = project_distorted(&w, intr, &preset.distortion, pose) else {
            continue;
        };
        let p = Point2::new(p.u + nu, p.v + nv);
        if preset.in_image(&p) {
            out.push((i, w, p));
        }
    }
    Ok(out)
}

/// Simulated image of the template at `pose`.
pub fn generate_view(
    preset: &CameraPreset,
    template: &TemplateSpec,
    pose: &Pose,
    mode: FocusMode,
    sigma: f64,
    seed: u64,
    id: &str,
) -> Result<CalibrationView> {
    template.validate()?;
    let d = view_distance(template, pose);
    if !(d > 0.0) {
        return Err(Error::NonPositiveDepth { depth: d });
    }
    let intr = preset.intrinsics_at(d, mode)?;
    let seen = observe(preset, template, pose, &intr, sigma, seed)?;
    if seen.len() < 4 {
        return Err(Error::EmptyView {
            id: id.to_string(),
            visible: seen.len(),
        });
    }
    Ok(CalibrationView {
        id: id.to_string(),
        distance_mm: d,
        correspondences: seen
            .into_iter()
            .map(|(_, w, p)| Correspondence::new(w, p))
            .collect(),
        ground_truth: Some(*pose),
    })
}

/// Views for every pose, seeded per view from `seed`; ids are `view_000`,
/// `view_001`, ...
pub fn generate_dataset(
    preset: &CameraPreset,
    template: &TemplateSpec,
    poses: &[Pose],
    mode: FocusMode,
    sigma: f64,
    seed: u64,
) -> Result<Vec<CalibrationView>> {
    poses
        .par_iter()
        .enumerate()
        .map(|(k, pose)| {
            generate_view(
                preset,
                template,
                pose,
                mode,
                sigma,
                view_seed(seed, k),
                &format!("view_{k:03}"),
            )
        })
        .collect()
}

/// Pose whose optical axis passes through the template centre from
/// `distance_mm` away, tilted `tilt` radians off the template normal
/// towards azimuth `azimuth`. The camera x axis follows the template x axis
/// as closely as the tilt allows.
pub fn look_at_pose(template: &TemplateSpec, distance_mm: f64, tilt: f64, azimuth: f64) -> Pose {
    let c = template.centre().to_vector();
    let dir = Vector3::new(tilt.sin() * azimuth.cos(), tilt.sin() * azimuth.sin(), -tilt.cos());
    let centre = c + dir * distance_mm;
    let z = -dir;
    let x_ref = Vector3::x();
    let x = (x_ref - z * z.dot(&x_ref)).normalize();
    let y = z.cross(&x);
    let rot = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Pose::from_matrix(&rot, -(rot * centre))
}

pub const MIN_TILT_DEG: f64 = 5.0;
pub const MAX_TILT_DEG: f64 = 30.0;

/// One pose per distance with tilt uniform in [5°, 30°] and uniform
/// azimuth.
pub fn sample_poses(template: &TemplateSpec, distances_mm: &[f64], seed: u64) -> Vec<Pose> {
    distances_mm
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            let mut rng = ChaCha8Rng::seed_from_u64(view_seed(seed ^ 0x5EED_0F_7057, k));
            let tilt = rng.random_range(MIN_TILT_DEG..=MAX_TILT_DEG).to_radians();
            let azimuth = rng.random_range(0.0..2.0 * PI);
            look_at_pose(template, d, tilt, azimuth)
        })
        .collect()
}

/// `count` distances evenly spaced over `[from, to]`.
pub fn spread_distances(from: f64, to: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (from + to)],
        n => (0..n)
            .map(|i| from + (to - from) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Fronto-parallel views centred on the template, one per distance, with
/// distance-dependent focus.
pub fn generate_parallel_stack(
    preset: &CameraPreset,
    template: &TemplateSpec,
    distances_mm: &[f64],
    sigma: f64,
    seed: u64,
) -> Result<Vec<ParallelView>> {
    template.validate()?;
    let c = template.centre();
    distances_mm
        .par_iter()
        .enumerate()
        .map(|(k, &d)| {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidInput(format!("distance must be positive, got {d}")));
            }
            let pose = Pose::new(Vector3::zeros(), Vector3::new(-c.x, -c.y, d));
            let intr = preset.intrinsics_at(d, FocusMode::DistanceDependent)?;
            let seen = observe(preset, template, &pose, &intr, sigma, view_seed(seed, k))?;
            Ok(ParallelView {
                distance_mm: d,
                pitch_mm: template.pitch_mm,
                image_width: preset.image_width,
                image_height: preset.image_height,
                points: seen
                    .into_iter()
                    .map(|(i, _, image)| {
                        let (row, col) = template.indices(i);
                        GridObservation { row, col, image }
                    })
                    .collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewBias {
    pub id: String,
    /// Estimated minus true translation, in the true camera frame (mm).
    /// Negative `z` means the estimate places the camera closer to the
    /// template.
    pub translation_error: Vector3<f64>,
    pub rotation_error_rad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub per_view: Vec<ViewBias>,
    pub mean: Vector3<f64>,
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    /// Mean length of the translation errors.
    pub mean_translation_error_mm: f64,
    pub mean_rotation_error_rad: f64,
}

/// Pose errors of estimated poses against the views' ground truth.
///
/// The error of a view is `R_true R_est^T t_est - t_true`: the offset of
/// the estimated world origin, re-expressed through the true rotation. It
/// reduces to `t_est - t_true` when the rotations agree.
pub fn bias_report(estimated: &[Pose], views: &[CalibrationView]) -> Result<BiasReport> {
    if estimated.len() != views.len() {
        return Err(Error::InvalidInput("one estimated pose per view required".into()));
    }
    if views.is_empty() {
        return Err(Error::InvalidInput("no views".into()));
    }
    let per_view = estimated
        .iter()
        .zip(views)
        .map(|(est, v)| {
            let truth = v
                .ground_truth
                .ok_or_else(|| Error::MissingGroundTruth(v.id.clone()))?;
            let rt = truth.rotation_matrix();
            let re = est.rotation_matrix();
            Ok(ViewBias {
                id: v.id.clone(),
                translation_error: rt * re.transpose() * est.translation - truth.translation,
                rotation_error_rad: rotation_angle_between(&re, &rt),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_view.len() as f64;
    let mut mean = Vector3::zeros();
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    for b in &per_view {
        mean += b.translation_error / n;
        min = min.inf(&b.translation_error);
        max = max.sup(&b.translation_error);
    }
    Ok(BiasReport {
        mean,
        min,
        max,
        mean_translation_error_mm: per_view.iter().map(|b| b.translation_error.norm()).sum::<f64>() / n,
        mean_rotation_error_rad: per_view.iter().map(|b| b.rotation_error_rad).sum::<f64>() / n,
        per_view,
    })
}
