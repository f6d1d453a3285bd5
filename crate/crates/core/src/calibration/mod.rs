//! Calibration pipelines.
//!
//! The baseline estimates one intrinsic matrix for all views: closed-form
//! initialization from the homographies, then joint refinement of every
//! parameter. The proposed method fixes the scale factors of each view from
//! its camera–template distance and refines only the skew, principal point,
//! distortion and poses.

mod extrinsics;
pub mod lm;
mod model;
mod zhang;

use nalgebra::DVector;
use rayon::prelude::*;

pub use extrinsics::{extrinsics_from_homography, orthogonalize_rotation};
pub use lm::{
    levenberg_marquardt, numeric_jacobian, LeastSquaresProblem, LmReport, LmStep, SolverOptions,
    Termination,
};
pub use model::{ReprojectionProblem, ScaleModel};
pub use zhang::{closed_form_intrinsics, pixel_conditioning};

use crate::error::{Error, Result};
use crate::homography::{estimate_homography, Correspondence, Homography};
use crate::lens::CurveFit;
use crate::scale::ScaleTable;
use crate::types::{project_distorted, Distortion, Intrinsics, Point2, Pose};

/// One image of the template.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationView {
    pub id: String,
    /// Camera–template distance, used to pick the view's scale factors.
    pub distance_mm: f64,
    pub correspondences: Vec<Correspondence>,
    pub ground_truth: Option<Pose>,
}

impl CalibrationView {
    pub fn validate(&self) -> Result<()> {
        if self.correspondences.len() < 4 {
            return Err(Error::InsufficientCorrespondences(
                self.correspondences.len(),
            ));
        }
        if !(self.distance_mm > 0.0 && self.distance_mm.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "view {}: distance must be positive",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Baseline,
    Proposed,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Proposed => "proposed",
        }
    }
}

/// Either one intrinsic matrix, or shared skew/principal point with
/// per-view scale factors.
#[derive(Debug, Clone, PartialEq)]
pub enum IntrinsicsModel {
    Shared(Intrinsics),
    PerView {
        gamma: f64,
        u0: f64,
        v0: f64,
        /// `(alpha, beta)` per view.
        scales: Vec<(f64, f64)>,
    },
}

impl IntrinsicsModel {
    pub fn for_view(&self, k: usize) -> Intrinsics {
        match self {
            IntrinsicsModel::Shared(i) => *i,
            IntrinsicsModel::PerView {
                gamma,
                u0,
                v0,
                scales,
            } => {
                let (alpha, beta) = scales.get(k).or(scales.first()).copied().unwrap_or((1.0, 1.0));
                Intrinsics {
                    alpha,
                    beta,
                    gamma: *gamma,
                    u0: *u0,
                    v0: *v0,
                }
            }
        }
    }
}

/// Residual statistics for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewStats {
    pub id: String,
    pub points: usize,
    /// Mean of the signed per-coordinate residuals.
    pub mean_px: f64,
    pub std_px: f64,
    pub rms_px: f64,
    pub mean_error_px: f64,
}

/// Reprojection residual statistics; residuals are `observed - predicted`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprojectionStats {
    /// Mean of the signed u and v residuals pooled together.
    pub mean_px: f64,
    /// Population standard deviation of the same pool.
    pub std_px: f64,
    pub median_px: f64,
    /// Root mean squared point distance.
    pub rms_px: f64,
    /// Mean point distance.
    pub mean_error_px: f64,
    pub max_error_px: f64,
    pub per_view: Vec<ViewStats>,
}

fn signed_summary(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() / 2;
    if sorted.len() % 2 == 0 {
        0.5 * (sorted[m - 1] + sorted[m])
    } else {
        sorted[m]
    }
}

/// Residual statistics of a parameter set on its views.
pub fn reprojection_stats(
    intrinsics: &IntrinsicsModel,
    distortion: &Distortion,
    poses: &[Pose],
    views: &[CalibrationView],
) -> Result<ReprojectionStats> {
    if poses.len() != views.len() {
        return Err(Error::InvalidInput("one pose per view required".into()));
    }
    let mut pooled = Vec::new();
    let mut distances = Vec::new();
    let mut per_view = Vec::with_capacity(views.len());
    for (k, view) in views.iter().enumerate() {
        let intr = intrinsics.for_view(k);
        let mut signed = Vec::with_capacity(2 * view.correspondences.len());
        let mut dist = Vec::with_capacity(view.correspondences.len());
        for c in &view.correspondences {
            let p = project_distorted(&c.world, &intr, distortion, &poses[k])?;
            let (du, dv) = (c.image.u - p.u, c.image.v - p.v);
            signed.extend([du, dv]);
            dist.push(du.hypot(dv));
        }
        let (mean, std) = signed_summary(&signed);
        let n = dist.len().max(1) as f64;
        per_view.push(ViewStats {
            id: view.id.clone(),
            points: dist.len(),
            mean_px: mean,
            std_px: std,
            rms_px: (dist.iter().map(|d| d * d).sum::<f64>() / n).sqrt(),
            mean_error_px: dist.iter().sum::<f64>() / n,
        });
        pooled.extend(signed);
        distances.extend(dist);
    }
    let (mean, std) = signed_summary(&pooled);
    let n = distances.len().max(1) as f64;
    Ok(ReprojectionStats {
        mean_px: mean,
        std_px: std,
        median_px: median(&pooled),
        rms_px: (distances.iter().map(|d| d * d).sum::<f64>() / n).sqrt(),
        mean_error_px: distances.iter().sum::<f64>() / n,
        max_error_px: distances.iter().copied().fold(0.0, f64::max),
        per_view,
    })
}

/// A complete parameter set with its residual statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraSolution {
    pub intrinsics: IntrinsicsModel,
    pub distortion: Distortion,
    pub poses: Vec<Pose>,
    pub stats: ReprojectionStats,
}

impl CameraSolution {
    pub fn new(
        intrinsics: IntrinsicsModel,
        distortion: Distortion,
        poses: Vec<Pose>,
        views: &[CalibrationView],
    ) -> Result<Self> {
        let stats = reprojection_stats(&intrinsics, &distortion, &poses, views)?;
        Ok(Self {
            intrinsics,
            distortion,
            poses,
            stats,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSummary {
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub steps: Vec<LmStep>,
}

impl From<&LmReport> for SolverSummary {
    fn from(r: &LmReport) -> Self {
        Self {
            converged: r.converged(),
            termination: r.termination,
            iterations: r.iterations,
            accepted_steps: r.accepted_steps,
            initial_objective: r.initial_objective,
            final_objective: r.objective,
            steps: r.steps.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub method: Method,
    pub view_ids: Vec<String>,
    /// Closed-form (baseline) or homography-derived (proposed) parameters
    /// before refinement.
    pub algebraic: CameraSolution,
    pub refined: CameraSolution,
    pub solver: SolverSummary,
}

impl CalibrationResult {
    pub fn converged(&self) -> bool {
        self.solver.converged
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub solver: SolverOptions,
    /// Refine `k1`, `k2`; otherwise distortion stays zero.
    pub refine_distortion: bool,
    /// Image size in pixels; its centre initializes the principal point of
    /// the proposed method.
    pub image_size: Option<(f64, f64)>,
    /// Overrides the principal-point initialization.
    pub principal_point: Option<Point2>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            refine_distortion: true,
            image_size: None,
            principal_point: None,
        }
    }
}

/// Where the proposed method takes each view's scale factors from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScaleSource {
    pub table: Option<ScaleTable>,
    /// Fitted `alpha(d)` and `beta(d)` curves.
    pub curves: Option<(CurveFit, CurveFit)>,
}

/// Relative distance within which a table row is used directly.
pub const TABLE_MATCH_FRACTION: f64 = 0.1;

impl ScaleSource {
    pub fn from_table(table: ScaleTable) -> Self {
        Self {
            table: Some(table),
            curves: None,
        }
    }

    pub fn from_curves(alpha: CurveFit, beta: CurveFit) -> Self {
        Self {
            table: None,
            curves: Some((alpha, beta)),
        }
    }

    /// Nearest table row within 10% of `distance_mm`, else the fitted
    /// curves.
    pub fn scales_for(&self, distance_mm: f64) -> Result<(f64, f64)> {
        if let Some(row) = self.table.as_ref().and_then(|t| t.nearest(distance_mm)) {
            if (row.distance_mm - distance_mm).abs() <= TABLE_MATCH_FRACTION * distance_mm {
                return Ok((row.alpha_px, row.beta_px));
            }
        }
        if let Some((a, b)) = &self.curves {
            let scales = (a.eval(distance_mm), b.eval(distance_mm));
            if scales.0 > 0.0 && scales.1 > 0.0 {
                return Ok(scales);
            }
        }
        Err(Error::MissingScaleForDistance { distance_mm })
    }
}

fn check_views(views: &[CalibrationView]) -> Result<()> {
    for v in views {
        v.validate()?;
    }
    Ok(())
}

fn homographies(views: &[CalibrationView]) -> Result<Vec<Homography>> {
    views
        .par_iter()
        .map(|v| estimate_homography(&v.correspondences))
        .collect()
}

/// Runs the refinement and packages both solutions. A budget overrun is
/// returned as `CalibrationNotConverged` holding the last iterate.
fn refine(
    method: Method,
    views: &[CalibrationView],
    problem: &ReprojectionProblem,
    algebraic: CameraSolution,
    solver: &SolverOptions,
) -> Result<CalibrationResult> {
    let x0 = problem.pack(&algebraic.intrinsics, &algebraic.distortion, &algebraic.poses)?;
    let (report, converged) = match levenberg_marquardt(problem, x0, solver) {
        Ok(r) => (r, true),
        Err(Error::NonConvergence(r)) => (*r, false),
        Err(e) => return Err(e),
    };
    let refined = solution_from_params(problem, &report.params, views)?;
    let result = CalibrationResult {
        method,
        view_ids: views.iter().map(|v| v.id.clone()).collect(),
        algebraic,
        refined,
        solver: SolverSummary::from(&report),
    };
    if converged {
        Ok(result)
    } else {
        Err(Error::CalibrationNotConverged(Box::new(result)))
    }
}

fn solution_from_params(
    problem: &ReprojectionProblem,
    x: &DVector<f64>,
    views: &[CalibrationView],
) -> Result<CameraSolution> {
    let (intrinsics, distortion, poses) = problem.unpack(x);
    // Rodrigues vectors are re-normalized into [0, pi].
    let poses = poses
        .into_iter()
        .map(|p| Pose::from_matrix(&p.rotation_matrix(), p.translation))
        .collect();
    CameraSolution::new(intrinsics, distortion, poses, views)
}

/// Single-intrinsics calibration: closed form, then joint refinement of all
/// parameters.
pub fn calibrate_baseline(
    views: &[CalibrationView],
    opts: &CalibrationOptions,
) -> Result<CalibrationResult> {
    opts.solver.validate()?;
    if views.len() < 3 {
        return Err(Error::DegenerateViewSet(format!(
            "need at least 3 views, got {}",
            views.len()
        )));
    }
    check_views(views)?;
    let hs = homographies(views)?;
    let conditioning =
        pixel_conditioning(views.iter().flat_map(|v| v.correspondences.iter().map(|c| &c.image)));
    let intr = closed_form_intrinsics(&hs, &conditioning)?;
    let a = intr.matrix();
    let poses = hs
        .iter()
        .map(|h| extrinsics_from_homography(h, &a))
        .collect::<Result<Vec<_>>>()?;
    let algebraic =
        CameraSolution::new(IntrinsicsModel::Shared(intr), Distortion::default(), poses, views)?;
    let problem = ReprojectionProblem::new(views, ScaleModel::Shared, opts.refine_distortion)?;
    refine(Method::Baseline, views, &problem, algebraic, &opts.solver)
}

/// Calibration with per-view scale factors held at the values the scale
/// source gives for each view's distance.
pub fn calibrate_proposed(
    views: &[CalibrationView],
    source: &ScaleSource,
    opts: &CalibrationOptions,
) -> Result<CalibrationResult> {
    opts.solver.validate()?;
    if views.is_empty() {
        return Err(Error::DegenerateViewSet("no views".into()));
    }
    check_views(views)?;
    let scales = views
        .iter()
        .map(|v| source.scales_for(v.distance_mm))
        .collect::<Result<Vec<_>>>()?;
    let centre = match (opts.principal_point, opts.image_size) {
        (Some(p), _) => p,
        (None, Some((w, h))) => Point2::new(0.5 * w, 0.5 * h),
        (None, None) => {
            return Err(Error::InvalidInput(
                "image size or principal point required to initialize the principal point".into(),
            ))
        }
    };
    let intrinsics = IntrinsicsModel::PerView {
        gamma: 0.0,
        u0: centre.u,
        v0: centre.v,
        scales: scales.clone(),
    };
    let hs = homographies(views)?;
    let poses = hs
        .iter()
        .enumerate()
        .map(|(k, h)| extrinsics_from_homography(h, &intrinsics.for_view(k).matrix()))
        .collect::<Result<Vec<_>>>()?;
    let algebraic = CameraSolution::new(intrinsics, Distortion::default(), poses, views)?;
    let problem =
        ReprojectionProblem::new(views, ScaleModel::Frozen(scales), opts.refine_distortion)?;
    refine(Method::Proposed, views, &problem, algebraic, &opts.solver)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scale::ScaleRow;
    use crate::types::{rodrigues_to_matrix, Point3};
    use nalgebra::Vector3;

    fn truth() -> Intrinsics {
        Intrinsics::new(1370.8, 1373.8, 0.0001, 645.8, 359.3).unwrap()
    }

    fn pose(r: [f64; 3], t: [f64; 3]) -> Pose {
        Pose::new(Vector3::from(r), Vector3::from(t))
    }

    fn truth_poses() -> Vec<Pose> {
        vec![
            pose([0.3, -0.1, 0.05], [-100.0, -80.0, 700.0]),
            pose([-0.25, 0.2, -0.1], [-90.0, -70.0, 650.0]),
            pose([0.1, 0.35, 0.2], [-110.0, -60.0, 800.0]),
            pose([-0.2, -0.3, 1.0], [-80.0, -90.0, 750.0]),
            pose([0.4, 0.1, -0.6], [-100.0, -100.0, 900.0]),
        ]
    }

    fn make_views(
        intr_for: impl Fn(usize) -> Intrinsics,
        dist: Distortion,
        poses: &[Pose],
    ) -> Vec<CalibrationView> {
        poses
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let correspondences = (0..80)
                    .map(|j| {
                        let w = Point3::on_plane((j % 10) as f64 * 20.0, (j / 10) as f64 * 20.0);
                        Correspondence::new(w, project_distorted(&w, &intr_for(k), &dist, p).unwrap())
                    })
                    .collect();
                CalibrationView {
                    id: format!("view{k}"),
                    distance_mm: p.translation.z,
                    correspondences,
                    ground_truth: Some(*p),
                }
            })
            .collect()
    }

    fn rotation_ok(p: &Pose) -> bool {
        let r = p.rotation_matrix();
        (r.transpose() * r - nalgebra::Matrix3::identity()).norm() < 1e-10
            && (r.determinant() - 1.0).abs() < 1e-10
    }

    #[test]
    fn baseline_recovers_exact_model() {
        let dist = Distortion::new(0.0087, -0.072);
        let poses = truth_poses();
        let views = make_views(|_| truth(), dist, &poses);
        let res = calibrate_baseline(&views, &CalibrationOptions::default()).unwrap();
        let IntrinsicsModel::Shared(est) = res.refined.intrinsics else {
            panic!("expected shared intrinsics")
        };
        let t = truth();
        assert!((est.alpha - t.alpha).abs() / t.alpha < 1e-6);
        assert!((est.beta - t.beta).abs() / t.beta < 1e-6);
        assert!((est.u0 - t.u0).abs() / t.u0 < 1e-6);
        assert!((est.v0 - t.v0).abs() / t.v0 < 1e-6);
        assert!((est.gamma - t.gamma).abs() / t.alpha < 1e-6);
        assert!((res.refined.distortion.k1 - dist.k1).abs() < 1e-6);
        for (p, q) in res.refined.poses.iter().zip(&poses) {
            assert!(rotation_ok(p));
            assert!(
                crate::types::rotation_angle_between(&p.rotation_matrix(), &q.rotation_matrix())
                    < 1e-6
            );
            assert!((p.translation - q.translation).norm() / q.translation.norm() < 1e-6);
        }
        assert!(res.refined.stats.mean_error_px < 1e-8);
        let h = res.solver.steps.iter().filter(|s| s.accepted).map(|s| s.objective);
        let mut prev = res.solver.initial_objective;
        for o in h {
            assert!(o <= prev);
            prev = o;
        }
    }

    #[test]
    fn baseline_needs_three_views() {
        let poses = truth_poses();
        let views = make_views(|_| truth(), Distortion::default(), &poses[..2]);
        assert!(matches!(
            calibrate_baseline(&views, &CalibrationOptions::default()),
            Err(Error::DegenerateViewSet(_))
        ));
    }

    fn per_view_scales(poses: &[Pose]) -> Vec<(f64, f64)> {
        poses
            .iter()
            .map(|p| {
                let s = 1.0 - 20.0 / p.translation.z;
                (1370.8 * s, 1373.8 * s)
            })
            .collect()
    }

    #[test]
    fn proposed_recovers_exact_model_and_keeps_scales() {
        let poses = truth_poses();
        let scales = per_view_scales(&poses);
        let views = make_views(|k| truth().with_scales(scales[k].0, scales[k].1), Distortion::new(0.0087, -0.072), &poses);
        let rows = views
            .iter()
            .zip(&scales)
            .map(|(v, s)| ScaleRow {
                distance_mm: v.distance_mm,
                alpha_px: s.0,
                beta_px: s.1,
            })
            .collect();
        let source = ScaleSource::from_table(ScaleTable::new(rows).unwrap());
        let opts = CalibrationOptions {
            image_size: Some((1279.0, 724.0)),
            ..CalibrationOptions::default()
        };
        let res = calibrate_proposed(&views, &source, &opts).unwrap();
        let IntrinsicsModel::PerView { u0, v0, scales: got, .. } = &res.refined.intrinsics else {
            panic!("expected per-view intrinsics")
        };
        for (g, s) in got.iter().zip(&scales) {
            assert_eq!(g.0.to_bits(), s.0.to_bits());
            assert_eq!(g.1.to_bits(), s.1.to_bits());
        }
        assert!((u0 - 645.8).abs() < 1e-6 && (v0 - 359.3).abs() < 1e-6);
        for (p, q) in res.refined.poses.iter().zip(&poses) {
            assert!(rotation_ok(p));
            assert!((p.translation - q.translation).norm() / q.translation.norm() < 1e-4);
        }
        assert!(res.refined.stats.mean_error_px < 1e-6);
    }

    #[test]
    fn missing_scale_is_reported() {
        let table = ScaleTable::new(vec![ScaleRow {
            distance_mm: 100.0,
            alpha_px: 1.0,
            beta_px: 1.0,
        }])
        .unwrap();
        let source = ScaleSource::from_table(table);
        assert!(source.scales_for(105.0).is_ok());
        assert!(matches!(
            source.scales_for(200.0),
            Err(Error::MissingScaleForDistance { .. })
        ));
        let both = ScaleSource {
            curves: Some((
                CurveFit { k_f: 0.0, value0: 7.0 },
                CurveFit { k_f: 0.0, value0: 8.0 },
            )),
            ..source
        };
        assert_eq!(both.scales_for(200.0).unwrap(), (7.0, 8.0));
        assert_eq!(both.scales_for(100.0).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn start_at_truth_does_not_move() {
        let poses = truth_poses();
        let views = make_views(|_| truth(), Distortion::default(), &poses);
        let problem = ReprojectionProblem::new(&views, ScaleModel::Shared, true).unwrap();
        let x0 = problem
            .pack(&IntrinsicsModel::Shared(truth()), &Distortion::default(), &poses)
            .unwrap();
        let report = levenberg_marquardt(&problem, x0.clone(), &SolverOptions::default()).unwrap();
        assert!((report.params - x0).amax() < 1e-9);
    }

    #[test]
    fn stats_are_deterministic_and_zero_on_exact_model() {
        let poses = truth_poses();
        let views = make_views(|_| truth(), Distortion::default(), &poses);
        let model = IntrinsicsModel::Shared(truth());
        let a = reprojection_stats(&model, &Distortion::default(), &poses, &views).unwrap();
        let b = reprojection_stats(&model, &Distortion::default(), &poses, &views).unwrap();
        assert_eq!(a, b);
        assert!(a.mean_px.abs() < 1e-9 && a.std_px < 1e-9);
    }

    #[test]
    fn gauge_transform_moves_poses_only() {
        let poses = truth_poses();
        let views = make_views(|_| truth(), Distortion::default(), &poses);
        let g = Pose::new(Vector3::new(0.1, -0.2, 0.3), Vector3::new(5.0, -3.0, 0.0));
        let g_rot = rodrigues_to_matrix(&g.rotation);
        // world points move by g; every camera pose composes with g^-1
        let moved: Vec<CalibrationView> = views
            .iter()
            .map(|v| CalibrationView {
                correspondences: v
                    .correspondences
                    .iter()
                    .map(|c| {
                        let w = g_rot * c.world.to_vector() + g.translation;
                        Correspondence::new(Point3::new(w.x, w.y, w.z), c.image)
                    })
                    .collect(),
                ..v.clone()
            })
            .collect();
        let moved_poses: Vec<Pose> = poses.iter().map(|p| p.compose(&g.inverse())).collect();
        let model = IntrinsicsModel::Shared(truth());
        let a = reprojection_stats(&model, &Distortion::default(), &poses, &views).unwrap();
        let b = reprojection_stats(&model, &Distortion::default(), &moved_poses, &moved).unwrap();
        assert!((a.rms_px - b.rms_px).abs() < 1e-9);
        assert!((a.mean_px - b.mean_px).abs() < 1e-9);
    }

    #[test]
    fn in_plane_gauge_change_moves_recovered_poses() {
        let poses = truth_poses();
        let mut views = make_views(|_| truth(), Distortion::new(0.01, -0.05), &poses);
        // deterministic perturbation so the optimum is not the exact model
        for (k, v) in views.iter_mut().enumerate() {
            for (j, c) in v.correspondences.iter_mut().enumerate() {
                let s = (k * 131 + j * 17) as f64;
                c.image = Point2::new(c.image.u + 0.3 * s.sin(), c.image.v + 0.3 * s.cos());
            }
        }
        let g = Pose::new(Vector3::new(0.0, 0.0, 0.7), Vector3::new(40.0, -25.0, 0.0));
        let moved: Vec<CalibrationView> = views
            .iter()
            .map(|v| CalibrationView {
                correspondences: v
                    .correspondences
                    .iter()
                    .map(|c| {
                        let w = g.transform(&c.world);
                        Correspondence::new(Point3::on_plane(w.x, w.y), c.image)
                    })
                    .collect(),
                ..v.clone()
            })
            .collect();
        let opts = CalibrationOptions::default();
        let a = calibrate_baseline(&views, &opts).unwrap();
        let b = calibrate_baseline(&moved, &opts).unwrap();
        assert!((a.refined.stats.rms_px - b.refined.stats.rms_px).abs() < 1e-9);
        assert!((a.refined.stats.mean_px - b.refined.stats.mean_px).abs() < 1e-9);
        for (pa, pb) in a.refined.poses.iter().zip(&b.refined.poses) {
            let expected = pa.compose(&g.inverse());
            let angle = crate::types::rotation_angle_between(
                &expected.rotation_matrix(),
                &pb.rotation_matrix(),
            );
            assert!(angle < 1e-7, "{angle}");
            assert!((expected.translation - pb.translation).norm() < 1e-5);
        }
    }
}
