use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;

use focuscal::calibration::{
    calibrate_baseline, calibrate_proposed, CalibrationOptions, CalibrationResult, Method,
    ScaleSource, SolverOptions,
};
use focuscal::io::{
    self, bias_csv, lens_sweep_csv, options_record, scale_table_csv, write_atomic,
    CalibrationFile, CurveFile, DatasetFile, DatasetMeta, Provenance, SegmentationFile,
};
use focuscal::lens::{distance_range, fit_focal_curve, LensSpec};
use focuscal::scale::{scale_factors, segment_stack, segment_zones, CentralWindow, ScaleTable};
use focuscal::synthetic::{
    bias_report, generate_dataset, generate_parallel_stack, sample_poses, spread_distances,
    BiasReport, CameraPreset, FocusMode, TemplateSpec,
};
use focuscal::types::{Point2, Point3, Pose};
use focuscal::Error;

/// Camera calibration with distance-dependent scale factors.
#[derive(Parser)]
#[command(name = "focuscal", version)]
struct Cli {
    /// Print errors on stderr as JSON objects.
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Estimate per-distance scale factors and zones from fronto-parallel views.
    ScaleFactors(ScaleArgs),
    /// Calibrate a dataset.
    Calibrate(CalibrateArgs),
    /// Pose bias and reprojection report against ground truth.
    Report(ReportArgs),
    /// Sharp-focus focal length over a distance sweep, as CSV.
    LensCurve(LensArgs),
}

#[derive(Args)]
struct PresetArgs {
    /// Bundled preset name.
    #[arg(long, conflicts_with = "preset_file")]
    preset: Option<String>,
    /// Preset JSON file.
    #[arg(long)]
    preset_file: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fixed,
    Distance,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    preset: PresetArgs,
    #[arg(long, default_value_t = 15)]
    views: usize,
    #[arg(long, value_enum, default_value = "distance")]
    mode: ModeArg,
    /// Pixel noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// View distance range FROM:TO in mm (default: the preset's range).
    #[arg(long)]
    distances: Option<String>,
    /// Fronto-parallel stack FROM:TO:STEP in mm instead of tilted views.
    #[arg(long)]
    parallel_stack: Option<String>,
    /// Template rows, columns and pitch override the preset template.
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    pitch: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScaleArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Scale table CSV output.
    #[arg(long)]
    table_out: PathBuf,
    /// Zone segmentation JSON output.
    #[arg(long)]
    zones_out: PathBuf,
    /// One plateau band in pixels for every distance (default: a band per
    /// view from the pooled gap scatter).
    #[arg(long)]
    noise_band: Option<f64>,
    /// Central window radius as a fraction of the image diagonal.
    #[arg(long, default_value_t = 0.2)]
    window: f64,
    /// Also fit alpha(d), beta(d) over zones 1 and 2 and write them here.
    #[arg(long)]
    fit: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Baseline,
    Proposed,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Scale table CSV for the proposed method.
    #[arg(long)]
    scale_table: Option<PathBuf>,
    /// Fitted curve JSON for the proposed method.
    #[arg(long)]
    scale_curve: Option<PathBuf>,
    /// Principal point initial guess U,V (default: image centre).
    #[arg(long)]
    principal_point: Option<String>,
    #[arg(long, default_value_t = SolverOptions::default().max_iterations)]
    max_iterations: usize,
    /// Keep k1 = k2 = 0.
    #[arg(long)]
    no_distortion: bool,
    /// Print the solver steps on stderr.
    #[arg(long)]
    verbose: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// One or two calibration files; with two, the report compares them.
    #[arg(long, required = true, num_args = 1)]
    calibration: Vec<PathBuf>,
    /// Per-view bias CSV, one per calibration file.
    #[arg(long, num_args = 1)]
    csv_out: Vec<PathBuf>,
    /// Summary JSON.
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Args)]
struct LensArgs {
    #[command(flatten)]
    preset: PresetArgs,
    /// Lens radius D in mm (overrides the preset).
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    angle_ratio: Option<f64>,
    #[arg(long)]
    offset: Option<f64>,
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    #[arg(long)]
    step: f64,
    /// CSV output (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn report_error(kind: &str, code: &str, message: &str, json: bool) {
    if json {
        let v = serde_json::json!({"error": {"kind": kind, "code": code, "message": message}});
        eprintln!("{v}");
    } else {
        eprintln!("error: {message}");
    }
}

fn main() -> ExitCode {
    let json_errors = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            if json_errors {
                report_error("usage", "Usage", e.to_string().trim(), true);
            } else {
                eprint!("{e}");
            }
            return ExitCode::from(2);
        }
    };
    let outcome = configure_threads().and_then(|_| match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::ScaleFactors(a) => scale(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Report(a) => report(a),
        Command::LensCurve(a) => lens_curve(a),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            report_error("usage", "Usage", &msg, cli.json_errors);
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            report_error("runtime", e.kind(), &e.to_string(), cli.json_errors);
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("FOCUSCAL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| usage(format!("FOCUSCAL_THREADS must be a count, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(Error::InvalidInput(e.to_string())))
}

fn parse_numbers(text: &str, sep: char, count: usize, what: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<f64> = text
        .split(sep)
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("{what}: expected {count} numbers, got {text:?}")))?;
    if parts.len() != count || parts.iter().any(|x| !x.is_finite()) {
        return Err(usage(format!("{what}: expected {count} numbers, got {text:?}")));
    }
    Ok(parts)
}

fn load_preset(args: &PresetArgs) -> CliResult<CameraPreset> {
    match (&args.preset, &args.preset_file) {
        (Some(name), None) => CameraPreset::bundled(name).map_err(|_| {
            usage(format!(
                "unknown preset {name:?} (bundled: {})",
                focuscal::synthetic::BUNDLED_PRESETS.join(", ")
            ))
        }),
        (None, Some(path)) => Ok(CameraPreset::from_json(&io::read_text(path)?)?),
        _ => Err(usage("one of --preset or --preset-file is required")),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn read_dataset(path: &Path) -> CliResult<DatasetFile> {
    Ok(DatasetFile::from_json(&io::read_text(path)?)?)
}

fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let preset = load_preset(&a.preset)?;
    let template = TemplateSpec::new(
        a.rows.unwrap_or(preset.template.rows),
        a.cols.unwrap_or(preset.template.cols),
        a.pitch.unwrap_or(preset.template.pitch_mm),
    )
    .map_err(|e| usage(e.to_string()))?;
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(usage("--noise must be a non-negative number"));
    }
    let mut meta = DatasetMeta {
        preset: Some(preset.name.clone()),
        seed: Some(a.seed),
        noise_px: Some(a.noise),
        mode: None,
        image_size_px: Some([preset.image_width, preset.image_height]),
    };
    let views = if let Some(range) = &a.parallel_stack {
        let r = parse_numbers(range, ':', 3, "--parallel-stack")?;
        let distances = distance_range(r[0], r[1], r[2]).map_err(|e| usage(e.to_string()))?;
        meta.mode = Some("parallel-stack".into());
        let stack = generate_parallel_stack(&preset, &template, &distances, a.noise, a.seed)?;
        let c = template.centre();
        stack
            .iter()
            .enumerate()
            .map(|(k, v)| focuscal::calibration::CalibrationView {
                id: format!("stack_{k:03}"),
                distance_mm: v.distance_mm,
                correspondences: v
                    .points
                    .iter()
                    .map(|p| {
                        focuscal::homography::Correspondence::new(
                            Point3::on_plane(
                                p.col as f64 * template.pitch_mm,
                                p.row as f64 * template.pitch_mm,
                            ),
                            p.image,
                        )
                    })
                    .collect(),
                ground_truth: Some(Pose::new(
                    Vector3::zeros(),
                    Vector3::new(-c.x, -c.y, v.distance_mm),
                )),
            })
            .collect()
    } else {
        if a.views < 3 {
            return Err(usage("--views must be at least 3"));
        }
        let (from, to) = match &a.distances {
            Some(text) => {
                let r = parse_numbers(text, ':', 2, "--distances")?;
                if !(r[0] > 0.0 && r[1] >= r[0]) {
                    return Err(usage("--distances needs 0 < FROM <= TO"));
                }
                (r[0], r[1])
            }
            None => preset.view_distance_mm,
        };
        let mode = match a.mode {
            ModeArg::Fixed => FocusMode::FixedPlateau,
            ModeArg::Distance => FocusMode::DistanceDependent,
        };
        meta.mode = Some(mode.as_str().into());
        let poses = sample_poses(&template, &spread_distances(from, to, a.views), a.seed);
        generate_dataset(&preset, &template, &poses, mode, a.noise, a.seed)?
    };
    let file = DatasetFile::from_views(&template, &views, meta);
    file.validate()?;
    write_text(&a.out, &file.to_json()?)?;
    let points: usize = file.views.iter().map(|v| v.points.len()).sum();
    println!(
        "wrote {} views, {} points, mode {} to {}",
        file.views.len(),
        points,
        file.meta.mode.as_deref().unwrap_or("?"),
        a.out.display()
    );
    Ok(())
}

fn scale(a: &ScaleArgs) -> CliResult<()> {
    if !(a.window > 0.0) {
        return Err(usage("--window must be positive"));
    }
    let data = read_dataset(&a.dataset)?;
    let views = data.parallel_views()?;
    let window = CentralWindow { fraction: a.window };
    let (table, seg) = match a.noise_band {
        Some(b) if b > 0.0 => {
            let table = scale_factors(&views, window)?.sorted();
            let seg = segment_zones(&table, b)?;
            (table, seg)
        }
        Some(_) => return Err(usage("--noise-band must be positive")),
        None => segment_stack(&views, window)?,
    };
    write_text(&a.table_out, &scale_table_csv(&table)?)?;
    write_text(&a.zones_out, &SegmentationFile::from(&seg).to_json()?)?;
    println!(
        "{} distances; zone 1 ends at {} mm, zone 2 at {} mm; plateau alpha {} px, beta {} px",
        table.rows.len(),
        io::format_float(seg.zone1_end_mm),
        io::format_float(seg.zone2_end_mm),
        io::format_float(seg.plateau_alpha_px),
        io::format_float(seg.plateau_beta_px)
    );
    if let Some(path) = &a.fit {
        let kept = ScaleTable::new(
            table
                .rows
                .iter()
                .filter(|r| r.distance_mm <= seg.zone2_end_mm)
                .copied()
                .collect(),
        )?;
        let alpha = fit_focal_curve(&kept.alpha_samples())?.fit;
        let beta = fit_focal_curve(&kept.beta_samples())?.fit;
        let (Some(alpha), Some(beta)) = (alpha, beta) else {
            return Err(Failure::Runtime(Error::SingularSystem("curve fit failed".into())));
        };
        write_text(path, &CurveFile::new(alpha, beta).to_json()?)?;
        println!(
            "alpha(d) = -{}/d^2 + {}",
            io::format_float(alpha.k_f),
            io::format_float(alpha.value0)
        );
    }
    Ok(())
}

fn calibrate(a: &CalibrateArgs) -> CliResult<()> {
    let method = match a.method {
        MethodArg::Baseline => Method::Baseline,
        MethodArg::Proposed => Method::Proposed,
    };
    let source = match (method, &a.scale_table, &a.scale_curve) {
        (Method::Baseline, None, None) => None,
        (Method::Baseline, _, _) => {
            return Err(usage("the baseline method takes no scale source"))
        }
        (Method::Proposed, None, None) => {
            return Err(usage(
                "--method proposed needs --scale-table or --scale-curve",
            ))
        }
        (Method::Proposed, table, curve) => {
            let mut s = ScaleSource::default();
            if let Some(p) = table {
                s.table = Some(io::parse_scale_table_csv(&io::read_text(p)?)?);
            }
            if let Some(p) = curve {
                s.curves = Some(CurveFile::from_json(&io::read_text(p)?)?.fits());
            }
            Some(s)
        }
    };
    let principal_point = match &a.principal_point {
        Some(text) => {
            let p = parse_numbers(text, ',', 2, "--principal-point")?;
            Some(Point2::new(p[0], p[1]))
        }
        None => None,
    };
    let data = read_dataset(&a.dataset)?;
    if source.is_some() && principal_point.is_none() && data.meta.image_size_px.is_none() {
        return Err(usage(
            "dataset has no image size; pass --principal-point for the proposed method",
        ));
    }
    let opts = CalibrationOptions {
        solver: SolverOptions {
            max_iterations: a.max_iterations,
            ..SolverOptions::default()
        },
        refine_distortion: !a.no_distortion,
        image_size: data.meta.image_size_px.map(|[w, h]| (w, h)),
        principal_point,
    };
    opts.solver.validate().map_err(|e| usage(e.to_string()))?;
    let views = data.calibration_views();
    let outcome = match &source {
        None => calibrate_baseline(&views, &opts),
        Some(s) => calibrate_proposed(&views, s, &opts),
    };
    let (result, failure): (CalibrationResult, Option<Error>) = match outcome {
        Ok(r) => (r, None),
        Err(Error::CalibrationNotConverged(r)) => {
            let err = Error::CalibrationNotConverged(r.clone());
            (*r, Some(err))
        }
        Err(e) => return Err(e.into()),
    };
    if a.verbose {
        for step in &result.solver.steps {
            eprintln!("{step}");
        }
    }
    let provenance = Provenance {
        dataset_sha256: data.hash()?,
        options: options_record(&opts),
        tool_version: io::TOOL_VERSION.into(),
    };
    let file = CalibrationFile::new(&result, provenance);
    write_text(&a.out, &file.to_json()?)?;
    println!(
        "{}: {} views, reprojection mean {} px, rms {} px, {} ({} iterations)",
        method.as_str(),
        views.len(),
        io::format_float(result.refined.stats.mean_px),
        io::format_float(result.refined.stats.rms_px),
        result.solver.termination.as_str(),
        result.solver.iterations
    );
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

struct MethodReport {
    label: String,
    bias: BiasReport,
    stats: focuscal::calibration::ReprojectionStats,
}

fn report(a: &ReportArgs) -> CliResult<()> {
    if a.calibration.len() > 2 {
        return Err(usage("--calibration accepts one or two files"));
    }
    if !a.csv_out.is_empty() && a.csv_out.len() != a.calibration.len() {
        return Err(usage("give one --csv-out per --calibration"));
    }
    let data = read_dataset(&a.dataset)?;
    let views = data.calibration_views();
    let hash = data.hash()?;
    let mut reports = Vec::new();
    for path in &a.calibration {
        let cal = CalibrationFile::from_json(&io::read_text(path)?)?;
        if cal.provenance.dataset_sha256 != hash {
            eprintln!(
                "warning: {} was computed from a different dataset",
                path.display()
            );
        }
        let refined = cal.refined();
        let ids = refined.view_ids();
        if ids.len() != views.len() || ids.iter().zip(&views).any(|(i, v)| *i != v.id) {
            return Err(Failure::Runtime(Error::InvalidInput(format!(
                "{}: views do not match the dataset",
                path.display()
            ))));
        }
        let bias = bias_report(&refined.poses(), &views)?;
        reports.push(MethodReport {
            label: cal.method.clone(),
            bias,
            stats: (&refined.stats).into(),
        });
    }
    for (r, path) in reports.iter().zip(&a.csv_out) {
        write_text(path, &bias_csv(&r.bias)?)?;
    }

    println!(
        "{:<10} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "method", "mean|t| mm", "mean dz mm", "min dz mm", "max dz mm", "rot rad", "reproj px"
    );
    for r in &reports {
        println!(
            "{:<10} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.3e} {:>12.6}",
            r.label,
            r.bias.mean_translation_error_mm,
            r.bias.mean.z,
            r.bias.min.z,
            r.bias.max.z,
            r.bias.mean_rotation_error_rad,
            r.stats.mean_error_px
        );
    }
    let ratio = match reports.as_slice() {
        [a, b] => {
            let ratio = a.bias.mean_translation_error_mm / b.bias.mean_translation_error_mm;
            println!(
                "ratio of mean translation errors ({} / {}): {}",
                a.label,
                b.label,
                io::format_float(ratio)
            );
            Some(ratio)
        }
        _ => None,
    };
    if let Some(path) = &a.json_out {
        let entries: Vec<_> = reports
            .iter()
            .map(|r| {
                let v = |x: Vector3<f64>| vec![x.x, x.y, x.z];
                serde_json::json!({
                    "method": r.label,
                    "mean_translation_error_mm": r.bias.mean_translation_error_mm,
                    "mean_rotation_error_rad": r.bias.mean_rotation_error_rad,
                    "mean_bias_mm": v(r.bias.mean),
                    "min_bias_mm": v(r.bias.min),
                    "max_bias_mm": v(r.bias.max),
                    "reprojection": {
                        "mean_px": r.stats.mean_px,
                        "std_px": r.stats.std_px,
                        "median_px": r.stats.median_px,
                        "rms_px": r.stats.rms_px,
                        "mean_error_px": r.stats.mean_error_px,
                    },
                })
            })
            .collect();
        let mut summary = serde_json::json!({
            "schema": io::SCHEMA_VERSION,
            "dataset_sha256": hash,
            "reports": entries,
        });
        if let Some(r) = ratio {
            summary["ratio"] = serde_json::json!(r);
        }
        write_text(path, &io::to_canonical_json(&summary)?)?;
    }
    Ok(())
}

fn lens_curve(a: &LensArgs) -> CliResult<()> {
    let base = if a.preset.preset.is_some() || a.preset.preset_file.is_some() {
        Some(load_preset(&a.preset)?.lens)
    } else {
        None
    };
    let pick = |v: Option<f64>, p: Option<f64>, name: &str| {
        v.or(p)
            .ok_or_else(|| usage(format!("--{name} is required without a preset")))
    };
    let lens = LensSpec::new(
        pick(a.radius, base.map(|l| l.radius_mm), "radius")?,
        pick(a.angle_ratio, base.map(|l| l.angle_ratio), "angle-ratio")?,
        pick(a.offset, base.map(|l| l.offset_mm), "offset")?,
    )
    .map_err(|e| usage(e.to_string()))?;
    distance_range(a.from, a.to, a.step).map_err(|e| usage(e.to_string()))?;
    let text = lens_sweep_csv(&lens.sweep(a.from, a.to, a.step)?)?;
    match &a.out {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
