//! Per-distance scale factors from fronto-parallel views of a grid.
//!
//! With the template parallel to the sensor at distance `d`, adjacent grid
//! points `pitch` millimetres apart land `gap = pitch * alpha / d` pixels
//! apart, so each view yields `alpha = gap_u * d / pitch` and
//! `beta = gap_v * d / pitch`. Plotting these against `d` shows a rising
//! zone (focus still moving), a flat plateau, and a noisy far zone.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::types::Point2;

/// One detected grid corner with its template indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridObservation {
    pub row: usize,
    pub col: usize,
    pub image: Point2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelView {
    pub distance_mm: f64,
    pub pitch_mm: f64,
    pub image_width: f64,
    pub image_height: f64,
    pub points: Vec<GridObservation>,
}

/// Radius of the central window as a fraction of the image diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralWindow {
    pub fraction: f64,
}

impl Default for CentralWindow {
    fn default() -> Self {
        Self { fraction: 0.2 }
    }
}

impl CentralWindow {
    pub fn full_image() -> Self {
        Self {
            fraction: f64::INFINITY,
        }
    }

    fn contains(&self, view: &ParallelView, p: &Point2) -> bool {
        let radius = self.fraction * view.image_width.hypot(view.image_height);
        let du = p.u - 0.5 * view.image_width;
        let dv = p.v - 0.5 * view.image_height;
        du.hypot(dv) < radius
    }
}

/// Mean adjacent-point gaps inside the central window.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    pub du: f64,
    pub dv: f64,
    /// Sample standard deviation of the horizontal gaps.
    pub du_std: f64,
    /// Standard error of `du`. Gaps along a row share their end points and
    /// telescope, so this comes from the scatter of the per-row spans rather
    /// than from `du_std`.
    pub du_se: f64,
    /// Rows contributing horizontal gaps, and the sample variance of their
    /// spans about `du` times their gap count.
    pub u_rows: usize,
    pub span_var: f64,
    pub u_pairs: usize,
    pub v_pairs: usize,
}

pub fn central_increments(view: &ParallelView, window: CentralWindow) -> Result<Increments> {
    let inside: HashMap<(usize, usize), Point2> = view
        .points
        .iter()
        .filter(|o| window.contains(view, &o.image))
        .map(|o| ((o.row, o.col), o.image))
        .collect();

    let mut u_gaps = Vec::new();
    let mut v_gaps = Vec::new();
    let mut spans: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (&(row, col), p) in &inside {
        if let Some(q) = inside.get(&(row, col + 1)) {
            u_gaps.push((q.u - p.u).abs());
            let s = spans.entry(row).or_default();
            s.0 += (q.u - p.u).abs();
            s.1 += 1;
        }
        if let Some(q) = inside.get(&(row + 1, col)) {
            v_gaps.push((q.v - p.v).abs());
        }
    }
    if u_gaps.is_empty() || v_gaps.is_empty() || u_gaps.len() + v_gaps.len() < 2 {
        return Err(Error::TooFewCentralPoints(format!(
            "view at {} mm: {} horizontal and {} vertical pairs",
            view.distance_mm,
            u_gaps.len(),
            v_gaps.len()
        )));
    }
    // HashMap iteration order is arbitrary; sort so sums are reproducible.
    u_gaps.sort_by(f64::total_cmp);
    v_gaps.sort_by(f64::total_cmp);
    let du = mean(&u_gaps);
    let dv = mean(&v_gaps);
    let du_std = sample_std(&u_gaps, du);
    let n = u_gaps.len() as f64;
    let span_var = if spans.len() >= 2 {
        spans
            .values()
            .map(|&(sum, count)| (sum - count as f64 * du).powi(2))
            .sum::<f64>()
            / (spans.len() - 1) as f64
    } else {
        f64::NAN
    };
    let du_se = if spans.len() >= 2 {
        (spans.len() as f64 * span_var).sqrt() / n
    } else {
        du_std / n.sqrt()
    };
    Ok(Increments {
        du,
        dv,
        du_std,
        du_se,
        u_rows: spans.len(),
        span_var,
        u_pairs: u_gaps.len(),
        v_pairs: v_gaps.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleRow {
    pub distance_mm: f64,
    pub alpha_px: f64,
    pub beta_px: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScaleTable {
    pub rows: Vec<ScaleRow>,
}

impl ScaleTable {
    pub fn new(rows: Vec<ScaleRow>) -> Result<Self> {
        if let Some(bad) = rows
            .iter()
            .find(|r| !(r.distance_mm > 0.0 && r.distance_mm.is_finite()))
        {
            return Err(Error::InvalidInput(format!(
                "scale table distance must be positive, got {}",
                bad.distance_mm
            )));
        }
        Ok(Self { rows })
    }

    pub fn sorted(&self) -> Self {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| a.distance_mm.total_cmp(&b.distance_mm));
        Self { rows }
    }

    /// Row whose distance is closest to `distance_mm`.
    pub fn nearest(&self, distance_mm: f64) -> Option<&ScaleRow> {
        self.rows.iter().min_by(|a, b| {
            (a.distance_mm - distance_mm)
                .abs()
                .total_cmp(&(b.distance_mm - distance_mm).abs())
        })
    }

    pub fn alpha_samples(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.distance_mm, r.alpha_px)).collect()
    }

    pub fn beta_samples(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.distance_mm, r.beta_px)).collect()
    }
}

/// `alpha_i = du_i * d_i / pitch`, `beta_i = dv_i * d_i / pitch`, one row per
/// view in input order.
pub fn scale_factors(views: &[ParallelView], window: CentralWindow) -> Result<ScaleTable> {
    let Some(first) = views.first() else {
        return Ok(ScaleTable::default());
    };
    let pitch = first.pitch_mm;
    if !(pitch > 0.0) {
        return Err(Error::InvalidInput(format!(
            "template pitch must be positive, got {pitch}"
        )));
    }
    let mut rows = Vec::with_capacity(views.len());
    for view in views {
        if view.pitch_mm != pitch {
            return Err(Error::InvalidInput(format!(
                "views use different template pitches ({} vs {pitch})",
                view.pitch_mm
            )));
        }
        if !(view.distance_mm > 0.0) {
            return Err(Error::InvalidInput(format!(
                "view distance must be positive, got {}",
                view.distance_mm
            )));
        }
        let inc = central_increments(view, window)?;
        rows.push(ScaleRow {
            distance_mm: view.distance_mm,
            alpha_px: inc.du * view.distance_mm / pitch,
            beta_px: inc.dv * view.distance_mm / pitch,
        });
    }
    ScaleTable::new(rows)
}

/// Noise band for one view: three standard errors of its mean horizontal
/// gap, expressed in scale-factor pixels.
pub fn view_noise_band(view: &ParallelView, window: CentralWindow) -> Result<f64> {
    let inc = central_increments(view, window)?;
    Ok(BAND_STANDARD_ERRORS * inc.du_se * view.distance_mm / view.pitch_mm)
}

pub const BAND_STANDARD_ERRORS: f64 = 3.0;

/// Per-view bands of a stack. The detector noise is shared by all views, so
/// the row-span variance is pooled (median over views) and each view's band
/// follows from its own row and gap counts and its `d / pitch` factor.
/// Floored like [`default_noise_band`].
pub fn noise_bands(views: &[ParallelView], window: CentralWindow) -> Result<Vec<f64>> {
    let incs = views
        .iter()
        .map(|v| central_increments(v, window))
        .collect::<Result<Vec<_>>>()?;
    let pooled = median(
        &incs
            .iter()
            .filter(|i| i.u_rows >= 2)
            .map(|i| i.span_var)
            .collect::<Vec<_>>(),
    );
    Ok(views
        .iter()
        .zip(&incs)
        .map(|(v, inc)| {
            let se = if inc.u_rows >= 2 {
                (inc.u_rows as f64 * pooled).sqrt() / inc.u_pairs as f64
            } else {
                inc.du_se
            };
            let k = v.distance_mm / v.pitch_mm;
            (BAND_STANDARD_ERRORS * se * k).max(1e-9 * k * inc.du)
        })
        .collect())
}

/// Scale table of a stack, sorted by distance, and its zones with each row
/// judged against its own view's band.
pub fn segment_stack(
    views: &[ParallelView],
    window: CentralWindow,
) -> Result<(ScaleTable, ZoneSegmentation)> {
    let table = scale_factors(views, window)?;
    let bands = noise_bands(views, window)?;
    let mut order: Vec<usize> = (0..table.rows.len()).collect();
    order.sort_by(|&a, &b| table.rows[a].distance_mm.total_cmp(&table.rows[b].distance_mm));
    let sorted = ScaleTable::new(order.iter().map(|&i| table.rows[i]).collect())?;
    let bands: Vec<f64> = order.iter().map(|&i| bands[i]).collect();
    let seg = segment_zones_banded(&sorted, &bands)?;
    Ok((sorted, seg))
}

/// Median of the per-view bands, floored at a tiny fraction of the scale
/// factors so that exact synthetic data still gets a usable band.
pub fn default_noise_band(views: &[ParallelView], window: CentralWindow) -> Result<f64> {
    let mut bands = views
        .iter()
        .map(|v| view_noise_band(v, window))
        .collect::<Result<Vec<f64>>>()?;
    if bands.is_empty() {
        return Err(Error::InsufficientData("no views".into()));
    }
    bands.sort_by(f64::total_cmp);
    let median = bands[bands.len() / 2];
    let table = scale_factors(views, window)?;
    let mean_alpha = mean(&table.rows.iter().map(|r| r.alpha_px).collect::<Vec<_>>());
    Ok(median.max(1e-9 * mean_alpha))
}

/// Distance zones of a scale table.
///
/// Zone 1 (`d < zone1_end_mm`) has a focus-dependent scale factor, zone 2
/// (`zone1_end_mm <= d <= zone2_end_mm`) is the plateau, and anything past
/// `zone2_end_mm` is zone 3. Both boundaries are sample distances of the
/// table: the first and the last plateau sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneSegmentation {
    pub zone1_end_mm: f64,
    pub zone2_end_mm: f64,
    pub plateau_alpha_px: f64,
    pub plateau_beta_px: f64,
}

impl ZoneSegmentation {
    pub fn in_zone2(&self, distance_mm: f64) -> bool {
        distance_mm >= self.zone1_end_mm && distance_mm <= self.zone2_end_mm
    }
}

const MIN_PLATEAU_SAMPLES: usize = 3;
/// Trailing windows scattering more than this many robust noise scales
/// mark zone 3.
const DISPERSION_FACTOR: f64 = 3.0;

/// Robust per-sample noise scale of a series, from the median absolute
/// deviation of its first differences. Floored at a tiny fraction of the
/// series level so that exact data keeps a nonzero scale.
fn robust_scale(values: &[f64]) -> f64 {
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let centre = median(&diffs);
    let mad = median(&diffs.iter().map(|d| (d - centre).abs()).collect::<Vec<_>>());
    // a difference of two samples carries sqrt(2) times the sample noise
    let sigma = 1.4826 * mad / std::f64::consts::SQRT_2;
    let level = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    sigma.max(1e-9 * level)
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

/// Index of the last zone-2 sample: trailing three-sample windows whose
/// spread exceeds the dispersion limit are peeled off as zone 3.
fn zone2_end_index(alpha: &[f64], beta: &[f64]) -> usize {
    let limit_a = DISPERSION_FACTOR * robust_scale(alpha);
    let limit_b = DISPERSION_FACTOR * robust_scale(beta);
    let w = MIN_PLATEAU_SAMPLES;
    let mut end = alpha.len() - 1;
    while end + 1 >= w {
        let a = &alpha[end + 1 - w..=end];
        let b = &beta[end + 1 - w..=end];
        if sample_std(a, mean(a)) <= limit_a && sample_std(b, mean(b)) <= limit_b {
            break;
        }
        if end == 0 {
            break;
        }
        end -= 1;
    }
    end
}

/// Locates the plateau of a distance-sorted scale table.
///
/// Zone 3 is first peeled off the far end: trailing samples are dropped
/// while the last three scatter more than three robust noise scales (the
/// scale comes from the first differences of the whole table, so it does not
/// depend on `noise_band`). Zone 1 then ends at the smallest distance from
/// which every window reaching the end of zone 2 stays within `±noise_band`
/// of its own mean. A wider band can therefore only move zone 1's end
/// earlier.
pub fn segment_zones(table: &ScaleTable, noise_band: f64) -> Result<ZoneSegmentation> {
    segment_zones_banded(table, &vec![noise_band; table.rows.len()])
}

/// [`segment_zones`] with a band per row, for tables whose rows carry
/// different noise levels.
pub fn segment_zones_banded(table: &ScaleTable, bands: &[f64]) -> Result<ZoneSegmentation> {
    let rows = &table.rows;
    if bands.len() != rows.len() {
        return Err(Error::InvalidInput(format!(
            "{} bands for {} rows",
            bands.len(),
            rows.len()
        )));
    }
    if rows.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "zone segmentation needs at least 5 rows, got {}",
            rows.len()
        )));
    }
    if rows.windows(2).any(|w| !(w[0].distance_mm < w[1].distance_mm)) {
        return Err(Error::InvalidInput(
            "scale table must be sorted by strictly increasing distance".into(),
        ));
    }
    if let Some(b) = bands.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "noise band must be non-negative, got {b}"
        )));
    }

    let alpha: Vec<f64> = rows.iter().map(|r| r.alpha_px).collect();
    let beta: Vec<f64> = rows.iter().map(|r| r.beta_px).collect();
    let end = zone2_end_index(&alpha, &beta);

    let flat = |lo: usize| {
        let ma = mean(&alpha[lo..=end]);
        let mb = mean(&beta[lo..=end]);
        (lo..=end).all(|i| (alpha[i] - ma).abs() <= bands[i] && (beta[i] - mb).abs() <= bands[i])
    };
    let mut start = end;
    while start > 0 && flat(start - 1) {
        start -= 1;
    }
    if end + 1 - start < MIN_PLATEAU_SAMPLES {
        return Err(Error::NoPlateauFound(format!(
            "fewer than {MIN_PLATEAU_SAMPLES} trailing samples are flat within their noise bands"
        )));
    }

    let mut out = ZoneSegmentation {
        zone1_end_mm: rows[start].distance_mm,
        zone2_end_mm: rows[end].distance_mm,
        plateau_alpha_px: 0.0,
        plateau_beta_px: 0.0,
    };
    (out.plateau_alpha_px, out.plateau_beta_px) = plateau_scale(table, &out)?;
    Ok(out)
}

/// Mean scale factors over the zone-2 rows.
pub fn plateau_scale(table: &ScaleTable, seg: &ZoneSegmentation) -> Result<(f64, f64)> {
    let zone2: Vec<&ScaleRow> = table
        .rows
        .iter()
        .filter(|r| seg.in_zone2(r.distance_mm))
        .collect();
    if zone2.is_empty() {
        return Err(Error::EmptyZone2);
    }
    let alpha: Vec<f64> = zone2.iter().map(|r| r.alpha_px).collect();
    let beta: Vec<f64> = zone2.iter().map(|r| r.beta_px).collect();
    Ok((mean(&alpha), mean(&beta)))
}

/// Mean accumulated as offsets from the first value, exact for constant
/// input.
fn mean(v: &[f64]) -> f64 {
    let Some(&first) = v.first() else {
        return f64::NAN;
    };
    first + v.iter().map(|x| x - first).sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64], m: f64) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
