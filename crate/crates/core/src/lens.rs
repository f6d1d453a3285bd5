//! Single-ray focus model and the empirical scale-factor curve.
//!
//! In the lens plane coordinate system (x along the optical axis, y across
//! it) an object point sits at `(d, a)`. The pin-hole ray through it is
//! `y = -(a/d) x`; the ray through the lens edge leaves the lens at angle
//! `omega = k * phi` with `phi = atan(d / (D - a))`, i.e. along
//! `y = -tan(pi/2 - omega) x + D`. The sensor is sharpest where the two rays
//! meet, at `x = f`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LensSpec {
    /// Radius of the lens that illuminates the sensor, mm.
    pub radius_mm: f64,
    /// Ratio of outgoing to incoming ray angle, in (0, 1).
    pub angle_ratio: f64,
    /// Off-axis distance of the probe point, mm.
    pub offset_mm: f64,
}

impl LensSpec {
    pub fn new(radius_mm: f64, angle_ratio: f64, offset_mm: f64) -> Result<Self> {
        let lens = Self {
            radius_mm,
            angle_ratio,
            offset_mm,
        };
        lens.validate()?;
        Ok(lens)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_mm > 0.0 && self.radius_mm.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lens radius must be positive, got {}",
                self.radius_mm
            )));
        }
        if !(self.angle_ratio > 0.0 && self.angle_ratio < 1.0) {
            return Err(Error::InvalidInput(format!(
                "angle ratio must lie in (0, 1), got {}",
                self.angle_ratio
            )));
        }
        if !(self.offset_mm >= 0.0 && self.offset_mm.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "probe offset must be non-negative, got {}",
                self.offset_mm
            )));
        }
        Ok(())
    }

    /// Angle of the ray entering the lens edge, `atan(d / (D - a))`.
    pub fn incoming_angle(&self, distance_mm: f64) -> Result<f64> {
        check_distance(distance_mm)?;
        let lever = self.radius_mm - self.offset_mm;
        if lever == 0.0 {
            return Err(Error::DegenerateGeometry(
                "probe offset equals the lens radius".into(),
            ));
        }
        Ok((distance_mm / lever).atan())
    }

    fn denominator(&self, distance_mm: f64) -> Result<f64> {
        let omega = self.angle_ratio * self.incoming_angle(distance_mm)?;
        Ok((FRAC_PI_2 - omega).tan() - self.offset_mm / distance_mm)
    }

    /// Lens-to-sensor distance giving the sharpest image of a point at `d`.
    pub fn sharp_focal_length(&self, distance_mm: f64) -> Result<f64> {
        let denom = self.denominator(distance_mm)?;
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(Error::DegenerateGeometry(format!(
                "sensor plane at infinity or behind the lens at d = {distance_mm} mm"
            )));
        }
        Ok(self.radius_mm / denom)
    }

    /// Limit of [`Self::sharp_focal_length`] as the object recedes to infinity.
    pub fn limit_focal_length(&self) -> Result<f64> {
        if self.radius_mm <= self.offset_mm {
            return Err(Error::DegenerateGeometry(
                "probe offset must be smaller than the lens radius".into(),
            ));
        }
        let denom = (FRAC_PI_2 * (1.0 - self.angle_ratio)).tan();
        Ok(self.radius_mm / denom)
    }

    /// `(d, f)` pairs over an inclusive distance range.
    pub fn sweep(&self, from_mm: f64, to_mm: f64, step_mm: f64) -> Result<Vec<(f64, f64)>> {
        distance_range(from_mm, to_mm, step_mm)?
            .into_iter()
            .map(|d| Ok((d, self.sharp_focal_length(d)?)))
            .collect()
    }
}

fn check_distance(distance_mm: f64) -> Result<()> {
    if distance_mm > 0.0 && distance_mm.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "distance must be positive, got {distance_mm}"
        )))
    }
}

/// Inclusive arithmetic range `from, from + step, ... <= to`.
pub fn distance_range(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(from > 0.0 && to >= from && step > 0.0) || !(from.is_finite() && to.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "bad distance range {from}:{to}:{step}"
        )));
    }
    // integer stepping keeps the endpoints exact
    let count = ((to - from) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| from + i as f64 * step).collect())
}

/// Coefficients of `value(d) = -k_f / d^2 + value0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveFit {
    pub k_f: f64,
    pub value0: f64,
}

impl CurveFit {
    pub fn eval(&self, distance_mm: f64) -> f64 {
        -self.k_f / (distance_mm * distance_mm) + self.value0
    }
}

/// Sampled scale-factor (or focal length) curve over distance.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalCurve {
    /// Sorted by distance.
    pub samples: Vec<(f64, f64)>,
    pub fit: Option<CurveFit>,
}

impl FocalCurve {
    pub fn eval(&self, distance_mm: f64) -> Option<f64> {
        self.fit.map(|f| f.eval(distance_mm))
    }
}

/// Least-squares fit of `value = -k_f/d^2 + value0`.
///
/// The model is linear in `(k_f, value0)`; the regressor columns are
/// `-1/d^2` and `1`, scaled to unit norm before forming the 2x2 normal
/// equations.
pub fn fit_focal_curve(samples: &[(f64, f64)]) -> Result<FocalCurve> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    for &(d, v) in samples {
        check_distance(d)?;
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite sample at d = {d}")));
        }
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if sorted.first().map(|s| s.0) == sorted.last().map(|s| s.0) {
        return Err(Error::SingularSystem(
            "all samples share the same distance".into(),
        ));
    }

    let x: Vec<f64> = sorted.iter().map(|&(d, _)| -1.0 / (d * d)).collect();
    let n = sorted.len() as f64;
    let sx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let s1 = n.sqrt();

    let mut normal = Matrix2::zeros();
    let mut rhs = Vector2::zeros();
    for (xi, &(_, yi)) in x.iter().zip(&sorted) {
        let row = Vector2::new(xi / sx, 1.0 / s1);
        normal += row * row.transpose();
        rhs += row * yi;
    }
    let solved = normal
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("normal equations are singular".into()))?;
    let fit = CurveFit {
        k_f: solved[0] / sx,
        value0: solved[1] / s1,
    };
    Ok(FocalCurve {
        samples: sorted,
        fit: Some(fit),
    })
}
