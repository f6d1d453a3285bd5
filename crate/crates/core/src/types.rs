//! Domain types and the forward pin-hole model.
//!
//! A world point `X` maps to pixels through `s·p = A·[R t]·X` with
//!
//! ```text
//!     | alpha  gamma  u0 |
//! A = |   0    beta   v0 |
//!     |   0     0      1 |
//! ```
//!
//! Radial distortion is the second-order model `p = p* + delta(p*)` where
//! `p*` is the observed (distorted) pixel and `p` the ideal one. The radius
//! entering the polynomial is measured in normalized image units
//! (`(u - u0)/alpha`, `(v - v0)/beta`), which keeps `k1`, `k2` dimensionless.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub u: f64,
    pub v: f64,
}

impl Point2 {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// World coordinates in millimetres. Template points live on `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn on_plane(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// Intrinsic parameters: scale factors, skew and principal point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub u0: f64,
    pub v0: f64,
}

impl Intrinsics {
    pub fn new(alpha: f64, beta: f64, gamma: f64, u0: f64, v0: f64) -> Result<Self> {
        let intr = Self {
            alpha,
            beta,
            gamma,
            u0,
            v0,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite() && self.beta > 0.0 && self.beta.is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "scale factors must be positive and finite (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        if !(self.gamma.is_finite() && self.u0.is_finite() && self.v0.is_finite()) {
            return Err(Error::InvalidInput(
                "skew and principal point must be finite".into(),
            ));
        }
        Ok(())
    }

    /// The 3x3 upper-triangular matrix `A`.
    pub fn matrix(&self) -> Matrix3<f64> {
        intrinsic_matrix(self)
    }

    /// Same skew and principal point, different scale factors.
    pub fn with_scales(&self, alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            ..*self
        }
    }

    pub fn principal_point(&self) -> Point2 {
        Point2::new(self.u0, self.v0)
    }
}

pub fn intrinsic_matrix(intr: &Intrinsics) -> Matrix3<f64> {
    Matrix3::new(
        intr.alpha, intr.gamma, intr.u0, //
        0.0, intr.beta, intr.v0, //
        0.0, 0.0, 1.0,
    )
}

/// Rigid transform from the world (template) frame into the camera frame.
///
/// The rotation is stored as a Rodrigues vector (axis times angle, radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(matrix_to_rodrigues(rotation), translation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rodrigues_to_matrix(&self.rotation)
    }

    /// Camera-frame coordinates of a world point.
    pub fn transform(&self, wp: &Point3) -> Vector3<f64> {
        self.rotation_matrix() * wp.to_vector() + self.translation
    }

    /// Camera centre in world coordinates, `-R^T t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let r = self.rotation_matrix() * other.rotation_matrix();
        let t = self.rotation_matrix() * other.translation + self.translation;
        Pose::from_matrix(&r, t)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation_matrix().transpose();
        Pose::from_matrix(&rt, -(rt * self.translation))
    }
}

/// Second-order radial distortion coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
}

impl Distortion {
    pub const fn new(k1: f64, k2: f64) -> Self {
        Self { k1, k2 }
    }

    pub fn is_zero(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0
    }
}

const RODRIGUES_SMALL_ANGLE: f64 = 1e-7;

pub fn skew_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// Rotation matrix of a Rodrigues vector.
pub fn rodrigues_to_matrix(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = r.norm_squared();
    let theta = theta2.sqrt();
    // R = I + a[r]x + b[r]x^2, a = sin(t)/t, b = (1 - cos(t))/t^2
    let (a, b) = if theta < RODRIGUES_SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew_matrix(r);
    Matrix3::identity() + k * a + k * k * b
}

/// Rodrigues vector of a rotation matrix, angle in `[0, pi]`.
pub fn matrix_to_rodrigues(rot: &Matrix3<f64>) -> Vector3<f64> {
    let w = Vector3::new(
        rot[(2, 1)] - rot[(1, 2)],
        rot[(0, 2)] - rot[(2, 0)],
        rot[(1, 0)] - rot[(0, 1)],
    );
    let sin_theta = 0.5 * w.norm();
    let cos_theta = ((rot.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < RODRIGUES_SMALL_ANGLE {
        // theta / (2 sin theta) ~ (1 + theta^2/6) / 2
        return w * (0.5 * (1.0 + theta * theta / 6.0));
    }
    if cos_theta < 0.0 && sin_theta < 1e-4 {
        // Near pi the antisymmetric part vanishes; recover the axis from
        // the symmetric part (R + R^T)/2 - cos(t) I = (1 - cos(t)) n n^T.
        let sym = (rot + rot.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
        let mut best = 0;
        for i in 1..3 {
            if sym[(i, i)] > sym[(best, best)] {
                best = i;
            }
        }
        let mut axis: Vector3<f64> = sym.column(best).into();
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    w * (theta / (2.0 * sin_theta))
}

/// Geodesic angle between two rotations, radians.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    matrix_to_rodrigues(&(a * b.transpose())).norm()
}

/// Pin-hole projection without distortion.
pub fn project(wp: &Point3, intr: &Intrinsics, pose: &Pose) -> Result<Point2> {
    project_camera(&pose.transform(wp), intr)
}

/// Projection of a point already expressed in the camera frame.
pub fn project_camera(pc: &Vector3<f64>, intr: &Intrinsics) -> Result<Point2> {
    if !(pc.z > 0.0) {
        return Err(Error::NonPositiveDepth { depth: pc.z });
    }
    let x = pc.x / pc.z;
    let y = pc.y / pc.z;
    Ok(Point2::new(
        intr.alpha * x + intr.gamma * y + intr.u0,
        intr.beta * y + intr.v0,
    ))
}

/// `k1 r^2 + k2 r^4` at a pixel offset from the principal point.
pub(crate) fn radial_factor(du: f64, dv: f64, intr: &Intrinsics, dist: &Distortion) -> f64 {
    let x = du / intr.alpha;
    let y = dv / intr.beta;
    let r2 = x * x + y * y;
    dist.k1 * r2 + dist.k2 * r2 * r2
}

/// Maps an observed (distorted) pixel to its ideal position: `p = p* + delta`.
pub fn undistort(observed: &Point2, intr: &Intrinsics, dist: &Distortion) -> Point2 {
    let du = observed.u - intr.u0;
    let dv = observed.v - intr.v0;
    let f = radial_factor(du, dv, intr, dist);
    Point2::new(observed.u + du * f, observed.v + dv * f)
}

pub const DISTORT_MAX_ITERATIONS: usize = 50;
const DISTORT_TOLERANCE_PX: f64 = 1e-12;

/// Inverse of [`undistort`] by fixed-point iteration `p* <- p - delta(p*)`.
pub fn distort(ideal: &Point2, intr: &Intrinsics, dist: &Distortion) -> Result<Point2> {
    if dist.is_zero() {
        return Ok(*ideal);
    }
    let (du, dv) = distort_offset(ideal.u - intr.u0, ideal.v - intr.v0, intr, dist)?;
    Ok(Point2::new(intr.u0 + du, intr.v0 + dv))
}

/// Fixed-point inversion in principal-point-relative coordinates.
pub(crate) fn distort_offset(
    ideal_du: f64,
    ideal_dv: f64,
    intr: &Intrinsics,
    dist: &Distortion,
) -> Result<(f64, f64)> {
    let (mut du, mut dv) = (ideal_du, ideal_dv);
    // absolute tolerance, widened to a few ulps for far-off-centre points
    let tol = DISTORT_TOLERANCE_PX.max(4.0 * f64::EPSILON * ideal_du.hypot(ideal_dv));
    for _ in 0..DISTORT_MAX_ITERATIONS {
        let f = radial_factor(du, dv, intr, dist);
        let next_du = ideal_du - du * f;
        let next_dv = ideal_dv - dv * f;
        if !(next_du.is_finite() && next_dv.is_finite()) {
            break;
        }
        let step = (next_du - du).hypot(next_dv - dv);
        du = next_du;
        dv = next_dv;
        if step <= tol {
            return Ok((du, dv));
        }
    }
    Err(Error::NoConvergence {
        iterations: DISTORT_MAX_ITERATIONS,
    })
}

/// Full forward model: pin-hole projection followed by distortion.
pub fn project_distorted(
    wp: &Point3,
    intr: &Intrinsics,
    dist: &Distortion,
    pose: &Pose,
) -> Result<Point2> {
    let ideal = project(wp, intr, pose)?;
    distort(&ideal, intr, dist)
}
