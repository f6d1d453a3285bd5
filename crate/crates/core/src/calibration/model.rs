//! Reprojection residuals over a set of views and their analytic Jacobian.
//!
//! Parameter layout:
//!
//! ```text
//! shared scales:  [alpha, beta, gamma, u0, v0, (k1, k2), view_0 (r, t), view_1 (r, t), ...]
//! frozen scales:  [gamma, u0, v0, (k1, k2), view_0 (r, t), ...]
//! ```
//!
//! Residuals are `predicted - observed`, two per correspondence, views in
//! order.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::lm::LeastSquaresProblem;
use super::{CalibrationView, IntrinsicsModel};
use crate::error::{Error, Result};
use crate::types::{distort_offset, skew_matrix, Distortion, Intrinsics, Point3, Pose};

#[derive(Debug, Clone, PartialEq)]
pub enum ScaleModel {
    /// One `(alpha, beta)` pair shared by every view, refined.
    Shared,
    /// Per-view `(alpha, beta)`, held constant.
    Frozen(Vec<(f64, f64)>),
}

#[derive(Debug, Clone)]
pub struct ReprojectionProblem<'a> {
    views: &'a [CalibrationView],
    scales: ScaleModel,
    distortion: bool,
}

/// Derivatives of one predicted pixel.
struct PointJacobian {
    predicted: Vector2<f64>,
    /// Columns: alpha, beta, gamma, u0, v0, k1, k2.
    intrinsic: [Vector2<f64>; 7],
    /// Columns: r (3), t (3).
    pose: [Vector2<f64>; 6],
}

/// `d(R(r) w)/dr` for a Rodrigues vector `r`.
fn rotated_point_derivative(r: &Vector3<f64>, rot: &Matrix3<f64>, w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = r.norm_squared();
    if theta2 < 1e-14 {
        return -skew_matrix(w);
    }
    let m = (r * r.transpose() + (rot.transpose() - Matrix3::identity()) * skew_matrix(r)) / theta2;
    -rot * skew_matrix(w) * m
}

fn point_jacobian(
    w: &Point3,
    intr: &Intrinsics,
    dist: &Distortion,
    pose: &Pose,
    rot: &Matrix3<f64>,
    with_distortion: bool,
) -> Result<PointJacobian> {
    let wv = w.to_vector();
    let pc = rot * wv + pose.translation;
    if !(pc.z > 0.0) {
        return Err(Error::NonPositiveDepth { depth: pc.z });
    }
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let xn = x / z;
    let yn = y / z;
    let ideal = Vector2::new(intr.alpha * xn + intr.gamma * yn, intr.beta * yn);
    let d_ideal_dpc = Matrix2x3::new(
        intr.alpha / z,
        intr.gamma / z,
        -(intr.alpha * x + intr.gamma * y) / (z * z),
        0.0,
        intr.beta / z,
        -intr.beta * y / (z * z),
    );

    // Distorted offset solves G(d) = d (1 + f(rho^2(d))) - ideal = 0.
    let (offset, m_inv, d_alpha_g, d_beta_g, d_k) = if with_distortion {
        let (du, dv) = distort_offset(ideal.x, ideal.y, intr, dist)?;
        let d = Vector2::new(du, dv);
        let a2 = intr.alpha * intr.alpha;
        let b2 = intr.beta * intr.beta;
        let rho2 = du * du / a2 + dv * dv / b2;
        let f = dist.k1 * rho2 + dist.k2 * rho2 * rho2;
        let fp = dist.k1 + 2.0 * dist.k2 * rho2;
        let grad_rho2 = Vector2::new(2.0 * du / a2, 2.0 * dv / b2);
        let m = Matrix2::identity() * (1.0 + f) + d * grad_rho2.transpose() * fp;
        let m_inv = m.try_inverse().ok_or_else(|| {
            Error::LinearAlgebraFailure("distortion model is not locally invertible".into())
        })?;
        let d_alpha_g = d * (fp * -2.0 * du * du / (a2 * intr.alpha));
        let d_beta_g = d * (fp * -2.0 * dv * dv / (b2 * intr.beta));
        let d_k = [d * rho2, d * (rho2 * rho2)];
        (d, m_inv, d_alpha_g, d_beta_g, d_k)
    } else {
        let z2 = Vector2::zeros();
        (ideal, Matrix2::identity(), z2, z2, [z2, z2])
    };

    let predicted = Vector2::new(intr.u0 + offset.x, intr.v0 + offset.y);
    // dG/dp for each intrinsic p, then d offset/dp = -M^-1 dG/dp
    let alpha_col = -(m_inv * (d_alpha_g - Vector2::new(xn, 0.0)));
    let beta_col = -(m_inv * (d_beta_g - Vector2::new(0.0, yn)));
    let gamma_col = m_inv * Vector2::new(yn, 0.0);
    let k1_col = -(m_inv * d_k[0]);
    let k2_col = -(m_inv * d_k[1]);

    let d_offset_dpc = m_inv * d_ideal_dpc;
    let d_offset_dr = d_offset_dpc * rotated_point_derivative(&pose.rotation, rot, &wv);
    let pose_cols = [
        d_offset_dr.column(0).into(),
        d_offset_dr.column(1).into(),
        d_offset_dr.column(2).into(),
        d_offset_dpc.column(0).into(),
        d_offset_dpc.column(1).into(),
        d_offset_dpc.column(2).into(),
    ];
    Ok(PointJacobian {
        predicted,
        intrinsic: [
            alpha_col,
            beta_col,
            gamma_col,
            Vector2::new(1.0, 0.0),
            Vector2::new(0.0, 1.0),
            k1_col,
            k2_col,
        ],
        pose: pose_cols,
    })
}

impl<'a> ReprojectionProblem<'a> {
    pub fn new(views: &'a [CalibrationView], scales: ScaleModel, distortion: bool) -> Result<Self> {
        if let ScaleModel::Frozen(s) = &scales {
            if s.len() != views.len() {
                return Err(Error::InvalidInput(format!(
                    "{} scale pairs for {} views",
                    s.len(),
                    views.len()
                )));
            }
        }
        Ok(Self {
            views,
            scales,
            distortion,
        })
    }

    /// Number of leading parameters shared by all views.
    pub fn intrinsic_len(&self) -> usize {
        let base = match self.scales {
            ScaleModel::Shared => 5,
            ScaleModel::Frozen(_) => 3,
        };
        base + if self.distortion { 2 } else { 0 }
    }

    pub fn param_len(&self) -> usize {
        self.intrinsic_len() + 6 * self.views.len()
    }

    pub fn residual_len(&self) -> usize {
        2 * self
            .views
            .iter()
            .map(|v| v.correspondences.len())
            .sum::<usize>()
    }

    /// Indices into the 7 intrinsic derivative columns used by this layout.
    fn intrinsic_columns(&self) -> Vec<usize> {
        let mut cols = match self.scales {
            ScaleModel::Shared => vec![0, 1, 2, 3, 4],
            ScaleModel::Frozen(_) => vec![2, 3, 4],
        };
        if self.distortion {
            cols.extend([5, 6]);
        }
        cols
    }

    pub fn pack(
        &self,
        intrinsics: &IntrinsicsModel,
        distortion: &Distortion,
        poses: &[Pose],
    ) -> Result<DVector<f64>> {
        if poses.len() != self.views.len() {
            return Err(Error::InvalidInput("one pose per view required".into()));
        }
        let mut x = Vec::with_capacity(self.param_len());
        let first = intrinsics.for_view(0);
        if let ScaleModel::Shared = self.scales {
            x.extend([first.alpha, first.beta]);
        }
        x.extend([first.gamma, first.u0, first.v0]);
        if self.distortion {
            x.extend([distortion.k1, distortion.k2]);
        }
        for p in poses {
            x.extend(p.rotation.iter());
            x.extend(p.translation.iter());
        }
        Ok(DVector::from_vec(x))
    }

    pub fn unpack(&self, x: &DVector<f64>) -> (IntrinsicsModel, Distortion, Vec<Pose>) {
        let mut i = 0;
        let mut next = || {
            i += 1;
            x[i - 1]
        };
        let intrinsics = match &self.scales {
            ScaleModel::Shared => {
                let (alpha, beta, gamma, u0, v0) = (next(), next(), next(), next(), next());
                IntrinsicsModel::Shared(Intrinsics {
                    alpha,
                    beta,
                    gamma,
                    u0,
                    v0,
                })
            }
            ScaleModel::Frozen(scales) => {
                let (gamma, u0, v0) = (next(), next(), next());
                IntrinsicsModel::PerView {
                    gamma,
                    u0,
                    v0,
                    scales: scales.clone(),
                }
            }
        };
        let distortion = if self.distortion {
            Distortion::new(next(), next())
        } else {
            Distortion::default()
        };
        let poses = (0..self.views.len())
            .map(|_| {
                let r = Vector3::new(next(), next(), next());
                let t = Vector3::new(next(), next(), next());
                Pose::new(r, t)
            })
            .collect();
        (intrinsics, distortion, poses)
    }

    fn view_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.views.len());
        let mut row = 0;
        for v in self.views {
            offsets.push(row);
            row += 2 * v.correspondences.len();
        }
        offsets
    }

    /// Per-view residual block and, when requested, the dense derivative
    /// block over `[intrinsic columns, this view's 6 pose columns]`.
    fn view_block(
        &self,
        k: usize,
        intrinsics: &IntrinsicsModel,
        distortion: &Distortion,
        pose: &Pose,
        with_jacobian: bool,
    ) -> Result<(Vec<f64>, Option<DMatrix<f64>>)> {
        let view = &self.views[k];
        let intr = intrinsics.for_view(k);
        let rot = pose.rotation_matrix();
        let cols = self.intrinsic_columns();
        let n = view.correspondences.len();
        let mut res = Vec::with_capacity(2 * n);
        let mut jac = with_jacobian.then(|| DMatrix::zeros(2 * n, cols.len() + 6));
        for (j, c) in view.correspondences.iter().enumerate() {
            let pj = point_jacobian(&c.world, &intr, distortion, pose, &rot, self.distortion)?;
            res.push(pj.predicted.x - c.image.u);
            res.push(pj.predicted.y - c.image.v);
            if let Some(m) = jac.as_mut() {
                for (ci, &src) in cols.iter().enumerate() {
                    m[(2 * j, ci)] = pj.intrinsic[src].x;
                    m[(2 * j + 1, ci)] = pj.intrinsic[src].y;
                }
                for p in 0..6 {
                    m[(2 * j, cols.len() + p)] = pj.pose[p].x;
                    m[(2 * j + 1, cols.len() + p)] = pj.pose[p].y;
                }
            }
        }
        Ok((res, jac))
    }

    fn evaluate(
        &self,
        x: &DVector<f64>,
        with_jacobian: bool,
    ) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        if x.len() != self.param_len() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.param_len(),
                x.len()
            )));
        }
        let (intrinsics, distortion, poses) = self.unpack(x);
        let blocks = (0..self.views.len())
            .into_par_iter()
            .map(|k| self.view_block(k, &intrinsics, &distortion, &poses[k], with_jacobian))
            .collect::<Result<Vec<_>>>()?;

        let m = self.residual_len();
        let ni = self.intrinsic_len();
        let mut r = DVector::zeros(m);
        let mut jac = with_jacobian.then(|| DMatrix::zeros(m, self.param_len()));
        for ((k, (res, block)), &row0) in blocks.into_iter().enumerate().zip(&self.view_offsets()) {
            for (i, v) in res.into_iter().enumerate() {
                r[row0 + i] = v;
            }
            if let (Some(j), Some(b)) = (jac.as_mut(), block) {
                let rows = b.nrows();
                j.view_mut((row0, 0), (rows, ni)).copy_from(&b.columns(0, ni));
                j.view_mut((row0, ni + 6 * k), (rows, 6))
                    .copy_from(&b.columns(ni, 6));
            }
        }
        Ok((r, jac))
    }
}

impl LeastSquaresProblem for ReprojectionProblem<'_> {
    fn residuals(&self, params: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.evaluate(params, false)?.0)
    }

    fn jacobian(&self, params: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self
            .evaluate(params, true)?
            .1
            .expect("jacobian requested"))
    }
}
