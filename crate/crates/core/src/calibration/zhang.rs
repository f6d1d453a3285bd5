//! Closed-form intrinsics from three or more plane homographies.
//!
//! Each homography gives two linear constraints on the image of the
//! absolute conic `B = A^-T A^-1`: `h1^T B h2 = 0` and
//! `h1^T B h1 = h2^T B h2`. The homographies are first pre-multiplied by a
//! pixel conditioning transform `N`, so the system is solved for
//! `A' = N A` and mapped back.

use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};
use crate::homography::Homography;
use crate::types::{Intrinsics, Point2};

const RANK_TOLERANCE: f64 = 1e-9;

/// Isotropic conditioning for pixel coordinates: centroid to the origin,
/// mean distance `sqrt(2)`.
pub fn pixel_conditioning<'a>(points: impl IntoIterator<Item = &'a Point2>) -> Matrix3<f64> {
    let pts: Vec<&Point2> = points.into_iter().collect();
    if pts.is_empty() {
        return Matrix3::identity();
    }
    let n = pts.len() as f64;
    let cu = pts.iter().map(|p| p.u).sum::<f64>() / n;
    let cv = pts.iter().map(|p| p.v).sum::<f64>() / n;
    let spread = pts.iter().map(|p| (p.u - cu).hypot(p.v - cv)).sum::<f64>() / n;
    if !(spread > 0.0) {
        return Matrix3::identity();
    }
    let s = std::f64::consts::SQRT_2 / spread;
    Matrix3::new(s, 0.0, -s * cu, 0.0, s, -s * cv, 0.0, 0.0, 1.0)
}

fn constraint(h: &Matrix3<f64>, i: usize, j: usize) -> [f64; 6] {
    let a = h.column(i);
    let b = h.column(j);
    [
        a[0] * b[0],
        a[0] * b[1] + a[1] * b[0],
        a[1] * b[1],
        a[2] * b[0] + a[0] * b[2],
        a[2] * b[1] + a[1] * b[2],
        a[2] * b[2],
    ]
}

/// Intrinsics shared by all views, from their homographies.
///
/// `conditioning` is the pixel transform applied before solving (see
/// [`pixel_conditioning`]); pass the identity to solve in raw pixels.
pub fn closed_form_intrinsics(
    homographies: &[Homography],
    conditioning: &Matrix3<f64>,
) -> Result<Intrinsics> {
    if homographies.len() < 3 {
        return Err(Error::DegenerateViewSet(format!(
            "need at least 3 views, got {}",
            homographies.len()
        )));
    }
    let mut v = DMatrix::<f64>::zeros(2 * homographies.len(), 6);
    for (k, h) in homographies.iter().enumerate() {
        let hn = conditioning * h.matrix;
        let hn = hn / hn.norm();
        let v12 = constraint(&hn, 0, 1);
        let v11 = constraint(&hn, 0, 0);
        let v22 = constraint(&hn, 1, 1);
        for c in 0..6 {
            v[(2 * k, c)] = v12[c];
            v[(2 * k + 1, c)] = v11[c] - v22[c];
        }
    }
    let svd = v.svd(false, true);
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::LinearAlgebraFailure("SVD did not produce V".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]));
    if !(sv[order[1]] > RANK_TOLERANCE * sv[order[5]]) {
        return Err(Error::DegenerateViewSet(
            "view orientations do not constrain the intrinsics".into(),
        ));
    }
    let row = v_t.row(order[0]);
    let sign = if row[0] < 0.0 { -1.0 } else { 1.0 };
    let b: Vec<f64> = row.iter().map(|x| x * sign).collect();
    let (b11, b12, b22, b13, b23, b33) = (b[0], b[1], b[2], b[3], b[4], b[5]);

    let invalid = || Error::DegenerateViewSet("conic does not yield valid intrinsics".into());
    let den = b11 * b22 - b12 * b12;
    if !(b11 > 0.0 && den > 0.0) {
        return Err(invalid());
    }
    let v0 = (b12 * b13 - b11 * b23) / den;
    let lambda = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11;
    if !(lambda / b11 > 0.0) {
        return Err(invalid());
    }
    let alpha = (lambda / b11).sqrt();
    let beta = (lambda * b11 / den).sqrt();
    let gamma = -b12 * alpha * alpha * beta / lambda;
    let u0 = gamma * v0 / beta - b13 * alpha * alpha / lambda;

    let conditioned = Matrix3::new(alpha, gamma, u0, 0.0, beta, v0, 0.0, 0.0, 1.0);
    let n_inv = conditioning
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("conditioning transform is singular".into()))?;
    let a = n_inv * conditioned;
    let a = a / a[(2, 2)];
    let out = Intrinsics {
        alpha: a[(0, 0)],
        beta: a[(1, 1)],
        gamma: a[(0, 1)],
        u0: a[(0, 2)],
        v0: a[(1, 2)],
    };
    out.validate().map_err(|_| invalid())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::rodrigues_to_matrix;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn homography(a: &Matrix3<f64>, r: Vector3<f64>, t: Vector3<f64>) -> Homography {
        let rot = rodrigues_to_matrix(&r);
        Homography::from_matrix(
            a * Matrix3::from_columns(&[rot.column(0).into(), rot.column(1).into(), t]),
        )
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn recovers_intrinsics_from_exact_homographies() {
        let truth = Intrinsics::new(1370.8, 1373.8, 0.5, 645.8, 359.3).unwrap();
        let a = truth.matrix();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hs: Vec<Homography> = (0..6)
            .map(|_| {
                homography(
                    &a,
                    Vector3::new(
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-1.0..1.0),
                    ),
                    Vector3::new(
                        rng.random_range(-100.0..0.0),
                        rng.random_range(-100.0..0.0),
                        rng.random_range(500.0..900.0),
                    ),
                )
            })
            .collect();
        let corners: Vec<Point2> = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1279.0, 0.0),
            Point2::new(0.0, 724.0),
            Point2::new(1279.0, 724.0),
        ];
        for n in [Matrix3::identity(), pixel_conditioning(&corners)] {
            let est = closed_form_intrinsics(&hs, &n).unwrap();
            assert!(rel(est.alpha, truth.alpha) < 1e-8, "{est:?}");
            assert!(rel(est.beta, truth.beta) < 1e-8);
            assert!((est.gamma - truth.gamma).abs() < 1e-5);
            assert!(rel(est.u0, truth.u0) < 1e-8);
            assert!(rel(est.v0, truth.v0) < 1e-8);
        }
    }

    #[test]
    fn two_views_are_degenerate() {
        let a = Intrinsics::new(1000.0, 1000.0, 0.0, 500.0, 400.0).unwrap().matrix();
        let hs = vec![
            homography(&a, Vector3::new(0.3, 0.0, 0.0), Vector3::new(0.0, 0.0, 800.0)),
            homography(&a, Vector3::new(0.0, 0.3, 0.0), Vector3::new(0.0, 0.0, 800.0)),
        ];
        assert!(matches!(
            closed_form_intrinsics(&hs, &Matrix3::identity()),
            Err(Error::DegenerateViewSet(_))
        ));
    }

    #[test]
    fn translated_views_are_degenerate() {
        let a = Intrinsics::new(1000.0, 1000.0, 0.0, 500.0, 400.0).unwrap().matrix();
        let hs: Vec<Homography> = [100.0, 200.0, 300.0, 400.0]
            .iter()
            .map(|&x| homography(&a, Vector3::zeros(), Vector3::new(x, -x, 500.0 + x)))
            .collect();
        assert!(matches!(
            closed_form_intrinsics(&hs, &Matrix3::identity()),
            Err(Error::DegenerateViewSet(_))
        ));
    }

    #[test]
    fn conditioning_centres_points() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(2.0, 0.0)];
        let n = pixel_conditioning(&pts);
        let c = n * Vector3::new(1.0, 0.0, 1.0);
        assert!(c.x.abs() < 1e-15 && c.y.abs() < 1e-15);
        let e = n * Vector3::new(2.0, 0.0, 1.0);
        assert!((e.x - std::f64::consts::SQRT_2).abs() < 1e-15);
    }
}
