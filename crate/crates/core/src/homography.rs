//! Plane-to-image homographies by the normalized direct linear transform.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::types::{Point2, Point3};

/// A template point and where it was observed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub world: Point3,
    pub image: Point2,
}

impl Correspondence {
    pub fn new(world: Point3, image: Point2) -> Self {
        Self { world, image }
    }
}

/// A 3x3 homography in canonical scale, plus the conditioning of the
/// normalized linear system it was solved from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    pub matrix: Matrix3<f64>,
    /// Ratio of the largest to the second-smallest singular value of the
    /// normalized design matrix. Large values flag a poorly conditioned fit.
    pub condition: f64,
}

impl Homography {
    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        Self {
            matrix: canonicalize(&m),
            condition: f64::NAN,
        }
    }

    pub fn identity() -> Self {
        Self::from_matrix(Matrix3::identity())
    }

    /// Maps a template point (its `z` is ignored) to pixels.
    pub fn apply(&self, world: &Point3) -> Result<Point2> {
        let h = self.matrix * Vector3::new(world.x, world.y, 1.0);
        if h.z == 0.0 || !h.z.is_finite() {
            return Err(Error::PointAtInfinity);
        }
        Ok(Point2::new(h.x / h.z, h.y / h.z))
    }

    pub fn column(&self, i: usize) -> Vector3<f64> {
        self.matrix.column(i).into()
    }
}

/// Unit Frobenius norm with a positive bottom-right entry (or, when that
/// entry is zero, a positive first nonzero entry).
pub fn canonicalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let norm = m.norm();
    if norm == 0.0 {
        return *m;
    }
    let mut out = m / norm;
    let pivot = if out[(2, 2)] != 0.0 {
        out[(2, 2)]
    } else {
        // row-major scan for the first nonzero entry
        (0..9)
            .map(|i| out[(i / 3, i % 3)])
            .find(|v| *v != 0.0)
            .unwrap_or(1.0)
    };
    if pivot < 0.0 {
        out = -out;
    }
    out
}

/// Hartley normalization: translate to zero centroid and scale so the mean
/// distance from the origin is `sqrt(2)`. Returns the points and `T`.
pub fn normalize_points(points: &[Vector2<f64>]) -> Result<(Vec<Vector2<f64>>, Matrix3<f64>)> {
    if points.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(Error::DegenerateInput("all points coincide".into()));
    }
    let scale = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(
        scale, 0.0, -scale * centroid.x, //
        0.0, scale, -scale * centroid.y, //
        0.0, 0.0, 1.0,
    );
    let out = points.iter().map(|p| (p - centroid) * scale).collect();
    Ok((out, t))
}

const COLLINEAR_TOLERANCE: f64 = 1e-10;
const RANK_TOLERANCE: f64 = 1e-12;
const MAX_HOMOGRAPHY_CONDITION: f64 = 1e12;

/// Linear homography from at least four template/image correspondences.
///
/// Each correspondence contributes the two rows
/// `[w^T 0 -u w^T]` and `[0 w^T -v w^T]` with `w = (x, y, 1)` in normalized
/// coordinates; the stacked vector of `H` is the right singular vector of
/// the smallest singular value.
pub fn estimate_homography(corrs: &[Correspondence]) -> Result<Homography> {
    if corrs.len() < 4 {
        return Err(Error::InsufficientCorrespondences(corrs.len()));
    }
    let world: Vec<Vector2<f64>> = corrs
        .iter()
        .map(|c| Vector2::new(c.world.x, c.world.y))
        .collect();
    let image: Vec<Vector2<f64>> = corrs
        .iter()
        .map(|c| Vector2::new(c.image.u, c.image.v))
        .collect();
    if world
        .iter()
        .chain(&image)
        .any(|p| !(p.x.is_finite() && p.y.is_finite()))
    {
        return Err(Error::InvalidInput("non-finite correspondence".into()));
    }

    let (wn, tw) = normalize_points(&world)
        .map_err(|_| Error::DegenerateConfiguration("world points coincide".into()))?;
    let (inorm, ti) = normalize_points(&image)
        .map_err(|_| Error::DegenerateConfiguration("image points coincide".into()))?;

    // After normalization the spread is O(1); a vanishing second moment
    // means the template points are collinear.
    let mut cov = nalgebra::Matrix2::zeros();
    for p in &wn {
        cov += p * p.transpose();
    }
    cov /= wn.len() as f64;
    let eig = cov.symmetric_eigenvalues();
    if eig.min() < COLLINEAR_TOLERANCE * eig.max() {
        return Err(Error::DegenerateConfiguration(
            "template points are collinear".into(),
        ));
    }

    // Pad to at least 9 rows so the SVD exposes the full right basis.
    let rows = (2 * corrs.len()).max(9);
    let mut design = DMatrix::<f64>::zeros(rows, 9);
    for (k, (w, p)) in wn.iter().zip(&inorm).enumerate() {
        let wv = [w.x, w.y, 1.0];
        let (r0, r1) = (2 * k, 2 * k + 1);
        for j in 0..3 {
            design[(r0, j)] = wv[j];
            design[(r0, 6 + j)] = -p.x * wv[j];
            design[(r1, 3 + j)] = wv[j];
            design[(r1, 6 + j)] = -p.y * wv[j];
        }
    }

    let svd = design.svd(false, true);
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::LinearAlgebraFailure("SVD did not produce V".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let smallest = order[0];
    let second = svd.singular_values[order[1]];
    let largest = svd.singular_values[order[order.len() - 1]];
    if second <= RANK_TOLERANCE * largest {
        return Err(Error::DegenerateConfiguration(
            "design matrix has more than one null vector".into(),
        ));
    }
    let c = v_t.row(smallest);
    let hn = Matrix3::new(c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7], c[8]);

    let ti_inv = ti
        .try_inverse()
        .ok_or_else(|| Error::LinearAlgebraFailure("normalization not invertible".into()))?;
    let h = ti_inv * hn * tw;

    let sv = h.singular_values();
    let h_cond = sv.max() / sv.min();
    if !(h_cond < MAX_HOMOGRAPHY_CONDITION) {
        return Err(Error::DegenerateConfiguration(format!(
            "homography is close to singular (condition {h_cond:e})"
        )));
    }

    Ok(Homography {
        matrix: canonicalize(&h),
        condition: largest / second,
    })
}

/// Per-point transfer errors of a homography with their mean and standard
/// deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferErrors {
    pub per_point: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
}

pub fn homography_residuals(h: &Homography, corrs: &[Correspondence]) -> Result<TransferErrors> {
    let per_point = corrs
        .iter()
        .map(|c| Ok(h.apply(&c.world)?.distance(&c.image)))
        .collect::<Result<Vec<f64>>>()?;
    let n = per_point.len().max(1) as f64;
    let mean = per_point.iter().sum::<f64>() / n;
    let var = per_point.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    Ok(TransferErrors {
        per_point,
        mean,
        std_dev: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn grid(n: usize, pitch: f64) -> Vec<Point3> {
        (0..n)
            .flat_map(|j| (0..n).map(move |i| Point3::on_plane(i as f64 * pitch, j as f64 * pitch)))
            .collect()
    }

    fn forward(h: &Matrix3<f64>, pts: &[Point3]) -> Vec<Correspondence> {
        pts.iter()
            .map(|w| {
                let p = h * Vector3::new(w.x, w.y, 1.0);
                Correspondence::new(*w, Point2::new(p.x / p.z, p.y / p.z))
            })
            .collect()
    }

    fn aligned_error(estimated: &Matrix3<f64>, truth: &Matrix3<f64>) -> f64 {
        (canonicalize(estimated) - canonicalize(truth)).norm()
    }

    /// A homography of the form A [r1 r2 t] for a camera looking at the
    /// template from a random oblique pose.
    fn random_camera_homography(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let a = Matrix3::new(
            rng.random_range(500.0..3000.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(300.0..900.0),
            0.0,
            rng.random_range(500.0..3000.0),
            rng.random_range(200.0..700.0),
            0.0,
            0.0,
            1.0,
        );
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.2..0.2),
        );
        let r = crate::types::rodrigues_to_matrix(&(axis * 0.6));
        let t = Vector3::new(
            rng.random_range(-80.0..0.0),
            rng.random_range(-80.0..0.0),
            rng.random_range(300.0..2000.0),
        );
        a * Matrix3::from_columns(&[r.column(0).into(), r.column(1).into(), t])
    }

    #[test]
    fn normalization_of_two_points() {
        let pts = [Vector2::new(0.0, 0.0), Vector2::new(2.0, 0.0)];
        let (out, _) = normalize_points(&pts).unwrap();
        let c = (out[0] + out[1]) / 2.0;
        assert!(c.norm() < 1e-15);
        let mean_r = (out[0].norm() + out[1].norm()) / 2.0;
        assert!((mean_r - std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vector2<f64>> = (0..30)
            .map(|_| Vector2::new(rng.random_range(0.0..1279.0), rng.random_range(0.0..724.0)))
            .collect();
        let (once, _) = normalize_points(&pts).unwrap();
        let (_, t) = normalize_points(&once).unwrap();
        assert!((t - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn normalization_rejects_identical_points() {
        let pts = [Vector2::new(3.0, 4.0); 5];
        assert!(matches!(
            normalize_points(&pts),
            Err(Error::DegenerateInput(_))
        ));
    }

    proptest! {
        #[test]
        fn normalized_cloud_statistics(seed in any::<u64>(), n in 2usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vector2<f64>> = (0..n)
                .map(|_| Vector2::new(rng.random_range(-5e3..5e3), rng.random_range(-5e3..5e3)))
                .collect();
            let (out, t) = normalize_points(&pts).unwrap();
            let c = out.iter().fold(Vector2::zeros(), |a, p| a + p) / n as f64;
            let r = out.iter().map(|p| p.norm()).sum::<f64>() / n as f64;
            prop_assert!(c.norm() < 1e-12);
            prop_assert!((r - std::f64::consts::SQRT_2).abs() < 1e-12);
            let mapped = t * Vector3::new(pts[0].x, pts[0].y, 1.0);
            prop_assert!((mapped.xy() - out[0]).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_homography_is_recovered() {
        let corrs = forward(&Matrix3::identity(), &grid(5, 1.0));
        let h = estimate_homography(&corrs).unwrap();
        assert!(aligned_error(&h.matrix, &Matrix3::identity()) < 1e-10);
    }

    #[test]
    fn random_homographies_exact_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let template = grid(6, 25.0);
        for trial in 0..200 {
            let truth = random_camera_homography(&mut rng);
            let pts: Vec<Point3> = if trial % 4 == 0 {
                vec![template[0], template[5], template[30], template[35]]
            } else {
                template.clone()
            };
            let h = estimate_homography(&forward(&truth, &pts)).unwrap();
            let err = aligned_error(&h.matrix, &truth);
            assert!(err < 1e-9, "trial {trial}: {err:e}");
        }
    }

    #[test]
    fn too_few_correspondences() {
        let corrs = forward(&Matrix3::identity(), &grid(5, 1.0)[..3]);
        assert!(matches!(
            estimate_homography(&corrs),
            Err(Error::InsufficientCorrespondences(3))
        ));
    }

    #[test]
    fn collinear_template_is_degenerate() {
        let pts: Vec<Point3> = (0..4).map(|i| Point3::on_plane(i as f64 * 10.0, 5.0)).collect();
        let corrs = forward(&Matrix3::identity(), &pts);
        assert!(matches!(
            estimate_homography(&corrs),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn canonicalization_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let m = Matrix3::from_fn(|_, _| rng.random_range(-10.0..10.0));
            let once = canonicalize(&m);
            let twice = canonicalize(&once);
            for (a, b) in once.iter().zip(twice.iter()) {
                assert!((a - b).abs() <= f64::EPSILON * a.abs().max(1e-300) * 2.0);
            }
            assert!((once.norm() - 1.0).abs() < 1e-15);
            assert!(once[(2, 2)] >= 0.0);
        }
        let zero_corner = canonicalize(&Matrix3::new(0.0, -2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert!(zero_corner[(0, 1)] > 0.0);
    }

    #[test]
    fn shifted_image_coordinates_give_same_homography() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let truth = random_camera_homography(&mut rng);
        let corrs = forward(&truth, &grid(7, 20.0));
        let base = estimate_homography(&corrs).unwrap();
        let shift = Matrix3::new(1.0, 0.0, 350.0, 0.0, 1.0, -120.0, 0.0, 0.0, 1.0);
        let shifted: Vec<Correspondence> = corrs
            .iter()
            .map(|c| Correspondence::new(c.world, Point2::new(c.image.u + 350.0, c.image.v - 120.0)))
            .collect();
        let hs = estimate_homography(&shifted).unwrap();
        let back = shift.try_inverse().unwrap() * hs.matrix;
        assert!(aligned_error(&back, &base.matrix) < 1e-9);
    }

    #[test]
    fn residuals_of_exact_data_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = random_camera_homography(&mut rng);
        let corrs = forward(&truth, &grid(6, 25.0));
        let h = estimate_homography(&corrs).unwrap();
        let res = homography_residuals(&h, &corrs).unwrap();
        assert!(res.per_point.iter().all(|e| *e < 1e-9));
        let ident = Homography::identity();
        let c = [Correspondence::new(Point3::on_plane(3.0, 4.0), Point2::new(3.0, 4.0))];
        assert_eq!(homography_residuals(&ident, &c).unwrap().per_point, vec![0.0]);
    }

    #[test]
    fn residual_at_infinity() {
        let h = Homography::from_matrix(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0));
        let c = [Correspondence::new(Point3::on_plane(0.0, 1.0), Point2::new(0.0, 0.0))];
        assert!(matches!(
            homography_residuals(&h, &c),
            Err(Error::PointAtInfinity)
        ));
    }

    #[test]
    fn noisy_residual_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let template = grid(10, 15.0);
        let mut means = Vec::new();
        for _ in 0..30 {
            let truth = random_camera_homography(&mut rng);
            let corrs: Vec<Correspondence> = forward(&truth, &template)
                .into_iter()
                .map(|c| {
                    Correspondence::new(
                        c.world,
                        Point2::new(
                            c.image.u + noise.sample(&mut rng),
                            c.image.v + noise.sample(&mut rng),
                        ),
                    )
                })
                .collect();
            let h = estimate_homography(&corrs).unwrap();
            means.push(homography_residuals(&h, &corrs).unwrap().mean);
        }
        for m in means {
            assert!(m > 0.2 && m < 1.0, "mean residual {m}");
        }
    }
}
