//! Camera pose from a plane homography and known intrinsics.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::homography::Homography;
use crate::types::Pose;

const SINGULAR_RATIO: f64 = 1e-12;

/// Nearest rotation in Frobenius norm, `U V^T` from the SVD of `q`.
///
/// When `det(U V^T) = -1` the column of `U` paired with the smallest
/// singular value is negated.
pub fn orthogonalize_rotation(q: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularInput);
    }
    let svd = q.svd(true, true);
    let (Some(mut u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::SingularInput);
    };
    let s = svd.singular_values;
    if !(s.min() > SINGULAR_RATIO * s.max()) {
        return Err(Error::SingularInput);
    }
    if (u * v_t).determinant() < 0.0 {
        let smallest = s.imin();
        let col = -u.column(smallest);
        u.set_column(smallest, &col);
    }
    Ok(u * v_t)
}

/// Pose of the template plane given its homography and the intrinsic
/// matrix `a`.
///
/// `r1 = rho A^-1 h1`, `r2 = rho A^-1 h2`, `r3 = r1 x r2`,
/// `t = rho A^-1 h3` with `rho = 1/|A^-1 h1|`, signed so the template lies
/// in front of the camera.
pub fn extrinsics_from_homography(h: &Homography, a: &Matrix3<f64>) -> Result<Pose> {
    let a_inv = a.try_inverse().ok_or(Error::SingularIntrinsics)?;
    if a_inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularIntrinsics);
    }
    let b1 = a_inv * h.column(0);
    let b2 = a_inv * h.column(1);
    let b3 = a_inv * h.column(2);
    let n1 = b1.norm();
    if !(n1 > 0.0) {
        return Err(Error::DegenerateConfiguration(
            "homography first column maps to zero".into(),
        ));
    }
    let mut rho = 1.0 / n1;
    if b3.z * rho <= 0.0 {
        rho = -rho;
        if b3.z * rho <= 0.0 {
            return Err(Error::BehindCamera);
        }
    }
    let r1 = b1 * rho;
    let r2 = b2 * rho;
    let r3 = r1.cross(&r2);
    let t = b3 * rho;
    let q = Matrix3::from_columns(&[r1, r2, r3]);
    let rot = orthogonalize_rotation(&q)?;
    Ok(Pose::from_matrix(&rot, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{rodrigues_to_matrix, rotation_angle_between, Intrinsics};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> Intrinsics {
        Intrinsics::new(1370.8, 1373.8, 0.0001, 645.8, 359.3).unwrap()
    }

    fn homography_of(a: &Matrix3<f64>, rot: &Matrix3<f64>, t: &Vector3<f64>) -> Homography {
        let m = a * Matrix3::from_columns(&[rot.column(0).into(), rot.column(1).into(), *t]);
        Homography::from_matrix(m)
    }

    #[test]
    fn fronto_parallel_pose() {
        let a = intr().matrix();
        let t = Vector3::new(0.0, 0.0, 1000.0);
        let pose = extrinsics_from_homography(&homography_of(&a, &Matrix3::identity(), &t), &a)
            .unwrap();
        assert!(pose.rotation.norm() < 1e-9);
        assert!((pose.translation - t).norm() < 1e-9);
    }

    #[test]
    fn sign_follows_template_depth() {
        let a = intr().matrix();
        let t = Vector3::new(-40.0, 25.0, 600.0);
        let h = homography_of(&a, &Matrix3::identity(), &t);
        let flipped = Homography {
            matrix: -h.matrix,
            condition: h.condition,
        };
        let pose = extrinsics_from_homography(&flipped, &a).unwrap();
        assert!((pose.translation - t).norm() < 1e-9);
    }

    #[test]
    fn random_poses_recovered() {
        let a = intr().matrix();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let r = Vector3::new(
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
                rng.random_range(-3.0..3.0),
            );
            let rot = rodrigues_to_matrix(&r);
            let t = Vector3::new(
                rng.random_range(-200.0..200.0),
                rng.random_range(-200.0..200.0),
                rng.random_range(300.0..3000.0),
            );
            let pose = extrinsics_from_homography(&homography_of(&a, &rot, &t), &a).unwrap();
            assert!(rotation_angle_between(&pose.rotation_matrix(), &rot) < 1e-8);
            assert!((pose.translation - t).norm() < 1e-8 * t.norm().max(1.0));
        }
    }

    #[test]
    fn scaled_columns_are_unit() {
        let a = intr().matrix();
        let rot = rodrigues_to_matrix(&Vector3::new(0.2, -0.3, 0.1));
        let h = homography_of(&a, &rot, &Vector3::new(10.0, 5.0, 800.0));
        let a_inv = a.try_inverse().unwrap();
        let b1 = a_inv * h.column(0);
        let b2 = a_inv * h.column(1);
        let rho = 1.0 / b1.norm();
        assert!(((b1 * rho).norm() - 1.0).abs() < 1e-12);
        assert!(((b2 * rho).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_intrinsics_rejected() {
        let h = Homography::identity();
        assert!(matches!(
            extrinsics_from_homography(&h, &Matrix3::zeros()),
            Err(Error::SingularIntrinsics)
        ));
    }

    #[test]
    fn template_in_camera_plane_is_behind() {
        let a = Matrix3::identity();
        let h = Homography::from_matrix(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0));
        assert!(matches!(
            extrinsics_from_homography(&h, &a),
            Err(Error::BehindCamera)
        ));
    }

    #[test]
    fn rotation_is_fixed_point() {
        let rot = rodrigues_to_matrix(&Vector3::new(0.4, 1.1, -0.7));
        let out = orthogonalize_rotation(&rot).unwrap();
        assert!((out - rot).norm() < 1e-12);
    }

    #[test]
    fn scaling_is_removed() {
        let out = orthogonalize_rotation(&(Matrix3::identity() * 2.0)).unwrap();
        assert!((out - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn reflection_is_turned_into_rotation() {
        let q = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -0.5));
        let out = orthogonalize_rotation(&q).unwrap();
        assert!((out.determinant() - 1.0).abs() < 1e-12);
        assert!((out.transpose() * out - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn singular_matrix_rejected() {
        let q = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            orthogonalize_rotation(&q),
            Err(Error::SingularInput)
        ));
    }

    #[test]
    fn nearest_rotation_beats_local_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let base = rodrigues_to_matrix(&Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
            let noise = Matrix3::from_fn(|_, _| rng.random_range(-1e-3..1e-3));
            let q = base + noise;
            let best = orthogonalize_rotation(&q).unwrap();
            let dist = (q - best).norm();
            let steps = [-2e-3, -1e-3, -2e-4, 0.0, 2e-4, 1e-3, 2e-3];
            for &x in &steps {
                for &y in &steps {
                    for &z in &steps {
                        let cand = best * rodrigues_to_matrix(&Vector3::new(x, y, z));
                        assert!((q - cand).norm() >= dist - 1e-14);
                    }
                }
            }
        }
    }
}
