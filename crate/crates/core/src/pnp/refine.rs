use nalgebra::{Matrix2x3, Matrix3, Matrix6, Point2, Point3, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};

pub const DEFAULT_REFINE_ITERATIONS: usize = 20;

/// Sum of squared pixel residuals, `None` if a point falls behind the camera.
pub(crate) fn reprojection_cost(
    pose: &Pose,
    object: &[Point3<f64>],
    image: &[Point2<f64>],
    k: &CameraIntrinsics,
) -> Option<f64> {
    let mut sum = 0.0;
    for (p, u) in object.iter().zip(image) {
        sum += (k.project_camera_point(&pose.transform_point(p)).ok()? - u).norm_squared();
    }
    Some(sum)
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Damped Gauss-Newton on pixel reprojection residuals. The rotation moves on
/// SO(3) by left-multiplied exponentials; a step is kept only if it lowers the cost.
pub fn refine_pose(
    pose: &Pose,
    object: &[Point3<f64>],
    image: &[Point2<f64>],
    k: &CameraIntrinsics,
    max_iters: usize,
) -> Result<Pose> {
    if object.len() != image.len() {
        return Err(Error::SpecMismatch);
    }
    if object.len() < 4 {
        return Err(Error::TooFew { needed: 4, got: object.len() });
    }
    let mut current = *pose;
    let mut cost = match reprojection_cost(&current, object, image, k) {
        Some(c) if c.is_finite() => c,
        Some(_) => return Err(Error::NonFinite { coordinate: None }),
        None => return Err(Error::CheiralityFailure),
    };
    let mut lambda = 1e-3;
    let mut iters = 0;
    while iters < max_iters && cost > 0.0 {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (p, u) in object.iter().zip(image) {
            let rp = current.rotation() * p.coords;
            let q = rp + current.translation();
            let (x, y, z) = (q.x, q.y, q.z);
            let r = k.project_camera_point(&Point3::from(q)).map_err(|_| Error::CheiralityFailure)? - u;
            let dproj = Matrix2x3::new(k.fx() / z, 0.0, -k.fx() * x / (z * z), 0.0, k.fy() / z, -k.fy() * y / (z * z));
            let mut j = nalgebra::Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dproj * -skew(&rp)));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        if !jtr.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { coordinate: None });
        }
        iters += 1;
        let mut improved = false;
        // Raise damping until a step lowers the cost or the step becomes negligible.
        while lambda < 1e12 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let omega = Vector3::new(step[0], step[1], step[2]);
            let dt = Vector3::new(step[3], step[4], step[5]);
            let candidate = current.perturbed(&omega, &dt);
            match reprojection_cost(&candidate, object, image, k) {
                Some(c) if c < cost => {
                    current = candidate;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !improved {
            break;
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, rotation_geodesic};
    use crate::pnp::tests::{cube_corners, random_pose, test_camera};
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn project_all(object: &[Point3<f64>], pose: &Pose, k: &CameraIntrinsics) -> Vec<Point2<f64>> {
        object.iter().map(|p| project(p, pose, k).unwrap()).collect()
    }

    #[test]
    fn optimal_pose_is_unchanged() {
        let k = test_camera();
        let object = cube_corners(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pose = random_pose(&mut rng);
        let out = refine_pose(&pose, &object, &project_all(&object, &pose, &k), &k, 10).unwrap();
        assert!((out.rotation() - pose.rotation()).norm() < 1e-10);
        assert!((out.translation() - pose.translation()).norm() < 1e-10);
    }

    #[test]
    fn converges_back_from_a_small_perturbation() {
        let k = test_camera();
        let object = cube_corners(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                .normalize();
            let start = pose.perturbed(&(axis * 1e-2), &Vector3::new(0.005, -0.003, 0.01));
            let out = refine_pose(&start, &object, &project_all(&object, &pose, &k), &k, 10).unwrap();
            assert!(rotation_geodesic(out.rotation(), pose.rotation()) < 1e-8);
            assert!((out.translation() - pose.translation()).norm() < 1e-8);
        }
    }

    #[test]
    fn noisy_data_never_gets_worse() {
        let k = test_camera();
        let object = cube_corners(0.1);
        let noise = Normal::new(0.0, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let image: Vec<Point2<f64>> = project_all(&object, &pose, &k)
                .iter()
                .map(|u| u + nalgebra::Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)))
                .collect();
            let start = pose.perturbed(&Vector3::new(0.02, -0.01, 0.03), &Vector3::new(0.0, 0.01, 0.02));
            let before = reprojection_cost(&start, &object, &image, &k).unwrap();
            for iters in [0, 1, 3, 20] {
                let out = refine_pose(&start, &object, &image, &k, iters).unwrap();
                assert!(reprojection_cost(&out, &object, &image, &k).unwrap() <= before);
            }
        }
    }

    #[test]
    fn behind_camera_start_is_rejected() {
        let k = test_camera();
        let object = cube_corners(0.1);
        let pose = Pose::from_rotation(nalgebra::Rotation3::identity(), Vector3::new(0.0, 0.0, -1.0));
        let image = [Point2::new(300.0, 300.0); 8];
        assert_eq!(refine_pose(&pose, &object, &image, &k, 5), Err(Error::CheiralityFailure));
    }
}
