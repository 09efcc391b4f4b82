//! Pinhole camera, rigid poses and the pose-accuracy metrics.

mod metrics;
mod model;

pub use metrics::{add_metric, adds_metric, rep_metric};
pub use model::{Mesh, ObjectModel, DEFAULT_SURFACE_SAMPLES};

use nalgebra::{Matrix3, Point2, Point3, Rotation3, Vector3};
#[allow(unused_imports)] // resolves inherently whenever std is linked
use num_traits::Float;

use crate::error::{Error, Result};

/// Minimum camera-frame depth accepted by [`project`].
pub const MIN_DEPTH: f64 = 1e-9;

/// Tolerance on `‖RᵀR − I‖` and `|det R − 1|` accepted by [`Pose::new`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidIntrinsics("focal lengths must be positive and finite"));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidIntrinsics("principal point must be finite"));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidIntrinsics("image size must be positive"));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }

    /// Pixel coordinates of a camera-frame point. Fails when the point is not in front of the camera.
    pub fn project_camera_point(&self, p: &Point3<f64>) -> Result<Point2<f64>> {
        if p.z <= MIN_DEPTH {
            return Err(Error::BehindCamera { depth: p.z });
        }
        Ok(Point2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Normalized image coordinates `((u − cx)/fx, (v − cy)/fy)`.
    pub fn normalize(&self, px: &Point2<f64>) -> Point2<f64> {
        Point2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    /// Camera-frame point at `depth` along the ray through pixel `px`.
    pub fn back_project(&self, px: &Point2<f64>, depth: f64) -> Point3<f64> {
        let n = self.normalize(px);
        Point3::new(n.x * depth, n.y * depth, depth)
    }

    pub fn contains(&self, px: &Point2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < f64::from(self.width) && px.y < f64::from(self.height)
    }
}

/// Rigid transform from the model frame to the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    /// Builds a pose, rejecting rotations that are not proper orthonormal matrices.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let orthogonality = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        let det = rotation.determinant();
        if !(orthogonality < ROTATION_TOLERANCE && (det - 1.0).abs() <= ROTATION_TOLERANCE)
            || !translation.iter().all(|v| v.is_finite())
        {
            return Err(Error::InvalidRotation { orthogonality, det });
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: rotation.into_inner(), translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Left-multiplies the rotation by `exp(omega)` and adds `delta_t` to the translation.
    pub fn perturbed(&self, omega: &Vector3<f64>, delta_t: &Vector3<f64>) -> Pose {
        let dr = Rotation3::new(*omega).into_inner();
        Pose { rotation: dr * self.rotation, translation: self.translation + delta_t }
    }
}

/// Projects a model-frame point through `pose` and the pinhole `k`.
pub fn project(p: &Point3<f64>, pose: &Pose, k: &CameraIntrinsics) -> Result<Point2<f64>> {
    k.project_camera_point(&pose.transform_point(p))
}

/// Geodesic distance on SO(3) in radians, in `[0, π]`.
pub fn rotation_geodesic(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let r = a.transpose() * b;
    let cos = (r.trace() - 1.0) / 2.0;
    // sin from the skew part keeps small angles accurate where acos would not.
    let sin = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    sin.atan2(cos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use core::f64::consts::{FRAC_PI_2, PI};
    use nalgebra::{Quaternion, UnitQuaternion};
    use proptest::prelude::*;

    fn unit_camera() -> CameraIntrinsics {
        CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 10, 10).unwrap()
    }

    fn arb_rotation() -> impl Strategy<Value = Rotation3<f64>> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-zero quaternion", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)).to_rotation_matrix())
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (arb_rotation(), -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0)
            .prop_map(|(r, x, y, z)| Pose::from_rotation(r, Vector3::new(x, y, z)))
    }

    #[test]
    fn optical_axis_point_projects_to_principal_point() {
        let px = project(&Point3::new(0.0, 0.0, 1.0), &Pose::identity(), &unit_camera()).unwrap();
        assert_eq!(px, Point2::new(0.0, 0.0));
    }

    #[test]
    fn projection_scales_by_focal_length() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 200, 200).unwrap();
        let px = project(&Point3::new(1.0, 2.0, 2.0), &Pose::identity(), &k).unwrap();
        assert_eq!(px, Point2::new(100.0, 150.0));
    }

    #[test]
    fn points_at_or_behind_camera_are_rejected() {
        let k = unit_camera();
        assert!(matches!(project(&Point3::new(0.0, 0.0, 0.0), &Pose::identity(), &k), Err(Error::BehindCamera { .. })));
        assert!(matches!(
            project(&Point3::new(1.0, 0.0, -3.0), &Pose::identity(), &k),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 0, 1).is_err());
    }

    #[test]
    fn pose_rejects_improper_rotations() {
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Pose::new(reflection, Vector3::zeros()).is_err());
        let sheared = Matrix3::new(1.0, 1e-6, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(sheared, Vector3::zeros()).is_err());
        assert!(Pose::new(Matrix3::identity(), Vector3::zeros()).is_ok());
    }

    #[test]
    fn geodesic_of_quarter_turn() {
        let i = Matrix3::identity();
        assert_eq!(rotation_geodesic(&i, &i), 0.0);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2).into_inner();
        assert_relative_eq!(rotation_geodesic(&i, &rz), FRAC_PI_2, epsilon = 1e-12);
    }

    // Independent oracle: angle of the relative rotation read off its quaternion,
    // 2·atan2(‖v‖, |w|).
    fn quaternion_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        let rel = Rotation3::from_matrix_unchecked(a.transpose() * b);
        let q = UnitQuaternion::from_rotation_matrix(&rel);
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    proptest! {
        #[test]
        fn projection_matches_scalar_pinhole(pose in arb_pose(),
                                             px in -0.5f64..0.5, py in -0.5f64..0.5, pz in -0.5f64..0.5) {
            let k = CameraIntrinsics::new(612.5, 598.0, 311.0, 297.5, 640, 480).unwrap();
            let pose = Pose::from_rotation(
                Rotation3::from_matrix_unchecked(*pose.rotation()),
                pose.translation() + Vector3::new(0.0, 0.0, 5.0),
            );
            let p = Point3::new(px, py, pz);
            // Scalar oracle written out coordinate by coordinate.
            let r = pose.rotation();
            let t = pose.translation();
            let x = r[(0, 0)] * px + r[(0, 1)] * py + r[(0, 2)] * pz + t[0];
            let y = r[(1, 0)] * px + r[(1, 1)] * py + r[(1, 2)] * pz + t[1];
            let z = r[(2, 0)] * px + r[(2, 1)] * py + r[(2, 2)] * pz + t[2];
            let uv = project(&p, &pose, &k).unwrap();
            prop_assert!((uv.x - (612.5 * x / z + 311.0)).abs() < 1e-9);
            prop_assert!((uv.y - (598.0 * y / z + 297.5)).abs() < 1e-9);
        }

        #[test]
        fn geodesic_matches_quaternion_angle(a in arb_rotation(), b in arb_rotation()) {
            let (a, b) = (a.into_inner(), b.into_inner());
            let g = rotation_geodesic(&a, &b);
            prop_assert!((0.0..=PI).contains(&g));
            prop_assert!((g - quaternion_angle(&a, &b)).abs() < 1e-6);
        }

        #[test]
        fn geodesic_is_a_metric(a in arb_rotation(), b in arb_rotation(), c in arb_rotation()) {
            let (a, b, c) = (a.into_inner(), b.into_inner(), c.into_inner());
            prop_assert!((rotation_geodesic(&a, &b) - rotation_geodesic(&b, &a)).abs() < 1e-9);
            prop_assert!(rotation_geodesic(&a, &c) <= rotation_geodesic(&a, &b) + rotation_geodesic(&b, &c) + 1e-9);
        }

        #[test]
        fn inverse_round_trip(pose in arb_pose(), x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0) {
            let p = Point3::new(x, y, z);
            let back = pose.inverse().transform_point(&pose.transform_point(&p));
            prop_assert!((back - p).norm() < 1e-9);
            let ident = pose.compose(&pose.inverse());
            prop_assert!(Pose::new(*ident.rotation(), *ident.translation()).is_ok());
        }
    }
}
