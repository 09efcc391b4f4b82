use alloc::vec::Vec;

use nalgebra::{Point2, Point3};
#[allow(unused_imports)] // resolves inherently whenever std is linked
use num_traits::Float;

use super::{project, CameraIntrinsics, ObjectModel, Pose};
use crate::error::{Error, Result};

fn transformed(pose: &Pose, model: &ObjectModel) -> Result<Vec<Point3<f64>>> {
    if model.surface_points().is_empty() {
        return Err(Error::EmptyModel);
    }
    Ok(model.surface_points().iter().map(|p| pose.transform_point(p)).collect())
}

/// ADD: mean distance between corresponding surface points under the two poses.
pub fn add_metric(est: &Pose, gt: &Pose, model: &ObjectModel) -> Result<f64> {
    let a = transformed(est, model)?;
    let b = transformed(gt, model)?;
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64)
}

/// ADD-S: mean distance from each estimated surface point to its nearest ground-truth one.
pub fn adds_metric(est: &Pose, gt: &Pose, model: &ObjectModel) -> Result<f64> {
    let a = transformed(est, model)?;
    let b = transformed(gt, model)?;
    Ok(mean_nearest(&a, &b, |p, q| (p - q).norm_squared()))
}

/// Mean 2D reprojection distance in pixels; nearest-neighbour in the image when `symmetric`.
pub fn rep_metric(est: &Pose, gt: &Pose, model: &ObjectModel, k: &CameraIntrinsics, symmetric: bool) -> Result<f64> {
    if model.surface_points().is_empty() {
        return Err(Error::EmptyModel);
    }
    let project_all = |pose: &Pose| -> Result<Vec<Point2<f64>>> {
        model.surface_points().iter().map(|p| project(p, pose, k)).collect()
    };
    let a = project_all(est)?;
    let b = project_all(gt)?;
    if symmetric {
        Ok(mean_nearest(&a, &b, |p, q| (p - q).norm_squared()))
    } else {
        Ok(a.iter().zip(&b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64)
    }
}

fn mean_nearest<P>(a: &[P], b: &[P], dist_sq: impl Fn(&P, &P) -> f64) -> f64 {
    let total: f64 = a.iter().map(|p| b.iter().map(|q| dist_sq(p, q)).fold(f64::INFINITY, f64::min).sqrt()).sum();
    total / a.len() as f64
}
