//! Posed object instances in front of a camera.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{project, CameraIntrinsics, ObjectModel, Pose};

/// One object instance placed in a scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Instance {
    pub model_id: usize,
    pub pose: Pose,
}

/// Camera intrinsics plus the instances visible to it. The image size is the intrinsics'.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub intrinsics: CameraIntrinsics,
    pub instances: Vec<Instance>,
}

impl Scene {
    pub fn new(intrinsics: CameraIntrinsics, instances: Vec<Instance>) -> Self {
        Self { intrinsics, instances }
    }

    /// Checks that every instance has a known model, positive depth for all of
    /// its surface points and keypoints, and a surface centroid inside the image.
    pub fn validate(&self, models: &[ObjectModel]) -> Result<()> {
        for (i, inst) in self.instances.iter().enumerate() {
            let model = find_model(models, inst.model_id)?;
            if !in_frustum(model, &inst.pose, &self.intrinsics) {
                return Err(Error::OutsideFrustum(i));
            }
        }
        Ok(())
    }
}

pub fn find_model(models: &[ObjectModel], id: usize) -> Result<&ObjectModel> {
    models.iter().find(|m| m.id() == id).ok_or(Error::UnknownModel(id))
}

pub(crate) fn in_frustum(model: &ObjectModel, pose: &Pose, k: &CameraIntrinsics) -> bool {
    let all_in_front = model.surface_points().iter().chain(model.keypoints()).all(|p| project(p, pose, k).is_ok());
    all_in_front && project(&model.surface_centroid(), pose, k).map(|c| k.contains(&c)).unwrap_or(false)
}
