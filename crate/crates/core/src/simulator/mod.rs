//! Seeded synthetic scenes and noisy grid predictions in place of real images
//! and a trained network.

mod noise;

pub use noise::{synthesize_predictions, NoiseModel};

use alloc::vec::Vec;

use nalgebra::{Point2, Quaternion, UnitQuaternion, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{project, CameraIntrinsics, Mesh, ObjectModel, Pose, DEFAULT_SURFACE_SAMPLES};
use crate::scene::{in_frustum, Instance, Scene};

/// Pose draws allowed per instance before giving up.
pub const MAX_ATTEMPTS: usize = 1000;

/// Generator for one scene of a seeded sequence: stream `index` of `master_seed`.
pub fn stream_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// 608×608 pinhole camera with a 600-pixel focal length.
pub fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(600.0, 600.0, 304.0, 304.0, 608, 608).expect("valid constants")
}

/// Boxes and cylinders of household-object size, ids `1..=6`. Cylinders are symmetric.
pub fn standard_models(seed: u64) -> Vec<ObjectModel> {
    let shapes: [(&str, Mesh, bool); 6] = [
        ("box-small", Mesh::cuboid(0.06, 0.08, 0.05), false),
        ("box-flat", Mesh::cuboid(0.14, 0.10, 0.04), false),
        ("box-tall", Mesh::cuboid(0.07, 0.07, 0.15), false),
        ("can", Mesh::cylinder(0.035, 0.11, 32), true),
        ("bowl", Mesh::cylinder(0.07, 0.05, 32), true),
        ("brick", Mesh::cuboid(0.12, 0.06, 0.06), false),
    ];
    shapes
        .into_iter()
        .enumerate()
        .map(|(i, (name, mesh, symmetric))| {
            let mut rng = stream_rng(seed, i as u64);
            let surface = mesh.sample_surface(DEFAULT_SURFACE_SAMPLES, &mut rng);
            ObjectModel::from_surface(i + 1, name, surface, symmetric).expect("non-degenerate mesh")
        })
        .collect()
}

/// Ranges for scene sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Depth range of object origins, in model units.
    pub min_depth: f64,
    pub max_depth: f64,
    /// Object origins project at least this far inside the image border.
    pub margin_px: f64,
    /// Instances of the same model keep their projected keypoint centroids at
    /// least this far apart, so class-based clustering can tell them apart.
    pub min_separation_px: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            min_objects: 3,
            max_objects: 8,
            min_depth: 0.5,
            max_depth: 1.5,
            margin_px: 40.0,
            min_separation_px: 60.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_objects > self.max_objects {
            return Err(Error::InvalidConfig("min_objects exceeds max_objects"));
        }
        if !(self.min_depth > 0.0 && self.max_depth >= self.min_depth) {
            return Err(Error::InvalidConfig("depth range must be positive and ordered"));
        }
        if !(self.margin_px >= 0.0) {
            return Err(Error::InvalidConfig("margin must be non-negative"));
        }
        if !(self.min_separation_px >= 0.0) {
            return Err(Error::InvalidConfig("minimum separation must be non-negative"));
        }
        Ok(())
    }
}

/// Rotation drawn uniformly over SO(3).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    loop {
        let v: Vector4<f64> = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
        if v.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(Quaternion::from_vector(v));
        }
    }
}

/// A scene with a uniformly drawn object count, models drawn uniformly from
/// `models`, uniform rotations, and positions back-projected from a random
/// pixel at a random depth. Draws violating the frustum check or the
/// same-model separation are redrawn.
pub fn sample_scene(
    config: &SceneConfig,
    models: &[ObjectModel],
    k: &CameraIntrinsics,
    rng: &mut ChaCha8Rng,
) -> Result<Scene> {
    config.validate()?;
    if models.is_empty() {
        return Err(Error::InvalidConfig("model library is empty"));
    }
    let (w, h) = (k.width() as f64, k.height() as f64);
    let margin = config.margin_px.min(w / 2.0).min(h / 2.0);
    let count = rng.random_range(config.min_objects..=config.max_objects);
    let mut instances = Vec::with_capacity(count);
    let mut centroids: Vec<(usize, Point2<f64>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let model = &models[rng.random_range(0..models.len())];
        let mut placed = None;
        for _ in 0..MAX_ATTEMPTS {
            let rotation = random_rotation(rng).to_rotation_matrix();
            let px = Point2::new(rng.random_range(margin..=w - margin), rng.random_range(margin..=h - margin));
            let depth = rng.random_range(config.min_depth..=config.max_depth);
            let pose = Pose::from_rotation(rotation, k.back_project(&px, depth).coords);
            if !in_frustum(model, &pose, k) {
                continue;
            }
            let c = keypoint_centroid(model, &pose, k)?;
            let crowded =
                centroids.iter().any(|(id, o)| *id == model.id() && (o - c).norm() < config.min_separation_px);
            if !crowded {
                placed = Some((pose, c));
                break;
            }
        }
        let (pose, c) = placed.ok_or(Error::SamplingExhausted { attempts: MAX_ATTEMPTS })?;
        centroids.push((model.id(), c));
        instances.push(Instance { model_id: model.id(), pose });
    }
    Ok(Scene::new(*k, instances))
}

/// Mean of the projected keypoints.
fn keypoint_centroid(model: &ObjectModel, pose: &Pose, k: &CameraIntrinsics) -> Result<Point2<f64>> {
    let mut sum = Vector2::zeros();
    for p in model.keypoints() {
        sum += project(p, pose, k)?.coords;
    }
    Ok(Point2::from(sum / model.keypoints().len() as f64))
}
