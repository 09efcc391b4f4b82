use alloc::vec::Vec;

use nalgebra::{Point2, Point3};
#[allow(unused_imports)] // resolves inherently whenever std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{epnp, refine_pose, DEFAULT_REFINE_ITERATIONS};
use crate::error::{Error, Result};
use crate::fusion::Correspondence;
use crate::geometry::{CameraIntrinsics, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub max_iterations: usize,
    pub inlier_threshold_px: f64,
    pub min_sample_size: usize,
    /// Stop once an all-inlier sample has been drawn with at least this probability.
    pub confidence_stop: f64,
    pub seed: u64,
    /// Refine the consensus pose on all inliers.
    pub refine: bool,
    pub refine_iterations: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            inlier_threshold_px: 5.0,
            min_sample_size: 4,
            confidence_stop: 0.999,
            seed: 0,
            refine: true,
            refine_iterations: DEFAULT_REFINE_ITERATIONS,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1"));
        }
        if !(self.inlier_threshold_px > 0.0) {
            return Err(Error::InvalidConfig("inlier threshold must be positive"));
        }
        if self.min_sample_size < 4 {
            return Err(Error::InvalidConfig("min_sample_size must be at least 4"));
        }
        if !(0.0..1.0).contains(&self.confidence_stop) {
            return Err(Error::InvalidConfig("confidence_stop must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpSolution {
    pub pose: Pose,
    /// Parallel to the input correspondences.
    pub inliers: Vec<bool>,
    /// Mean pixel reprojection error over the inliers.
    pub mean_reprojection_px: f64,
}

impl PnpSolution {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|i| **i).count()
    }
}

/// Per-pair pixel errors; points behind the camera get infinity.
fn errors(pose: &Pose, object: &[Point3<f64>], image: &[Point2<f64>], k: &CameraIntrinsics) -> Vec<f64> {
    object
        .iter()
        .zip(image)
        .map(|(p, u)| k.project_camera_point(&pose.transform_point(p)).map_or(f64::INFINITY, |q| (q - u).norm()))
        .collect()
}

struct Consensus {
    pose: Pose,
    inliers: Vec<bool>,
    count: usize,
    error_sum: f64,
}

impl Consensus {
    fn score(pose: Pose, errs: &[f64], threshold: f64) -> Self {
        let inliers: Vec<bool> = errs.iter().map(|e| *e < threshold).collect();
        let count = inliers.iter().filter(|i| **i).count();
        let error_sum = errs.iter().zip(&inliers).filter(|(_, i)| **i).map(|(e, _)| e).sum();
        Self { pose, inliers, count, error_sum }
    }

    fn beats(&self, other: &Consensus) -> bool {
        self.count > other.count || (self.count == other.count && self.error_sum < other.error_sum)
    }
}

/// Draws `size` pairs with distinct keypoints, each step proportional to confidence
/// among the still-eligible pairs (uniform when they all have zero confidence).
fn draw_sample(pairs: &[Correspondence], size: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let mut chosen: Vec<usize> = Vec::with_capacity(size);
    let eligible = |i: usize, chosen: &[usize]| chosen.iter().all(|&c| pairs[c].keypoint != pairs[i].keypoint);
    for _ in 0..size {
        let candidates: Vec<usize> = (0..pairs.len()).filter(|&i| eligible(i, &chosen)).collect();
        if candidates.is_empty() {
            return None;
        }
        let total: f64 = candidates.iter().map(|&i| pairs[i].confidence.max(0.0)).sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = *candidates.last()?;
            for &i in &candidates {
                let w = pairs[i].confidence.max(0.0);
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            candidates[rng.random_range(0..candidates.len())]
        };
        chosen.push(pick);
    }
    Some(chosen)
}

/// Iterations after which an all-inlier sample has been seen with probability `confidence`.
fn required_iterations(inlier_ratio: f64, sample: usize, confidence: f64) -> f64 {
    let good = inlier_ratio.powi(sample as i32);
    if good >= 1.0 {
        return 0.0;
    }
    if good <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - confidence).ln() / (1.0 - good).ln()
}

/// Robust pose from correspondences that may contain outliers. Iteration `i`
/// draws from stream `i` of a generator seeded with `params.seed`.
pub fn ransac_pnp(pairs: &[Correspondence], k: &CameraIntrinsics, params: &RansacParams) -> Result<PnpSolution> {
    params.validate()?;
    let s = params.min_sample_size;
    if pairs.len() < s {
        return Err(Error::TooFew { needed: s, got: pairs.len() });
    }
    let object: Vec<Point3<f64>> = pairs.iter().map(|p| p.object_point).collect();
    let image: Vec<Point2<f64>> = pairs.iter().map(|p| p.image_point).collect();

    let mut best: Option<Consensus> = None;
    for iter in 0..params.max_iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(iter as u64);
        let Some(sample) = draw_sample(pairs, s, &mut rng) else {
            let distinct = {
                let mut kp: Vec<usize> = pairs.iter().map(|p| p.keypoint).collect();
                kp.sort_unstable();
                kp.dedup();
                kp.len()
            };
            return Err(Error::TooFew { needed: s, got: distinct });
        };
        let sub_o: Vec<Point3<f64>> = sample.iter().map(|&i| object[i]).collect();
        let sub_i: Vec<Point2<f64>> = sample.iter().map(|&i| image[i]).collect();
        let Ok(pose) = epnp(&sub_o, &sub_i, k) else { continue };
        let candidate = Consensus::score(pose, &errors(&pose, &object, &image, k), params.inlier_threshold_px);
        if best.as_ref().is_none_or(|b| candidate.beats(b)) {
            best = Some(candidate);
        }
        let ratio = best.as_ref().map_or(0.0, |b| b.count as f64 / pairs.len() as f64);
        if (iter + 1) as f64 >= required_iterations(ratio, s, params.confidence_stop) {
            break;
        }
    }

    let best = best.filter(|b| b.count >= s);
    let Some(mut best) = best else {
        return Err(Error::NoConsensus { inliers: 0, needed: s });
    };
    let inlier_o: Vec<Point3<f64>> = object.iter().zip(&best.inliers).filter(|(_, i)| **i).map(|(p, _)| *p).collect();
    let inlier_i: Vec<Point2<f64>> = image.iter().zip(&best.inliers).filter(|(_, i)| **i).map(|(p, _)| *p).collect();
    let mut refit = epnp(&inlier_o, &inlier_i, k).ok();
    if params.refine {
        let start = refit.unwrap_or(best.pose);
        refit = refine_pose(&start, &inlier_o, &inlier_i, k, params.refine_iterations).ok().or(refit);
    }
    if let Some(pose) = refit {
        let candidate = Consensus::score(pose, &errors(&pose, &object, &image, k), params.inlier_threshold_px);
        if candidate.count >= best.count {
            best = candidate;
        }
    }
    let mean = best.error_sum / best.count as f64;
    Ok(PnpSolution { pose: best.pose, inliers: best.inliers, mean_reprojection_px: mean })
}
