use nalgebra::Vector2;
#[allow(unused_imports)] // resolves inherently whenever std is linked
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, ObjectModel};
use crate::grid::{
    encode_offset, rasterize_ground_truth, GridSpec, GroundTruthGrid, KeypointPrediction, PredictionGrid,
};
use crate::losses::confidence_target;
use crate::scene::Scene;

/// Parametric prediction error standing in for a trained network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub inlier_sigma_px: f64,
    /// Probability that a keypoint is drawn from the wide component.
    pub outlier_rate: f64,
    pub outlier_sigma_px: f64,
    /// Half-width of the uniform perturbation added to confidences.
    pub confidence_jitter: f64,
    /// Probability that a foreground cell reports a wrong class.
    pub label_flip_rate: f64,
    /// Sharpness of the confidence `exp(−tau·‖Δ‖₂)`.
    pub tau: f64,
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self {
            inlier_sigma_px: 0.0,
            outlier_rate: 0.0,
            outlier_sigma_px: 0.0,
            confidence_jitter: 0.0,
            label_flip_rate: 0.0,
            tau: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_sigma_px >= 0.0 && self.outlier_sigma_px >= 0.0)
            || !self.inlier_sigma_px.is_finite()
            || !self.outlier_sigma_px.is_finite()
        {
            return Err(Error::InvalidConfig("noise sigmas must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) || !(0.0..=1.0).contains(&self.label_flip_rate) {
            return Err(Error::InvalidConfig("rates must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.confidence_jitter) {
            return Err(Error::InvalidConfig("confidence jitter must lie in [0, 1)"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidConfig("tau must be positive"));
        }
        Ok(())
    }
}

impl Default for NoiseModel {
    /// Inlier σ 3 px, 20% outliers at σ 40 px, jitter 0.1, 2% label flips, τ = 1.
    fn default() -> Self {
        Self {
            inlier_sigma_px: 3.0,
            outlier_rate: 0.2,
            outlier_sigma_px: 40.0,
            confidence_jitter: 0.1,
            label_flip_rate: 0.02,
            tau: 1.0,
        }
    }
}

/// Ground truth for `scene` and a prediction grid derived from it: every
/// foreground cell predicts every keypoint with mixture noise, a confidence
/// from the resulting residual, and occasionally a wrong class. Background
/// cells stay empty.
pub fn synthesize_predictions(
    scene: &Scene,
    models: &[ObjectModel],
    spec: &GridSpec,
    k: &CameraIntrinsics,
    noise: &NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Result<(PredictionGrid, GroundTruthGrid)> {
    noise.validate()?;
    let gt = rasterize_ground_truth(scene, models, spec, k)?;
    let num_classes = models.iter().map(|m| m.id()).max().unwrap_or(0) + 1;
    let n = models.first().map_or(8, |m| m.keypoints().len());
    let mut grid = PredictionGrid::background(*spec, n);
    for cell in gt.foreground().collect::<alloc::vec::Vec<_>>() {
        let inst = gt.owner(cell).expect("foreground cell has an owner");
        let idx = spec.cell_at(cell)?;
        let out = grid.cell_mut(cell);
        out.class_label = inst.class_label;
        if rng.random::<f64>() < noise.label_flip_rate && num_classes > 1 {
            // Uniform over the other labels, background included.
            let other = rng.random_range(0..num_classes - 1);
            out.class_label = if other >= inst.class_label { other + 1 } else { other };
        }
        for (kp, g) in out.keypoints.iter_mut().zip(&inst.keypoints) {
            let sigma =
                if rng.random::<f64>() < noise.outlier_rate { noise.outlier_sigma_px } else { noise.inlier_sigma_px };
            let e = Vector2::new(StandardNormal.sample(rng), StandardNormal.sample(rng)) * sigma;
            let truth = encode_offset(g, idx, spec)?;
            let offset = encode_offset(&(g + e), idx, spec)?;
            let jitter = (2.0 * rng.random::<f64>() - 1.0) * noise.confidence_jitter;
            let confidence = (confidence_target(&(offset - truth), noise.tau) + jitter).clamp(0.0, 1.0);
            *kp = KeypointPrediction::new(offset, confidence)?;
        }
    }
    Ok((grid, gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{default_camera, sample_scene, standard_models, stream_rng, SceneConfig};
    use alloc::vec::Vec;

    fn setup(seed: u64) -> (Vec<ObjectModel>, Scene, CameraIntrinsics, GridSpec) {
        let models = standard_models(0);
        let k = default_camera();
        let scene = sample_scene(&SceneConfig::default(), &models, &k, &mut stream_rng(seed, 0)).unwrap();
        (models, scene, k, GridSpec::default_608())
    }

    #[test]
    fn zero_noise_reproduces_ground_truth() {
        let (models, scene, k, spec) = setup(1);
        let (grid, gt) =
            synthesize_predictions(&scene, &models, &spec, &k, &NoiseModel::zero(), &mut stream_rng(1, 1)).unwrap();
        assert!(gt.foreground().count() > 0);
        for c in 0..spec.num_cells() {
            assert_eq!(grid.cells()[c].class_label, gt.class_label(c));
            match gt.owner(c) {
                Some(inst) => {
                    for (p, g) in grid.decoded(c).iter().zip(&inst.keypoints) {
                        assert!((p - g).norm() < 1e-9);
                    }
                    assert!(grid.cells()[c].keypoints.iter().all(|kp| kp.confidence == 1.0));
                }
                None => assert!(grid.cells()[c].keypoints.iter().all(|kp| *kp == KeypointPrediction::zero())),
            }
        }
    }

    /// Residual pixel errors of all foreground keypoints.
    fn errors(grid: &PredictionGrid, gt: &GroundTruthGrid) -> Vec<(Vector2<f64>, f64)> {
        let mut out = Vec::new();
        for c in gt.foreground() {
            let inst = gt.owner(c).unwrap();
            for ((p, g), kp) in grid.decoded(c).iter().zip(&inst.keypoints).zip(&grid.cells()[c].keypoints) {
                out.push((p - g, kp.confidence));
            }
        }
        out
    }

    #[test]
    fn inlier_spread_matches_sigma() {
        let noise = NoiseModel { inlier_sigma_px: 3.0, ..NoiseModel::zero() };
        let mut samples = Vec::new();
        let mut seed = 0;
        while samples.len() < 10_000 {
            let (models, scene, k, spec) = setup(100 + seed);
            let (grid, gt) =
                synthesize_predictions(&scene, &models, &spec, &k, &noise, &mut stream_rng(7, seed)).unwrap();
            samples.extend(errors(&grid, &gt));
            seed += 1;
        }
        for axis in 0..2 {
            let xs: Vec<f64> = samples.iter().map(|(e, _)| e[axis]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            assert!((var.sqrt() - 3.0).abs() < 0.05 * 3.0, "axis {axis}: {}", var.sqrt());
        }
    }

    #[test]
    fn confidence_is_monotone_in_error_without_jitter() {
        let noise =
            NoiseModel { inlier_sigma_px: 3.0, outlier_rate: 0.3, outlier_sigma_px: 30.0, ..NoiseModel::zero() };
        let (models, scene, k, spec) = setup(3);
        let (grid, gt) = synthesize_predictions(&scene, &models, &spec, &k, &noise, &mut stream_rng(3, 3)).unwrap();
        for c in gt.foreground() {
            let inst = gt.owner(c).unwrap();
            let pairs: Vec<(f64, f64)> = grid
                .decoded(c)
                .iter()
                .zip(&inst.keypoints)
                .zip(&grid.cells()[c].keypoints)
                .map(|((p, g), kp)| ((p - g).norm(), kp.confidence))
                .collect();
            // Spearman ρ = −1: every strictly larger error has a strictly lower confidence.
            for a in &pairs {
                for b in &pairs {
                    if a.0 < b.0 - 1e-9 {
                        assert!(a.1 > b.1);
                    }
                }
            }
        }
    }

    #[test]
    fn mean_confidence_matches_expected_target() {
        let noise = NoiseModel { inlier_sigma_px: 3.0, ..NoiseModel::zero() };
        let mut confs = Vec::new();
        let mut norms = Vec::new();
        let mut seed = 0;
        while confs.len() < 20_000 {
            let (models, scene, k, spec) = setup(500 + seed);
            let (grid, gt) =
                synthesize_predictions(&scene, &models, &spec, &k, &noise, &mut stream_rng(8, seed)).unwrap();
            for (e, c) in errors(&grid, &gt) {
                confs.push(c);
                norms.push(e.norm() * spec.norm_span() / 608.0);
            }
            seed += 1;
        }
        let n = confs.len() as f64;
        let mean = confs.iter().sum::<f64>() / n;
        let sd = (confs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        // E[exp(−τR)] for Rayleigh R with scale s = 3·10/608, by midpoint quadrature.
        let s = 3.0 * 10.0 / 608.0;
        let steps = 200_000;
        let dr = 20.0 * s / steps as f64;
        let expected: f64 = (0..steps)
            .map(|i| {
                let r = (i as f64 + 0.5) * dr;
                (-r).exp() * r / (s * s) * (-r * r / (2.0 * s * s)).exp() * dr
            })
            .sum();
        assert!((mean - expected).abs() < 4.0 * sd / n.sqrt(), "{mean} vs {expected}");
        // The plug-in form exp(−τ·E‖Δ‖) differs only by the small convexity gap.
        let plug_in = (-(norms.iter().sum::<f64>() / n)).exp();
        assert!((mean - plug_in).abs() < 2e-3);
    }

    #[test]
    fn label_flips_hit_other_classes_at_the_set_rate() {
        let noise = NoiseModel { label_flip_rate: 0.3, ..NoiseModel::zero() };
        let (mut flipped, mut total) = (0usize, 0usize);
        for seed in 0..10 {
            let (models, scene, k, spec) = setup(900 + seed);
            let (grid, gt) =
                synthesize_predictions(&scene, &models, &spec, &k, &noise, &mut stream_rng(2, seed)).unwrap();
            for c in gt.foreground() {
                total += 1;
                let label = grid.cells()[c].class_label;
                assert!(label <= 6);
                if label != gt.class_label(c) {
                    flipped += 1;
                }
            }
            for c in 0..spec.num_cells() {
                if gt.owner(c).is_none() {
                    assert_eq!(grid.cells()[c].class_label, 0);
                }
            }
        }
        let rate = flipped as f64 / total as f64;
        let se = (0.3 * 0.7 / total as f64).sqrt();
        assert!((rate - 0.3).abs() < 4.0 * se, "{rate} over {total}");
    }

    #[test]
    fn deterministic_given_seed() {
        let (models, scene, k, spec) = setup(4);
        let noise = NoiseModel::default();
        let a = synthesize_predictions(&scene, &models, &spec, &k, &noise, &mut stream_rng(4, 4)).unwrap();
        let b = synthesize_predictions(&scene, &models, &spec, &k, &noise, &mut stream_rng(4, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_noise_is_rejected() {
        for bad in [
            NoiseModel { outlier_rate: 1.5, ..NoiseModel::default() },
            NoiseModel { inlier_sigma_px: -1.0, ..NoiseModel::default() },
            NoiseModel { confidence_jitter: 1.0, ..NoiseModel::default() },
            NoiseModel { tau: 0.0, ..NoiseModel::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(NoiseModel::default().validate().is_ok());
    }
}
