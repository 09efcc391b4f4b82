//! Finite-difference checks of the loss gradients on random small problems.

use nalgebra::{Point2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use segpose_core::grid::{
    encode_offset, residual, GridSpec, GroundTruthGrid, GtInstance, KeypointPrediction, PredictionGrid,
};
use segpose_core::losses::{
    confidence_params, confidence_target, focal_loss, grad_check, loss_conf, loss_pos, offset_params,
    set_confidence_params, set_offset_params, ClassProbabilities, GradCheckReport,
};

use crate::error::{Error, Result};

/// Probes closer than this many steps to a kink of an L1 term are skipped.
pub const KINK_MARGIN_STEPS: f64 = 10.0;

/// A random grid, ground truth, class probabilities and loss parameters.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: PredictionGrid,
    pub gt: GroundTruthGrid,
    pub probs: ClassProbabilities,
    pub class_weights: Vec<f64>,
    pub tau: f64,
    pub focal_gamma: f64,
}

pub fn random_problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = rng.random_range(3..=6);
    let image = size as u32 * 16;
    let spec = GridSpec::new(size, image, image, 10.0).expect("valid by construction");
    let num_classes = rng.random_range(2..=4);
    let n = rng.random_range(4..=8);
    let count = rng.random_range(1..=3);
    let point =
        |rng: &mut ChaCha8Rng| Point2::new(rng.random::<f64>() * image as f64, rng.random::<f64>() * image as f64);
    let instances: Vec<GtInstance> = (0..count)
        .map(|i| GtInstance {
            scene_index: i,
            class_label: rng.random_range(1..num_classes),
            keypoints: (0..n).map(|_| point(&mut rng)).collect(),
        })
        .collect();
    let owners = (0..spec.num_cells())
        .map(|_| if rng.random_bool(0.3) { None } else { Some(rng.random_range(0..count)) })
        .collect();
    let gt = GroundTruthGrid::new(spec, instances, owners, Vec::new()).expect("valid by construction");
    let mut grid = PredictionGrid::background(spec, n);
    for c in 0..spec.num_cells() {
        let cell = grid.cell_mut(c);
        cell.class_label = gt.class_label(c);
        for kp in cell.keypoints.iter_mut() {
            let offset = Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            *kp = KeypointPrediction::new(offset, rng.random()).expect("confidence in range");
        }
    }
    let mut values = Vec::with_capacity(spec.num_cells() * num_classes);
    for _ in 0..spec.num_cells() {
        let raw: Vec<f64> = (0..num_classes).map(|_| 0.02 + rng.random::<f64>()).collect();
        let sum: f64 = raw.iter().sum();
        values.extend(raw.iter().map(|v| v / sum));
    }
    let probs = ClassProbabilities::new(num_classes, values).expect("rows normalized");
    let class_weights = (0..num_classes).map(|_| rng.random_range(0.1..5.0)).collect();
    Problem { grid, gt, probs, class_weights, tau: rng.random_range(0.3..3.0), focal_gamma: rng.random_range(0.0..3.0) }
}

/// Results for the three differentiable losses on one problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCheck {
    pub seed: u64,
    pub pos: Summary,
    pub conf: Summary,
    pub focal: Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub loss: f64,
    pub max_rel_err: f64,
    pub worst_coordinate: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
}

impl From<GradCheckReport> for Summary {
    fn from(r: GradCheckReport) -> Self {
        Self {
            loss: r.loss,
            max_rel_err: r.max_rel_err,
            worst_coordinate: r.worst_coordinate,
            checked: r.checked,
            skipped: r.skipped,
        }
    }
}

/// Per-parameter distance to the nearest kink of `loss_pos`; infinite outside the mask.
fn offset_kinks(p: &Problem) -> Vec<f64> {
    let n = p.grid.num_keypoints();
    let spec = p.gt.spec();
    (0..p.grid.cells().len() * n * 2)
        .map(|j| {
            let (cell, kp) = (j / (2 * n), (j / 2) % n);
            p.gt.owner(cell).map_or(f64::INFINITY, |inst| {
                let idx = spec.cell_at(cell).expect("cell in range");
                let d = residual(&p.grid.cells()[cell].keypoints[kp], idx, &inst.keypoints[kp], spec)
                    .expect("cell in range");
                if j % 2 == 0 {
                    d.x.abs()
                } else {
                    d.y.abs()
                }
            })
        })
        .collect()
}

/// Per-parameter distance to the kink of `loss_conf`, where the confidence meets its target.
fn confidence_kinks(p: &Problem) -> Vec<f64> {
    let n = p.grid.num_keypoints();
    let spec = p.gt.spec();
    (0..p.grid.cells().len() * n)
        .map(|j| {
            let (cell, kp) = (j / n, j % n);
            p.gt.owner(cell).map_or(f64::INFINITY, |inst| {
                let idx = spec.cell_at(cell).expect("cell in range");
                let k = &p.grid.cells()[cell].keypoints[kp];
                let d = k.offset - encode_offset(&inst.keypoints[kp], idx, spec).expect("cell in range");
                (k.confidence - confidence_target(&d, p.tau)).abs()
            })
        })
        .collect()
}

/// Checks `loss_pos`, `loss_conf` and the focal loss on `random_problem(seed)`.
pub fn check_seed(seed: u64, step: f64, tolerance: f64) -> Result<LossCheck> {
    let p = random_problem(seed);
    let numerical = |e: segpose_core::Error| Error::Numerical(format!("gradient check, seed {seed}: {e}"));
    let margin = KINK_MARGIN_STEPS * step;

    let kinks = offset_kinks(&p);
    let pos = grad_check(
        |x: &[f64]| {
            let mut g = p.grid.clone();
            set_offset_params(&mut g, x).expect("length preserved");
            let r = loss_pos(&g, &p.gt, &p.class_weights).expect("shapes agree");
            (r.value, r.gradient)
        },
        &offset_params(&p.grid),
        step,
        tolerance,
        |j| kinks[j] < margin,
    )
    .map_err(numerical)?;

    let kinks = confidence_kinks(&p);
    let conf = grad_check(
        |x: &[f64]| {
            let mut g = p.grid.clone();
            set_confidence_params(&mut g, x).expect("length preserved");
            let r = loss_conf(&g, &p.gt, p.tau, &p.class_weights).expect("shapes agree");
            (r.value, r.gradient)
        },
        &confidence_params(&p.grid),
        step,
        tolerance,
        |j| kinks[j] < margin,
    )
    .map_err(numerical)?;

    let labels: Vec<usize> = (0..p.gt.spec().num_cells()).map(|c| p.gt.class_label(c)).collect();
    let k = p.probs.num_classes();
    let focal = grad_check(
        |x: &[f64]| {
            let probs = ClassProbabilities::from_raw(k, x.to_vec()).expect("length preserved");
            let r = focal_loss(&probs, &labels, &p.class_weights, p.focal_gamma).expect("shapes agree");
            (r.value, r.gradient)
        },
        p.probs.values(),
        step,
        tolerance,
        |_| false,
    )
    .map_err(numerical)?;

    Ok(LossCheck { seed, pos: pos.into(), conf: conf.into(), focal: focal.into() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn problems_are_deterministic_and_varied() {
        let a = random_problem(3);
        let b = random_problem(3);
        assert_eq!(a.grid, b.grid);
        assert_eq!(a.gt, b.gt);
        let sizes: std::collections::BTreeSet<usize> = (0..50).map(|s| random_problem(s).grid.spec().size()).collect();
        assert!(sizes.len() > 1);
    }

    #[test]
    fn kink_distances_match_the_residuals() {
        let p = random_problem(11);
        let kinks = offset_kinks(&p);
        let n = p.grid.num_keypoints();
        for (j, d) in kinks.iter().enumerate() {
            let cell = j / (2 * n);
            assert_eq!(d.is_finite(), p.gt.owner(cell).is_some());
        }
    }

    #[test]
    fn a_few_seeds_pass() {
        for seed in 0..5 {
            let r = check_seed(seed, 1e-6, 1e-4).unwrap();
            for s in [r.pos, r.conf, r.focal] {
                assert!(s.max_rel_err < 1e-4 && s.checked > 0, "{r:?}");
            }
        }
    }
}
