use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Vector2;
#[allow(unused_imports)] // resolves inherently whenever std is linked
use num_traits::Float;

use crate::error::{Error, Result};
use crate::grid::{encode_offset, GroundTruthGrid, PredictionGrid};

/// A regression loss value and its gradient in the parameters it depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionLoss {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Confidence target `exp(−tau·‖Δ‖₂)`.
pub fn confidence_target(residual: &Vector2<f64>, tau: f64) -> f64 {
    (-tau * residual.norm()).exp()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_shapes(grid: &PredictionGrid, gt: &GroundTruthGrid, weights: &[f64]) -> Result<()> {
    if grid.spec() != gt.spec() {
        return Err(Error::SpecMismatch);
    }
    for inst in gt.instances() {
        if inst.keypoints.len() != grid.num_keypoints() {
            return Err(Error::SpecMismatch);
        }
        if inst.class_label >= weights.len() {
            return Err(Error::InvalidConfig("no class weight for a ground-truth class"));
        }
    }
    Ok(())
}

/// Visits every `(cell, keypoint)` inside the mask with its class weight,
/// residual `Δ` (normalized units) and flat parameter index.
fn for_each_masked(
    grid: &PredictionGrid,
    gt: &GroundTruthGrid,
    weights: &[f64],
    mut visit: impl FnMut(usize, f64, Vector2<f64>),
) -> Result<()> {
    check_shapes(grid, gt, weights)?;
    let spec = gt.spec();
    let n = grid.num_keypoints();
    for cell in gt.foreground() {
        let inst = gt.owner(cell).ok_or(Error::SpecMismatch)?;
        let idx = spec.cell_at(cell)?;
        let w = weights[inst.class_label];
        for (i, (kp, g)) in grid.cells()[cell].keypoints.iter().zip(&inst.keypoints).enumerate() {
            let delta = kp.offset - encode_offset(g, idx, spec)?;
            visit(cell * n + i, w, delta);
        }
    }
    Ok(())
}

/// `Σ_{c∈M} Σ_i w·‖Δ_i(c)‖₁`; gradient in the offsets, two entries per keypoint.
pub fn loss_pos(grid: &PredictionGrid, gt: &GroundTruthGrid, weights: &[f64]) -> Result<RegressionLoss> {
    let mut value = 0.0;
    let mut gradient = vec![0.0; grid.cells().len() * grid.num_keypoints() * 2];
    for_each_masked(grid, gt, weights, |k, w, d| {
        value += w * (d.x.abs() + d.y.abs());
        gradient[2 * k] = w * sign(d.x);
        gradient[2 * k + 1] = w * sign(d.y);
    })?;
    Ok(RegressionLoss { value, gradient })
}

/// `Σ_{c∈M} Σ_i w·|s_i(c) − exp(−τ‖Δ_i(c)‖₂)|`; the target is held constant,
/// so the gradient is in the confidences only.
pub fn loss_conf(grid: &PredictionGrid, gt: &GroundTruthGrid, tau: f64, weights: &[f64]) -> Result<RegressionLoss> {
    let mut value = 0.0;
    let n = grid.num_keypoints();
    let mut gradient = vec![0.0; grid.cells().len() * n];
    for_each_masked(grid, gt, weights, |k, w, d| {
        let s = grid.cells()[k / n].keypoints[k % n].confidence;
        let r = s - confidence_target(&d, tau);
        value += w * r.abs();
        gradient[k] = w * sign(r);
    })?;
    Ok(RegressionLoss { value, gradient })
}

/// Offsets flattened as `[cell][keypoint][x, y]`.
pub fn offset_params(grid: &PredictionGrid) -> Vec<f64> {
    grid.cells().iter().flat_map(|c| c.keypoints.iter().flat_map(|k| [k.offset.x, k.offset.y])).collect()
}

pub fn set_offset_params(grid: &mut PredictionGrid, params: &[f64]) -> Result<()> {
    let n = grid.num_keypoints();
    if params.len() != grid.cells().len() * n * 2 {
        return Err(Error::SpecMismatch);
    }
    for (c, chunk) in params.chunks(2 * n).enumerate() {
        for (kp, xy) in grid.cell_mut(c).keypoints.iter_mut().zip(chunk.chunks(2)) {
            kp.offset = Vector2::new(xy[0], xy[1]);
        }
    }
    Ok(())
}

/// Confidences flattened as `[cell][keypoint]`.
pub fn confidence_params(grid: &PredictionGrid) -> Vec<f64> {
    grid.cells().iter().flat_map(|c| c.keypoints.iter().map(|k| k.confidence)).collect()
}

/// Overwrites confidences without range checks, so derivatives can be probed at the bounds.
pub fn set_confidence_params(grid: &mut PredictionGrid, params: &[f64]) -> Result<()> {
    let n = grid.num_keypoints();
    if params.len() != grid.cells().len() * n {
        return Err(Error::SpecMismatch);
    }
    for (c, chunk) in params.chunks(n).enumerate() {
        for (kp, s) in grid.cell_mut(c).keypoints.iter_mut().zip(chunk) {
            kp.confidence = *s;
        }
    }
    Ok(())
}
