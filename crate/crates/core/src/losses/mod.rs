//! Training objective: focal segmentation loss plus the weighted L1 keypoint
//! and confidence regression losses, each with analytic gradients.
//!
//! `total = seg + reg`, `reg = beta·pos + gamma_reg·conf`. The regression
//! terms only see cells inside the ground-truth foreground mask.

mod focal;
mod gradcheck;
mod regression;

pub use focal::{focal_loss, focal_term, median_frequency_weights, ClassProbabilities, FocalLoss, MIN_PROBABILITY};
pub use gradcheck::{grad_check, GradCheckReport};
pub use regression::{
    confidence_params, confidence_target, loss_conf, loss_pos, offset_params, set_confidence_params, set_offset_params,
    RegressionLoss,
};

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{GroundTruthGrid, PredictionGrid};

/// Weights and shape parameters of the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Sharpness of the confidence target `exp(−tau·‖Δ‖₂)`, per normalized unit.
    pub tau: f64,
    pub beta: f64,
    pub gamma_reg: f64,
    pub focal_gamma: f64,
    /// One positive weight per class, background first.
    pub class_weights: Vec<f64>,
}

impl LossConfig {
    /// Defaults `tau = 1`, `beta = gamma_reg = 1`, `focal_gamma = 2`, unit class weights.
    pub fn with_defaults(num_classes: usize) -> Self {
        Self { tau: 1.0, beta: 1.0, gamma_reg: 1.0, focal_gamma: 2.0, class_weights: alloc::vec![1.0; num_classes] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidConfig("tau must be positive"));
        }
        if !(self.beta >= 0.0 && self.gamma_reg >= 0.0) {
            return Err(Error::InvalidConfig("beta and gamma_reg must be non-negative"));
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::InvalidConfig("focal_gamma must be non-negative"));
        }
        if self.class_weights.is_empty() || self.class_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidConfig("class weights must all be positive"));
        }
        Ok(())
    }
}

/// Loss components and gradients. Gradients are laid out row-major by cell,
/// then keypoint (then axis for offsets, class for probabilities).
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub seg: f64,
    pub pos: f64,
    pub conf: f64,
    pub reg: f64,
    pub grad_offsets: Vec<f64>,
    pub grad_confidences: Vec<f64>,
    pub grad_probabilities: Vec<f64>,
    /// Cells whose labelled probability was clamped up to [`MIN_PROBABILITY`].
    pub degenerate_cells: usize,
}

/// Evaluates the full objective on one image.
pub fn loss_total(
    grid: &PredictionGrid,
    gt: &GroundTruthGrid,
    probs: &ClassProbabilities,
    config: &LossConfig,
) -> Result<LossReport> {
    config.validate()?;
    if probs.num_cells() != gt.spec().num_cells() {
        return Err(Error::SpecMismatch);
    }
    let labels: Vec<usize> = (0..gt.spec().num_cells()).map(|c| gt.class_label(c)).collect();
    let seg = focal_loss(probs, &labels, &config.class_weights, config.focal_gamma)?;
    let pos = loss_pos(grid, gt, &config.class_weights)?;
    let conf = loss_conf(grid, gt, config.tau, &config.class_weights)?;
    let reg = config.beta * pos.value + config.gamma_reg * conf.value;
    Ok(LossReport {
        total: seg.value + reg,
        seg: seg.value,
        pos: pos.value,
        conf: conf.value,
        reg,
        grad_offsets: pos.gradient.iter().map(|g| config.beta * g).collect(),
        grad_confidences: conf.gradient.iter().map(|g| config.gamma_reg * g).collect(),
        grad_probabilities: seg.gradient,
        degenerate_cells: seg.degenerate_cells,
    })
}
