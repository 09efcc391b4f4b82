use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // resolves inherently whenever std is linked
use num_traits::Float;

use crate::error::{Error, Result};

/// Probabilities below this are clamped (and counted) before taking the log.
pub const MIN_PROBABILITY: f64 = 1e-12;

const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Class weights `median(freq) / freq_k` over the classes that occur; absent classes get 0.
pub fn median_frequency_weights(counts: &[u64]) -> Result<Vec<f64>> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::AllZero);
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let mut present: Vec<f64> = freq.iter().copied().filter(|f| *f > 0.0).collect();
    present.sort_by(f64::total_cmp);
    let m = present.len();
    let median = if m % 2 == 1 { present[m / 2] } else { (present[m / 2 - 1] + present[m / 2]) / 2.0 };
    Ok(freq.iter().map(|&f| if f > 0.0 { median / f } else { 0.0 }).collect())
}

/// Per-cell class probabilities, `num_classes` per row, background first.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities {
    num_classes: usize,
    values: Vec<f64>,
}

impl ClassProbabilities {
    /// Checks every row is non-negative and sums to one within 1e-9.
    pub fn new(num_classes: usize, values: Vec<f64>) -> Result<Self> {
        let probs = Self::from_raw(num_classes, values)?;
        for (cell, row) in probs.values.chunks(num_classes).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE || row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::NotOnSimplex { cell, sum });
            }
        }
        Ok(probs)
    }

    /// Skips the simplex check; used when probing derivatives coordinate-wise.
    pub fn from_raw(num_classes: usize, values: Vec<f64>) -> Result<Self> {
        if num_classes == 0 || !values.len().is_multiple_of(num_classes) {
            return Err(Error::SpecMismatch);
        }
        Ok(Self { num_classes, values })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn num_cells(&self) -> usize {
        self.values.len() / self.num_classes
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn row(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.num_classes..(cell + 1) * self.num_classes]
    }
}

/// Focal term `−w·(1−p)^γ·ln p` and its derivative in `p`. `p` must be positive.
pub fn focal_term(p: f64, weight: f64, gamma: f64) -> (f64, f64) {
    let q = 1.0 - p;
    let ln_p = p.ln();
    let modulating = if gamma == 0.0 { 1.0 } else { q.max(0.0).powf(gamma) };
    let value = -weight * modulating * ln_p;
    // d/dp (1−p)^γ = −γ(1−p)^(γ−1); written as γ(1−p)^γ/(1−p) with the p → 1 limit taken as 0.
    let d_modulating = if gamma == 0.0 || q <= 0.0 { 0.0 } else { -gamma * q.powf(gamma - 1.0) };
    let grad = -weight * (d_modulating * ln_p + modulating / p);
    (value, grad)
}

/// Focal loss summed over cells, with its gradient in the probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalLoss {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub degenerate_cells: usize,
}

/// `Σ_cells −w_label·(1 − p_label)^γ·ln p_label`.
pub fn focal_loss(probs: &ClassProbabilities, labels: &[usize], weights: &[f64], gamma: f64) -> Result<FocalLoss> {
    if labels.len() != probs.num_cells() || weights.len() != probs.num_classes() {
        return Err(Error::SpecMismatch);
    }
    let k = probs.num_classes();
    let mut value = 0.0;
    let mut gradient = vec![0.0; probs.values.len()];
    let mut degenerate_cells = 0;
    for (cell, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::SpecMismatch);
        }
        let mut p = probs.values[cell * k + label];
        if p <= MIN_PROBABILITY {
            degenerate_cells += 1;
            p = MIN_PROBABILITY;
        }
        let (v, g) = focal_term(p, weights[label], gamma);
        value += v;
        gradient[cell * k + label] = g;
    }
    Ok(FocalLoss { value, gradient, degenerate_cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_counts_give_unit_weights() {
        assert_eq!(median_frequency_weights(&[100, 100, 100]).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn skewed_counts() {
        // freqs 0.9, 0.09, 0.01 with median 0.09.
        let w = median_frequency_weights(&[900, 90, 10]).unwrap();
        let expected = [0.09 / 0.9, 0.09 / 0.09, 0.09 / 0.01];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{w:?}");
        }
        assert!((w[0] - 0.1).abs() < 1e-12 && (w[2] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn absent_classes_are_excluded() {
        let w = median_frequency_weights(&[800, 0, 100, 100]).unwrap();
        // Present freqs 0.8, 0.1, 0.1: median 0.1.
        assert_eq!(w[1], 0.0);
        assert!((w[0] - 0.125).abs() < 1e-12 && (w[2] - 1.0).abs() < 1e-12);
        assert_eq!(median_frequency_weights(&[0, 0]), Err(Error::AllZero));
    }

    #[test]
    fn focal_examples() {
        assert_eq!(focal_term(1.0, 1.0, 2.0).0, 0.0);
        let (v, _) = focal_term(0.5, 1.0, 2.0);
        assert!((v - 0.25 * core::f64::consts::LN_2).abs() < 1e-15);
        assert!((v - 0.17329).abs() < 1e-5);
    }

    #[test]
    fn simplex_is_enforced() {
        assert!(matches!(ClassProbabilities::new(2, vec![0.5, 0.6]), Err(Error::NotOnSimplex { cell: 0, .. })));
        assert!(ClassProbabilities::new(2, vec![0.5, 0.5, 0.25, 0.75]).is_ok());
        assert_eq!(ClassProbabilities::new(2, vec![0.5]), Err(Error::SpecMismatch));
    }

    #[test]
    fn degenerate_probabilities_are_clamped_and_flagged() {
        let probs = ClassProbabilities::new(2, vec![0.0, 1.0, 0.5, 0.5]).unwrap();
        let r = focal_loss(&probs, &[0, 0], &[1.0, 1.0], 2.0).unwrap();
        assert_eq!(r.degenerate_cells, 1);
        assert!(r.value.is_finite() && r.value > 27.0);
    }

    proptest! {
        #[test]
        fn gamma_zero_is_weighted_cross_entropy(p in 1e-6f64..1.0, w in 0.01f64..10.0) {
            let (v, g) = focal_term(p, w, 0.0);
            let ce = -w * p.ln();
            prop_assert!((v - ce).abs() <= 1e-12 * ce.abs().max(1e-300));
            prop_assert!((g + w / p).abs() <= 1e-12 * (w / p));
        }

        #[test]
        fn focal_is_non_negative(p in 1e-9f64..=1.0, gamma in 0.0f64..5.0) {
            prop_assert!(focal_term(p, 1.0, gamma).0 >= 0.0);
        }
    }
}
