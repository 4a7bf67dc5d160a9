//! Training losses and their derivatives with respect to `Σ_i h(θ_{-i})`.
//!
//! With `x = Σh`, `S = S(θ)` and band `[(n−1)S, (n−α)S]`:
//!
//! * worst case: `ε·relu(x − (n−α)S)² + relu((n−1)S − x)²`
//! * expectation: `ε·relu(x − (n−1)S)² + relu((n−1)S − x)²`
//!
//! The constraint hinge has weight 1; the objective hinge is softened by `ε`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub epsilon: f64,
    /// Target worst-case ratio `α_target`; unused by the expectation loss.
    pub up_bound_target: f64,
}

impl LossWeights {
    pub fn new(epsilon: f64, up_bound_target: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        if !(up_bound_target > 0.0 && up_bound_target <= 1.0) {
            return Err(Error::config("alpha_target_init", format!("target ratio {up_bound_target} outside (0, 1]")));
        }
        Ok(LossWeights { epsilon, up_bound_target })
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn supervised_loss(h: f64, h_manual: f64) -> f64 {
    (h - h_manual).powi(2)
}

fn band_loss(sum_h: f64, lower: f64, upper: f64, eps: f64) -> f64 {
    eps * relu(sum_h - upper).powi(2) + relu(lower - sum_h).powi(2)
}

fn band_grad(sum_h: f64, lower: f64, upper: f64, eps: f64) -> f64 {
    2.0 * eps * relu(sum_h - upper) - 2.0 * relu(lower - sum_h)
}

pub fn worstcase_loss(sum_h: f64, s: f64, n: usize, w: &LossWeights) -> f64 {
    let nf = n as f64;
    band_loss(sum_h, (nf - 1.0) * s, (nf - w.up_bound_target) * s, w.epsilon)
}

/// `∂ worstcase_loss / ∂ sum_h`.
pub fn worstcase_loss_grad(sum_h: f64, s: f64, n: usize, w: &LossWeights) -> f64 {
    let nf = n as f64;
    band_grad(sum_h, (nf - 1.0) * s, (nf - w.up_bound_target) * s, w.epsilon)
}

pub fn expectation_loss(sum_h: f64, s: f64, n: usize, w: &LossWeights) -> f64 {
    let target = (n as f64 - 1.0) * s;
    band_loss(sum_h, target, target, w.epsilon)
}

/// `∂ expectation_loss / ∂ sum_h`.
pub fn expectation_loss_grad(sum_h: f64, s: f64, n: usize, w: &LossWeights) -> f64 {
    let target = (n as f64 - 1.0) * s;
    band_grad(sum_h, target, target, w.epsilon)
}

pub fn feed_weighted_loss(base: f64, weight: f64) -> f64 {
    base * weight
}

/// Indices of the smallest and largest entries (first occurrence of each).
pub fn extremes(values: &[f64]) -> Result<(usize, usize)> {
    if values.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut lo = 0;
    let mut hi = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[lo] {
            lo = i;
        }
        if *v > values[hi] {
            hi = i;
        }
    }
    Ok((lo, hi))
}

/// `min − max` of the batch's ratio statistics; minimizing it widens the spread.
pub fn adversary_loss(ratio_stats: &[f64]) -> Result<f64> {
    let (lo, hi) = extremes(ratio_stats)?;
    Ok(ratio_stats[lo] - ratio_stats[hi])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn wc(alpha: f64) -> LossWeights {
        LossWeights::new(0.01, alpha).unwrap()
    }

    fn ex() -> LossWeights {
        LossWeights::new(1e-4, 1.0).unwrap()
    }

    #[test]
    fn supervised_examples() {
        assert_eq!(supervised_loss(0.7, 0.7), 0.0);
        assert_eq!(supervised_loss(1.0, 0.0), 1.0);
        assert_abs_diff_eq!(supervised_loss(0.5, 0.2), 0.09, epsilon = 1e-15);
    }

    #[test]
    fn worstcase_examples() {
        // 0.01 · relu(2.5 − 2.4)² + relu(2 − 2.5)²
        assert_abs_diff_eq!(worstcase_loss(2.5, 1.0, 3, &wc(0.6)), 1e-4, epsilon = 1e-15);
        assert_eq!(worstcase_loss(2.2, 1.0, 3, &wc(0.6)), 0.0);
        assert_eq!(worstcase_loss(2.0, 1.0, 3, &wc(0.6)), 0.0);
        assert_abs_diff_eq!(worstcase_loss(1.5, 1.0, 3, &wc(0.6)), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn expectation_examples() {
        assert_eq!(expectation_loss(3.2, 1.6, 3, &ex()), 0.0);
        assert_abs_diff_eq!(expectation_loss(3.3, 1.6, 3, &ex()), 1e-6, epsilon = 1e-15);
        assert_abs_diff_eq!(expectation_loss(1.9, 1.0, 3, &ex()), 0.01, epsilon = 1e-15);
    }

    #[test]
    fn feed_examples() {
        assert_eq!(feed_weighted_loss(0.37, 1.0), 0.37);
        assert_abs_diff_eq!(feed_weighted_loss(0.01, 3.989422804014327), 0.0399, epsilon = 1e-4);
        assert_eq!(feed_weighted_loss(0.5, 0.0), 0.0);
    }

    #[test]
    fn adversary_examples() {
        assert_abs_diff_eq!(adversary_loss(&[2.1, 2.4, 1.95]).unwrap(), -0.45, epsilon = 1e-12);
        assert_eq!(adversary_loss(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(adversary_loss(&[2.7]).unwrap(), 0.0);
        assert!(matches!(adversary_loss(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn weights_validated() {
        assert!(LossWeights::new(0.0, 0.5).is_err());
        assert!(LossWeights::new(0.01, 0.0).is_err());
        assert!(LossWeights::new(0.01, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn penalty_losses_are_nonnegative_and_zero_only_in_band(
            sum_h in 0.0f64..40.0, s in 1.0f64..10.0, n in 2usize..10, alpha in 0.05f64..1.0,
        ) {
            let w = wc(alpha);
            let nf = n as f64;
            let l = worstcase_loss(sum_h, s, n, &w);
            prop_assert!(l >= 0.0);
            let in_band = sum_h >= (nf - 1.0) * s && sum_h <= (nf - alpha) * s;
            prop_assert_eq!(l == 0.0, in_band);
            let e = expectation_loss(sum_h, s, n, &ex());
            prop_assert!(e >= 0.0);
            prop_assert_eq!(e == 0.0, sum_h == (nf - 1.0) * s);
        }

        #[test]
        fn analytic_derivatives_match_central_differences(
            sum_h in 0.0f64..40.0, s in 1.0f64..10.0, n in 2usize..10, alpha in 0.05f64..1.0,
        ) {
            let w = wc(alpha);
            let h = 1e-6;
            let fd = (worstcase_loss(sum_h + h, s, n, &w) - worstcase_loss(sum_h - h, s, n, &w)) / (2.0 * h);
            prop_assert!((fd - worstcase_loss_grad(sum_h, s, n, &w)).abs() < 1e-4);
            let fd = (expectation_loss(sum_h + h, s, n, &ex()) - expectation_loss(sum_h - h, s, n, &ex())) / (2.0 * h);
            prop_assert!((fd - expectation_loss_grad(sum_h, s, n, &ex())).abs() < 1e-4);
        }

        #[test]
        fn adversary_loss_nonpositive_and_order_free(mut v in prop::collection::vec(-5.0f64..5.0, 1..40)) {
            let a = adversary_loss(&v).unwrap();
            prop_assert!(a <= 0.0);
            v.reverse();
            prop_assert_eq!(adversary_loss(&v).unwrap(), a);
            v.sort_by(f64::total_cmp);
            prop_assert_eq!(adversary_loss(&v).unwrap(), a);
        }
    }
}
