use super::{ClassWeights, LossOutput};
use crate::types::ClassId;

/// `log Σ exp(x)` with the maximum subtracted first.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Weighted softmax cross-entropy on one sample.
pub fn loss_cb(scores: &[f64], target: ClassId, weights: &ClassWeights) -> LossOutput {
    weighted_ce(scores, target, weights.weight(target))
}

/// Plain softmax cross-entropy.
pub fn loss_ce(scores: &[f64], target: ClassId) -> LossOutput {
    weighted_ce(scores, target, 1.0)
}

pub(crate) fn weighted_ce(scores: &[f64], target: ClassId, w: f64) -> LossOutput {
    let lse = log_sum_exp(scores);
    let loss = w * (lse - scores[target]);
    let mut grad: Vec<f64> = scores.iter().map(|&s| w * (s - lse).exp()).collect();
    grad[target] -= w;
    LossOutput { loss, grad }
}

/// Focal loss `-(1 - p_t)^γ log p_t` with `p_t` the target's softmax mass.
pub fn loss_focal(scores: &[f64], target: ClassId, gamma: f64) -> LossOutput {
    let lse = log_sum_exp(scores);
    let log_pt = scores[target] - lse;
    let pt = log_pt.exp();
    // 1 - p_t without cancellation when p_t is close to 1.
    let q = -log_pt.exp_m1();
    let focal = q.powf(gamma);
    let loss = -focal * log_pt;

    // dL/dlogit_j = c · (δ_tj − p_j) with c = p_t · dL/dp_t
    //            = γ q^(γ−1) p_t log p_t − q^γ.
    let first = if gamma == 0.0 || q == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * pt * log_pt
    };
    let c = first - focal;
    let mut grad: Vec<f64> = scores.iter().map(|&s| -c * (s - lse).exp()).collect();
    grad[target] += c;
    LossOutput { loss, grad }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::class_balanced_weights;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_scores_give_ln_d() {
        let w = class_balanced_weights(&[1, 1, 1, 1], 0.0).unwrap();
        let out = loss_cb(&[0.3; 4], 2, &w);
        assert_abs_diff_eq!(out.loss, 4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn two_class_closed_form() {
        let out = loss_ce(&[1.0, 0.0], 0);
        // ln(1 + e^-1)
        assert_abs_diff_eq!(out.loss, 0.313_261_687_518_222_8, epsilon = 1e-15);
    }

    #[test]
    fn weight_scales_loss_and_grad() {
        let s = [0.2, -1.0, 0.7];
        let full = weighted_ce(&s, 1, 1.0);
        let half = weighted_ce(&s, 1, 0.5);
        assert_abs_diff_eq!(half.loss, 0.5 * full.loss, epsilon = 1e-15);
        for (h, f) in half.grad.iter().zip(&full.grad) {
            assert_abs_diff_eq!(*h, 0.5 * f, epsilon = 1e-15);
        }
    }

    #[test]
    fn ce_grad_sums_to_zero() {
        let out = loss_ce(&[3.0, -2.0, 0.5, 0.1], 3);
        assert_abs_diff_eq!(out.grad.iter().sum::<f64>(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(loss_ce(&[0.0, 0.0], 1).loss, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn ce_is_cb_with_zero_beta() {
        let w = class_balanced_weights(&[3, 50, 7], 0.0).unwrap();
        let s = [0.4, 1.5, -0.3];
        assert_eq!(loss_ce(&s, 0), loss_cb(&s, 0, &w));
    }

    #[test]
    fn extreme_scores_stay_finite() {
        let out = loss_ce(&[1e300, -1e300, 0.0], 1);
        assert!(out.loss.is_finite() && out.loss > 0.0);
        assert!(out.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn focal_zero_gamma_is_ce() {
        let s = [0.2, -0.4, 1.1, 0.0];
        let f = loss_focal(&s, 2, 0.0);
        let c = loss_ce(&s, 2);
        assert_abs_diff_eq!(f.loss, c.loss, epsilon = 1e-15);
        for (a, b) in f.grad.iter().zip(&c.grad) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn focal_vanishes_faster_than_ce_when_confident() {
        let s = [6.0, 0.0, 0.0];
        let f = loss_focal(&s, 0, 2.0);
        let c = loss_ce(&s, 0);
        assert!(f.loss < c.loss * 1e-3);
        assert!(f.loss >= 0.0);
        let s = [40.0, 0.0, 0.0];
        let f = loss_focal(&s, 0, 0.5);
        assert!(f.grad.iter().all(|g| g.is_finite()));
    }
}
