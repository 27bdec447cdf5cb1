//! Per-sample losses over raw class scores, each returning its exact
//! gradient with respect to those scores.
//!
//! Scores are treated as logits: every loss applies its own softmax, with
//! the maximum subtracted first. Gradients are derived by hand and checked
//! against [`finite_diff_grad`] in the tests.

mod flat;
mod hierarchical;

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::CogTree;
use crate::types::ClassId;

pub use flat::{log_sum_exp, loss_cb, loss_ce, loss_focal, softmax};
pub use hierarchical::{loss_tcb, node_values, NodeValues};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("class {class} has zero training samples; its balance weight is undefined")]
    ZeroCount { class: ClassId },
    #[error("beta must lie in [0, 1), got {0}")]
    InvalidBeta(f64),
    #[error("gamma must be non-negative, got {0}")]
    InvalidGamma(f64),
    #[error("lambda must be non-negative, got {0}")]
    InvalidLambda(f64),
    #[error("{0} loss needs a tree")]
    MissingTree(LossKind),
    #[error("class {0} is not a leaf of the tree")]
    ClassNotInTree(ClassId),
    #[error("tree has {tree} classes but the counts cover {counts}")]
    TreeSizeMismatch { tree: usize, counts: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Derivative of `loss` with respect to each class score.
    pub grad: Vec<f64>,
}

/// Per-class balance weights `(1 − β) / (1 − β^n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    w: Vec<f64>,
    beta: f64,
}

impl ClassWeights {
    pub fn uniform(num_classes: usize) -> Self {
        ClassWeights {
            w: vec![1.0; num_classes],
            beta: 0.0,
        }
    }

    pub fn weight(&self, class: ClassId) -> f64 {
        self.w[class]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Effective-number class weights. Fails on a zero count, where the weight
/// would divide by zero; see [`class_balanced_weights_floored`].
pub fn class_balanced_weights(counts: &[u64], beta: f64) -> Result<ClassWeights, LossError> {
    if !(0.0..1.0).contains(&beta) {
        return Err(LossError::InvalidBeta(beta));
    }
    let ln_beta = beta.ln();
    let w = counts
        .iter()
        .enumerate()
        .map(|(class, &n)| match n {
            0 => Err(LossError::ZeroCount { class }),
            1 => Ok(1.0),
            _ if beta == 0.0 => Ok(1.0),
            // 1 − β^n computed as −expm1(n ln β) to keep precision for β near 1.
            _ => Ok((1.0 - beta) / -(n as f64 * ln_beta).exp_m1()),
        })
        .collect::<Result<_, _>>()?;
    Ok(ClassWeights { w, beta })
}

/// Like [`class_balanced_weights`], but zero counts are raised to 1 with a warning.
pub fn class_balanced_weights_floored(counts: &[u64], beta: f64) -> Result<ClassWeights, LossError> {
    let floored: Vec<u64> = counts
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            if n == 0 {
                warn!("class {i} has no training samples; flooring its count at 1");
                1
            } else {
                n
            }
        })
        .collect();
    class_balanced_weights(&floored, beta)
}

/// How internal tree nodes combine their children's scores and weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Average,
    Max,
    Sum,
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Average => "average",
            Aggregator::Max => "max",
            Aggregator::Sum => "sum",
        })
    }
}

impl FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "average" | "avg" | "mean" => Ok(Aggregator::Average),
            "max" => Ok(Aggregator::Max),
            "sum" => Ok(Aggregator::Sum),
            other => Err(format!("unknown aggregator {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Softmax cross-entropy.
    Ce,
    /// Class-balanced cross-entropy.
    Cb,
    Focal,
    /// Tree loss with unit weights.
    Tce,
    /// Tree loss with class-balanced weights.
    Tcb,
    /// `CB + λ·TCB`.
    Cogtree,
}

impl LossKind {
    pub fn needs_tree(self) -> bool {
        matches!(self, LossKind::Tce | LossKind::Tcb | LossKind::Cogtree)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Ce => "ce",
            LossKind::Cb => "cb",
            LossKind::Focal => "focal",
            LossKind::Tce => "tce",
            LossKind::Tcb => "tcb",
            LossKind::Cogtree => "cogtree",
        })
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ce" => Ok(LossKind::Ce),
            "cb" => Ok(LossKind::Cb),
            "focal" => Ok(LossKind::Focal),
            "tce" => Ok(LossKind::Tce),
            "tcb" => Ok(LossKind::Tcb),
            "cogtree" => Ok(LossKind::Cogtree),
            other => Err(format!("unknown loss {other:?}")),
        }
    }
}

/// Which loss to train with and its hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    pub aggregator: Aggregator,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            kind: LossKind::Ce,
            lambda: 1.0,
            beta: 0.999,
            gamma: 2.0,
            aggregator: Aggregator::Average,
        }
    }
}

impl LossSpec {
    pub fn of(kind: LossKind) -> Self {
        LossSpec {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(LossError::InvalidBeta(self.beta));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(LossError::InvalidGamma(self.gamma));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(LossError::InvalidLambda(self.lambda));
        }
        Ok(())
    }
}

/// `L_CB + λ·L_TCB` for one sample. Exactly affine in `λ`.
pub fn loss_cogtree(
    tree: &CogTree,
    scores: &[f64],
    target: ClassId,
    weights: &ClassWeights,
    node_weights: &NodeValues,
    lambda: f64,
    agg: crate::losses::Aggregator,
) -> Result<LossOutput, LossError> {
    let cb = loss_cb(scores, target, weights);
    let tcb = loss_tcb(tree, scores, target, node_weights, agg)?;
    Ok(LossOutput {
        loss: cb.loss + lambda * tcb.loss,
        grad: cb
            .grad
            .iter()
            .zip(&tcb.grad)
            .map(|(a, b)| a + lambda * b)
            .collect(),
    })
}

/// A [`LossSpec`] bound to its class counts and tree, ready to evaluate.
///
/// Class weights and aggregated node weights are computed once here.
#[derive(Debug, Clone)]
pub struct Objective<'t> {
    spec: LossSpec,
    tree: Option<&'t CogTree>,
    class_weights: ClassWeights,
    node_weights: Option<NodeValues>,
}

impl<'t> Objective<'t> {
    /// `counts` are training sample counts; zero counts are floored at 1.
    pub fn new(
        spec: LossSpec,
        tree: Option<&'t CogTree>,
        counts: &[u64],
    ) -> Result<Self, LossError> {
        spec.validate()?;
        let tree = if spec.kind.needs_tree() {
            let t = tree.ok_or(LossError::MissingTree(spec.kind))?;
            if t.num_classes() != counts.len() {
                return Err(LossError::TreeSizeMismatch {
                    tree: t.num_classes(),
                    counts: counts.len(),
                });
            }
            Some(t)
        } else {
            None
        };
        let class_weights = match spec.kind {
            LossKind::Cb | LossKind::Tcb | LossKind::Cogtree => {
                class_balanced_weights_floored(counts, spec.beta)?
            }
            _ => ClassWeights::uniform(counts.len()),
        };
        let node_weights = tree.map(|t| match spec.kind {
            LossKind::Tce => NodeValues::constant(t, 1.0),
            _ => node_values(t, class_weights.as_slice(), spec.aggregator),
        });
        Ok(Objective {
            spec,
            tree,
            class_weights,
            node_weights,
        })
    }

    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    pub fn class_weights(&self) -> &ClassWeights {
        &self.class_weights
    }

    pub fn eval(&self, scores: &[f64], target: ClassId) -> Result<LossOutput, LossError> {
        let agg = self.spec.aggregator;
        match self.spec.kind {
            LossKind::Ce => Ok(loss_ce(scores, target)),
            LossKind::Cb => Ok(loss_cb(scores, target, &self.class_weights)),
            LossKind::Focal => Ok(loss_focal(scores, target, self.spec.gamma)),
            LossKind::Tce | LossKind::Tcb => loss_tcb(
                self.tree.expect("checked in new"),
                scores,
                target,
                self.node_weights.as_ref().expect("set with tree"),
                agg,
            ),
            LossKind::Cogtree => loss_cogtree(
                self.tree.expect("checked in new"),
                scores,
                target,
                &self.class_weights,
                self.node_weights.as_ref().expect("set with tree"),
                self.spec.lambda,
                agg,
            ),
        }
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            let orig = probe[j];
            probe[j] = orig + eps;
            let up = f(&probe);
            probe[j] = orig - eps;
            let down = f(&probe);
            probe[j] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_cogtree, TreeVariant};
    use crate::types::{LabelSpace, PredictionLog};
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_beta_gives_unit_weights() {
        let w = class_balanced_weights(&[1, 7, 1000, 3], 0.0).unwrap();
        assert!(w.as_slice().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn single_sample_class_has_unit_weight() {
        for beta in [0.0, 0.5, 0.9, 0.999, 0.999_999] {
            assert_eq!(class_balanced_weights(&[1], beta).unwrap().weight(0), 1.0);
        }
    }

    #[test]
    fn weights_decrease_with_count() {
        let counts: Vec<u64> = (1..200).collect();
        let w = class_balanced_weights(&counts, 0.99).unwrap();
        assert!(w.as_slice().windows(2).all(|p| p[1] <= p[0]));
        assert!(w.as_slice().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn zero_count_is_rejected_or_floored() {
        assert_eq!(
            class_balanced_weights(&[4, 0], 0.9),
            Err(LossError::ZeroCount { class: 1 })
        );
        let w = class_balanced_weights_floored(&[4, 0], 0.9).unwrap();
        assert_eq!(w.weight(1), 1.0);
    }

    #[test]
    fn beta_must_be_below_one() {
        assert_eq!(
            class_balanced_weights(&[4], 1.0),
            Err(LossError::InvalidBeta(1.0))
        );
        assert!(class_balanced_weights(&[4], -0.1).is_err());
    }

    #[test]
    fn finite_diff_of_constant_and_linear() {
        let g = finite_diff_grad(|_| 3.0, &[1.0, 2.0], 1e-6);
        assert_eq!(g, vec![0.0, 0.0]);
        let c = [2.0, -1.5, 0.25];
        let g = finite_diff_grad(|p| p.iter().zip(&c).map(|(a, b)| a * b).sum(), &[0.1, 0.2, 0.3], 1e-4);
        for (a, b) in g.iter().zip(&c) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
    }

    fn small_tree() -> (LabelSpace, CogTree) {
        let space = LabelSpace::numbered(vec![100, 5, 5, 100, 5]).unwrap();
        let rows = vec![(0, 0), (1, 0), (2, 0), (3, 3), (4, 3)];
        let tree =
            build_cogtree(&PredictionLog::new(rows, 5).unwrap(), &space, TreeVariant::Standard)
                .unwrap();
        (space, tree)
    }

    #[test]
    fn cogtree_with_zero_lambda_is_cb() {
        let (space, tree) = small_tree();
        let spec = LossSpec {
            kind: LossKind::Cogtree,
            lambda: 0.0,
            ..Default::default()
        };
        let obj = Objective::new(spec, Some(&tree), space.counts()).unwrap();
        let s = [0.1, -0.2, 0.4, 1.0, -1.0];
        let cb = loss_cb(&s, 2, obj.class_weights());
        let got = obj.eval(&s, 2).unwrap();
        assert_eq!(got.loss, cb.loss);
        assert_eq!(got.grad, cb.grad);
    }

    #[test]
    fn tree_losses_need_a_tree() {
        for kind in [LossKind::Tce, LossKind::Tcb, LossKind::Cogtree] {
            assert!(matches!(
                Objective::new(LossSpec::of(kind), None, &[1, 2]),
                Err(LossError::MissingTree(_))
            ));
        }
        assert!(Objective::new(LossSpec::of(LossKind::Focal), None, &[1, 2]).is_ok());
    }

    #[test]
    fn tce_uses_unit_weights() {
        let (space, tree) = small_tree();
        let spec = LossSpec {
            aggregator: Aggregator::Sum,
            ..LossSpec::of(LossKind::Tce)
        };
        let obj = Objective::new(spec, Some(&tree), space.counts()).unwrap();
        let unit = NodeValues::constant(&tree, 1.0);
        let s = [0.3, 0.1, -0.5, 0.2, 0.9];
        assert_eq!(
            obj.eval(&s, 4).unwrap(),
            loss_tcb(&tree, &s, 4, &unit, Aggregator::Sum).unwrap()
        );
    }

    #[test]
    fn names_round_trip() {
        for k in [
            LossKind::Ce,
            LossKind::Cb,
            LossKind::Focal,
            LossKind::Tce,
            LossKind::Tcb,
            LossKind::Cogtree,
        ] {
            assert_eq!(k.to_string().parse::<LossKind>(), Ok(k));
        }
        for a in [Aggregator::Average, Aggregator::Max, Aggregator::Sum] {
            assert_eq!(a.to_string().parse::<Aggregator>(), Ok(a));
        }
    }
}
