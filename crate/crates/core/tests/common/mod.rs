#![allow(dead_code)]

use cogtree::losses::{finite_diff_grad, Aggregator, LossKind, LossSpec, Objective};
use cogtree::tree::{build_cogtree, CogTree, NodeId, TreeVariant};
use cogtree::{LabelSpace, PredictionLog};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Zipf-like training counts in random class order.
pub fn zipf_counts<R: Rng>(rng: &mut R, d: usize) -> Vec<u64> {
    let top: f64 = rng.random_range(100.0..5000.0);
    let s: f64 = rng.random_range(0.5..2.0);
    let mut counts: Vec<u64> = (1..=d)
        .map(|r| ((top / (r as f64).powf(s)).round() as u64).max(1))
        .collect();
    counts.shuffle(rng);
    counts
}

pub fn normal_vec<R: Rng>(rng: &mut R, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            scale * x
        })
        .collect()
}

/// Predictions from a noisy biased model over random hidden groups: each
/// class is predicted as itself, as its group's most frequent class, or at
/// random.
pub fn biased_log<R: Rng>(rng: &mut R, counts: &[u64]) -> PredictionLog {
    let d = counts.len();
    let groups = rng.random_range(1..=d.div_ceil(2));
    let group_of: Vec<usize> = (0..d).map(|_| rng.random_range(0..groups)).collect();
    let head_of: Vec<usize> = (0..d)
        .map(|c| {
            (0..d)
                .filter(|&o| group_of[o] == group_of[c])
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .unwrap()
        })
        .collect();
    let p_self: f64 = rng.random_range(0.0..0.6);
    let p_noise: f64 = rng.random_range(0.0..0.2);
    let mut rows = Vec::new();
    for (c, &head) in head_of.iter().enumerate() {
        for _ in 0..rng.random_range(1..20) {
            let u: f64 = rng.random();
            let p = if u < p_noise {
                rng.random_range(0..d)
            } else if u < p_noise + p_self {
                c
            } else {
                head
            };
            rows.push((c, p));
        }
    }
    PredictionLog::new(rows, d).unwrap()
}

/// A standard tree over `d` classes from a random biased log.
pub fn random_standard_tree<R: Rng>(rng: &mut R, d: usize) -> (CogTree, Vec<u64>) {
    loop {
        let counts = zipf_counts(rng, d);
        let space = LabelSpace::numbered(counts.clone()).unwrap();
        let log = biased_log(rng, &counts);
        if let Ok(tree) = build_cogtree(&log, &space, TreeVariant::Standard) {
            return (tree, counts);
        }
    }
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn oracle_weight(n: u64, beta: f64) -> f64 {
    if beta == 0.0 {
        return 1.0;
    }
    (1.0 - beta) / (1.0 - beta.powf(n as f64))
}

fn softmax_prob(z: &[f64], i: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = z.iter().map(|v| (v - m).exp()).sum();
    (z[i] - m).exp() / total
}

pub fn oracle_cb(scores: &[f64], target: usize, w: f64) -> f64 {
    -w * softmax_prob(scores, target).ln()
}

pub fn oracle_focal(scores: &[f64], target: usize, gamma: f64) -> f64 {
    let p = softmax_prob(scores, target);
    -(1.0 - p).powf(gamma) * p.ln()
}

/// Value of `id` by recursive aggregation of leaf values.
pub fn oracle_value(tree: &CogTree, id: NodeId, leaf: &[f64], agg: Aggregator) -> f64 {
    let node = tree.node(id);
    if node.children.is_empty() {
        return leaf[node.class.expect("leaves carry a class")];
    }
    let vals: Vec<f64> = node.children.iter().map(|&c| oracle_value(tree, c, leaf, agg)).collect();
    match agg {
        Aggregator::Average => vals.iter().sum::<f64>() / vals.len() as f64,
        Aggregator::Sum => vals.iter().sum(),
        Aggregator::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    }
}

fn contains(tree: &CogTree, id: NodeId, class: usize) -> bool {
    let node = tree.node(id);
    if node.children.is_empty() {
        return node.class == Some(class);
    }
    node.children.iter().any(|&c| contains(tree, c, class))
}

/// Mean over the levels of the root-to-leaf path of the weighted negative
/// log softmax among siblings. `leaf_w = None` means unit weights.
pub fn oracle_tcb(
    tree: &CogTree,
    scores: &[f64],
    target: usize,
    leaf_w: Option<&[f64]>,
    agg: Aggregator,
) -> f64 {
    let mut at = 0;
    let mut total = 0.0;
    let mut levels = 0;
    while !tree.node(at).children.is_empty() {
        let children = &tree.node(at).children;
        let pos = children.iter().position(|&c| contains(tree, c, target)).unwrap();
        let z: Vec<f64> = children.iter().map(|&c| oracle_value(tree, c, scores, agg)).collect();
        let w = leaf_w.map_or(1.0, |lw| oracle_value(tree, children[pos], lw, agg));
        total += -w * softmax_prob(&z, pos).ln();
        levels += 1;
        at = children[pos];
    }
    total / levels as f64
}

/// Smallest gap between the two largest child values at any internal node.
pub fn min_max_gap(tree: &CogTree, scores: &[f64]) -> f64 {
    let mut gap = f64::INFINITY;
    for node in tree.nodes() {
        if node.children.len() < 2 {
            continue;
        }
        let mut v: Vec<f64> = node
            .children
            .iter()
            .map(|&c| oracle_value(tree, c, scores, Aggregator::Max))
            .collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        gap = gap.min(v[0] - v[1]);
    }
    gap
}

/// Outcome of checking one random instance of a loss.
pub struct GradCheck {
    /// |analytic − oracle| / max(1, |oracle|) on the loss value.
    pub value_err: f64,
    /// Norm-wise relative error of the analytic gradient against central
    /// differences.
    pub grad_err: f64,
}

/// One random instance: a standard tree over 10–50 classes, Zipf counts,
/// N(0, 1) scores and a random target. MAX instances closer than `1e-4` to
/// a tie are redrawn.
pub fn check_random_instance<R: Rng>(rng: &mut R, kind: LossKind, agg: Aggregator) -> GradCheck {
    let d = rng.random_range(10..=50);
    let (tree, counts) = random_standard_tree(rng, d);
    let spec = LossSpec {
        kind,
        aggregator: agg,
        ..LossSpec::default()
    };
    let objective = Objective::new(spec, Some(&tree), &counts).unwrap();
    let mut scores = normal_vec(rng, d, 1.0);
    while agg == Aggregator::Max && kind.needs_tree() && min_max_gap(&tree, &scores) < 1e-4 {
        scores = normal_vec(rng, d, 1.0);
    }
    let target = rng.random_range(0..d);

    let w: Vec<f64> = counts.iter().map(|&n| oracle_weight(n, spec.beta)).collect();
    let expected = match kind {
        LossKind::Ce => oracle_cb(&scores, target, 1.0),
        LossKind::Cb => oracle_cb(&scores, target, w[target]),
        LossKind::Focal => oracle_focal(&scores, target, spec.gamma),
        LossKind::Tce => oracle_tcb(&tree, &scores, target, None, agg),
        LossKind::Tcb => oracle_tcb(&tree, &scores, target, Some(&w), agg),
        LossKind::Cogtree => {
            oracle_cb(&scores, target, w[target])
                + spec.lambda * oracle_tcb(&tree, &scores, target, Some(&w), agg)
        }
    };
    let out = objective.eval(&scores, target).unwrap();
    let numeric = finite_diff_grad(|x| objective.eval(x, target).unwrap().loss, &scores, 1e-6);
    GradCheck {
        value_err: (out.loss - expected).abs() / expected.abs().max(1.0),
        grad_err: rel_err(&out.grad, &numeric),
    }
}
