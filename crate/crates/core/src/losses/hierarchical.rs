use super::{Aggregator, LossError, LossOutput};
use crate::losses::flat::log_sum_exp;
use crate::tree::{CogTree, NodeId};
use crate::types::ClassId;

/// Per-node values: leaves copy their class's entry, internal nodes
/// aggregate their children. Indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeValues(Vec<f64>);

impl NodeValues {
    pub fn get(&self, id: NodeId) -> f64 {
        self.0[id]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Every node set to `value`.
    pub fn constant(tree: &CogTree, value: f64) -> Self {
        NodeValues(vec![value; tree.nodes().len()])
    }
}

/// Bottom-up aggregation of `leaf_values` (one per class) over `tree`.
pub fn node_values(tree: &CogTree, leaf_values: &[f64], agg: Aggregator) -> NodeValues {
    let mut v = vec![0.0; tree.nodes().len()];
    fill_node_values(tree, leaf_values, agg, &mut v);
    NodeValues(v)
}

fn fill_node_values(tree: &CogTree, leaf_values: &[f64], agg: Aggregator, v: &mut [f64]) {
    // Children always have larger ids than their parent.
    for node in tree.nodes().iter().rev() {
        v[node.id] = match node.class {
            Some(c) => leaf_values[c],
            None => {
                let children = node.children.iter().map(|&c| v[c]);
                match agg {
                    Aggregator::Average => {
                        children.sum::<f64>() / node.children.len() as f64
                    }
                    Aggregator::Sum => children.sum(),
                    Aggregator::Max => children.fold(f64::NEG_INFINITY, f64::max),
                }
            }
        };
    }
}

/// Index of the child holding the largest value; the first (lowest id) on ties.
fn argmax_child(children: &[NodeId], v: &[f64]) -> NodeId {
    let mut best = children[0];
    for &c in &children[1..] {
        if v[c] > v[best] {
            best = c;
        }
    }
    best
}

/// Tree-based class-balanced loss: the mean over the ground-truth path of
/// the weighted softmax cross-entropy among each path node's siblings.
///
/// `node_weights` must come from [`node_values`] with the same aggregator.
/// A level with a single child contributes zero but still counts towards
/// the path length.
pub fn loss_tcb(
    tree: &CogTree,
    scores: &[f64],
    target: ClassId,
    node_weights: &NodeValues,
    agg: Aggregator,
) -> Result<LossOutput, LossError> {
    let path = tree
        .ground_truth_path(target)
        .map_err(|_| LossError::ClassNotInTree(target))?;
    let nodes = tree.nodes();
    let z = node_values(tree, scores, agg);
    let z = z.as_slice();
    let depth = (path.len() - 1) as f64;

    let mut loss = 0.0;
    let mut node_grad = vec![0.0; nodes.len()];
    let mut level: Vec<f64> = Vec::new();
    for pair in path.windows(2) {
        let (parent, truth) = (pair[0], pair[1]);
        let children = &nodes[parent].children;
        if children.len() == 1 {
            continue;
        }
        let w = node_weights.get(truth) / depth;
        level.clear();
        level.extend(children.iter().map(|&c| z[c]));
        let lse = log_sum_exp(&level);
        loss += w * (lse - z[truth]);
        for (&c, &zc) in children.iter().zip(&level) {
            node_grad[c] += w * (zc - lse).exp();
        }
        node_grad[truth] -= w;
    }

    // Push node gradients down to the leaves, parents before children.
    let mut grad = vec![0.0; scores.len()];
    for node in nodes {
        let g = node_grad[node.id];
        if g == 0.0 {
            continue;
        }
        if let Some(c) = node.class {
            grad[c] += g;
            continue;
        }
        match agg {
            Aggregator::Average => {
                let share = g / node.children.len() as f64;
                for &c in &node.children {
                    node_grad[c] += share;
                }
            }
            Aggregator::Sum => {
                for &c in &node.children {
                    node_grad[c] += g;
                }
            }
            Aggregator::Max => {
                node_grad[argmax_child(&node.children, z)] += g;
            }
        }
    }
    Ok(LossOutput { loss, grad })
}
