//! The concept tree and the algorithms that induce it.
//!
//! A standard tree has four layers:
//!
//! ```text
//! y0  root
//! y1  one concept_virtual node per concept
//! y2  concept_leaf (the concept class itself) + fine_virtual (if any fine classes)
//! y3  fine_leaf nodes under the fine_virtual
//! ```
//!
//! Node ids are assigned breadth-first, so every child id is larger than its
//! parent's. Aggregation code relies on that ordering to walk the tree
//! bottom-up by iterating ids in reverse.

mod builder;
mod export;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::ClassId;

pub use builder::{
    aggregate_tree, assemble_variant, build_cogtree, build_subtrees, cluster_tree,
    collect_confusion, induce_concepts, BuildError, BuildNote, ConceptMap, ConfusionStats,
};
pub use export::{to_dot, TreeDocument, TREE_FORMAT_VERSION};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Root,
    ConceptVirtual,
    ConceptLeaf,
    FineVirtual,
    FineLeaf,
}

impl NodeKind {
    pub fn is_leaf(self) -> bool {
        matches!(self, NodeKind::ConceptLeaf | NodeKind::FineLeaf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeVariant {
    /// Root, concept, coarse/fine and fine-grained layers.
    Standard,
    /// Concept leaf and fine leaves are siblings under each concept node.
    FuseLayer,
    /// Concept classes hang off the root; all fine classes share one subtree.
    FuseSubtree,
    /// Every class is a child of the root.
    Flat,
    /// Standard shape, but concepts come from clustering class vectors.
    Cluster,
}

impl TreeVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            TreeVariant::Standard => "standard",
            TreeVariant::FuseLayer => "fuse_layer",
            TreeVariant::FuseSubtree => "fuse_subtree",
            TreeVariant::Flat => "flat",
            TreeVariant::Cluster => "cluster",
        }
    }
}

impl fmt::Display for TreeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TreeVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "standard" => Ok(TreeVariant::Standard),
            "fuse_layer" => Ok(TreeVariant::FuseLayer),
            "fuse_subtree" => Ok(TreeVariant::FuseSubtree),
            "flat" => Ok(TreeVariant::Flat),
            "cluster" => Ok(TreeVariant::Cluster),
            other => Err(format!("unknown tree variant {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub layer: u8,
    pub class: Option<ClassId>,
    pub children: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("class {0} is not a leaf of the tree")]
    UnknownClass(ClassId),
    #[error("tree invariant violated: {0}")]
    Invariant(String),
}

fn violation<T>(msg: impl Into<String>) -> Result<T, TreeError> {
    Err(TreeError::Invariant(msg.into()))
}

/// Shape description used while assembling a tree, before ids are assigned.
#[derive(Debug, Clone)]
pub(crate) enum Shape {
    Leaf(NodeKind, ClassId),
    Internal(NodeKind, Vec<Shape>),
}

/// A rooted label hierarchy whose leaves partition the classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CogTree {
    variant: TreeVariant,
    labels: Vec<String>,
    nodes: Vec<Node>,
    parent: Vec<Option<NodeId>>,
    leaf_of: Vec<NodeId>,
    built_from: String,
}

impl CogTree {
    /// Validates `nodes` against the general and variant-specific invariants.
    pub fn from_nodes(
        variant: TreeVariant,
        labels: Vec<String>,
        nodes: Vec<Node>,
        built_from: String,
    ) -> Result<Self, TreeError> {
        let num_classes = labels.len();
        if nodes.is_empty() {
            return violation("tree has no nodes");
        }
        let mut parent = vec![None; nodes.len()];
        let mut leaf_of = vec![usize::MAX; num_classes];
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return violation(format!("node at position {i} has id {}", node.id));
            }
            if (node.kind == NodeKind::Root) != (i == 0) {
                return violation("the root must be node 0 and unique");
            }
            if node.kind.is_leaf() {
                let Some(class) = node.class else {
                    return violation(format!("leaf {i} carries no class"));
                };
                if !node.children.is_empty() {
                    return violation(format!("leaf {i} has children"));
                }
                if class >= num_classes {
                    return violation(format!("leaf {i} has out-of-range class {class}"));
                }
                if leaf_of[class] != usize::MAX {
                    return violation(format!("class {class} appears in more than one leaf"));
                }
                leaf_of[class] = i;
            } else {
                if node.class.is_some() {
                    return violation(format!("internal node {i} carries a class"));
                }
                if node.children.is_empty() {
                    return violation(format!("internal node {i} has no children"));
                }
            }
            for &c in &node.children {
                if c <= i || c >= nodes.len() {
                    return violation(format!("node {i} has invalid child id {c}"));
                }
                if parent[c].replace(i).is_some() {
                    return violation(format!("node {c} has more than one parent"));
                }
            }
        }
        if nodes[0].layer != 0 {
            return violation("root must sit at layer 0");
        }
        for (i, node) in nodes.iter().enumerate().skip(1) {
            let Some(p) = parent[i] else {
                return violation(format!("node {i} is unreachable"));
            };
            if node.layer != nodes[p].layer + 1 {
                return violation(format!("node {i} layer {} is not its depth", node.layer));
            }
        }
        if let Some(c) = leaf_of.iter().position(|&l| l == usize::MAX) {
            return violation(format!("class {c} has no leaf"));
        }
        let tree = Self {
            variant,
            labels,
            nodes,
            parent,
            leaf_of,
            built_from,
        };
        tree.check_shape()?;
        Ok(tree)
    }

    fn check_shape(&self) -> Result<(), TreeError> {
        let kinds = |ids: &[NodeId]| ids.iter().map(|&c| self.nodes[c].kind).collect::<Vec<_>>();
        let root = &self.nodes[0];
        match self.variant {
            TreeVariant::Standard | TreeVariant::Cluster => {
                for &y1 in &root.children {
                    let node = &self.nodes[y1];
                    if node.kind != NodeKind::ConceptVirtual {
                        return violation(format!("root child {y1} is not a concept node"));
                    }
                    match kinds(&node.children).as_slice() {
                        [NodeKind::ConceptLeaf] => {}
                        [NodeKind::ConceptLeaf, NodeKind::FineVirtual] => {
                            let fv = &self.nodes[node.children[1]];
                            if fv.children.iter().any(|&c| self.nodes[c].kind != NodeKind::FineLeaf)
                            {
                                return violation(format!("fine node {} has non-leaf children", fv.id));
                            }
                        }
                        _ => {
                            return violation(format!(
                                "concept node {y1} must split into a concept leaf and an optional fine node"
                            ))
                        }
                    }
                }
            }
            TreeVariant::FuseLayer => {
                for &y1 in &root.children {
                    let node = &self.nodes[y1];
                    let k = kinds(&node.children);
                    if node.kind != NodeKind::ConceptVirtual
                        || k[0] != NodeKind::ConceptLeaf
                        || k[1..].iter().any(|&x| x != NodeKind::FineLeaf)
                    {
                        return violation(format!("fused concept node {y1} is malformed"));
                    }
                }
            }
            TreeVariant::FuseSubtree => {
                let k = kinds(&root.children);
                let concepts = k.iter().take_while(|&&x| x == NodeKind::ConceptLeaf).count();
                let rest = &root.children[concepts..];
                let ok = match rest {
                    [] => true,
                    [fv] => {
                        let fv = &self.nodes[*fv];
                        fv.kind == NodeKind::FineVirtual
                            && fv.children.iter().all(|&c| self.nodes[c].kind == NodeKind::FineLeaf)
                    }
                    _ => false,
                };
                if !ok || concepts == 0 {
                    return violation("fuse-subtree root must hold concept leaves then one fine node");
                }
            }
            TreeVariant::Flat => {
                if kinds(&root.children).iter().any(|&k| k != NodeKind::ConceptLeaf) {
                    return violation("flat tree root may only hold leaves");
                }
            }
        }
        Ok(())
    }

    pub(crate) fn assemble(
        variant: TreeVariant,
        labels: Vec<String>,
        root_children: Vec<Shape>,
        built_from: String,
    ) -> Result<Self, TreeError> {
        let root = Shape::Internal(NodeKind::Root, root_children);
        let mut nodes: Vec<Node> = Vec::new();
        let mut queue: VecDeque<(&Shape, Option<NodeId>, u8)> = VecDeque::new();
        queue.push_back((&root, None, 0));
        while let Some((shape, parent, layer)) = queue.pop_front() {
            let id = nodes.len();
            let (kind, class) = match shape {
                Shape::Leaf(kind, class) => (*kind, Some(*class)),
                Shape::Internal(kind, children) => {
                    for child in children {
                        queue.push_back((child, Some(id), layer + 1));
                    }
                    (*kind, None)
                }
            };
            nodes.push(Node {
                id,
                kind,
                layer,
                class,
                children: Vec::new(),
            });
            if let Some(p) = parent {
                nodes[p].children.push(id);
            }
        }
        Self::from_nodes(variant, labels, nodes, built_from)
    }

    pub fn variant(&self) -> TreeVariant {
        self.variant
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.parent[id]
    }

    pub fn leaf(&self, class: ClassId) -> Option<NodeId> {
        self.leaf_of.get(class).copied()
    }

    pub fn built_from(&self) -> &str {
        &self.built_from
    }

    /// Node ids from the root to `class`'s leaf. Its length is `K + 1`.
    pub fn ground_truth_path(&self, class: ClassId) -> Result<Vec<NodeId>, TreeError> {
        let mut node = self.leaf(class).ok_or(TreeError::UnknownClass(class))?;
        let mut path = vec![node];
        while let Some(p) = self.parent[node] {
            path.push(p);
            node = p;
        }
        path.reverse();
        Ok(path)
    }

    /// Classes whose leaves sit in the subtree rooted at `id`.
    pub fn leaves_under(&self, id: NodeId) -> Vec<ClassId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if let Some(c) = node.class {
                out.push(c);
            }
            stack.extend(node.children.iter().rev());
        }
        out
    }

    /// For each concept node under the root, the classes it holds. Leaves
    /// directly under the root form their own singleton group.
    pub fn concept_groups(&self) -> Vec<Vec<ClassId>> {
        self.nodes[0]
            .children
            .iter()
            .map(|&c| {
                let mut g = self.leaves_under(c);
                g.sort_unstable();
                g
            })
            .collect()
    }
}
