use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CogTree, Node, NodeId, NodeKind, TreeError, TreeVariant};
use crate::types::ClassId;

pub const TREE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct NodeDocument {
    id: NodeId,
    kind: NodeKind,
    layer: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<ClassId>,
    children: Vec<NodeId>,
}

/// On-disk JSON form of a [`CogTree`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub version: u32,
    pub variant: TreeVariant,
    pub labels: Vec<String>,
    nodes: Vec<NodeDocument>,
    pub built_from: String,
}

impl From<&CogTree> for TreeDocument {
    fn from(t: &CogTree) -> Self {
        TreeDocument {
            version: TREE_FORMAT_VERSION,
            variant: t.variant,
            labels: t.labels.clone(),
            nodes: t
                .nodes
                .iter()
                .map(|n| NodeDocument {
                    id: n.id,
                    kind: n.kind,
                    layer: n.layer,
                    class: n.class,
                    children: n.children.clone(),
                })
                .collect(),
            built_from: t.built_from.clone(),
        }
    }
}

impl TryFrom<TreeDocument> for CogTree {
    type Error = TreeError;

    fn try_from(d: TreeDocument) -> Result<Self, Self::Error> {
        if d.version != TREE_FORMAT_VERSION {
            return Err(TreeError::Invariant(format!(
                "unsupported tree format version {}",
                d.version
            )));
        }
        let nodes = d
            .nodes
            .into_iter()
            .map(|n| Node {
                id: n.id,
                kind: n.kind,
                layer: n.layer,
                class: n.class,
                children: n.children,
            })
            .collect();
        CogTree::from_nodes(d.variant, d.labels, nodes, d.built_from)
    }
}

impl CogTree {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&TreeDocument::from(self))
            .expect("tree documents always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, TreeError> {
        let doc: TreeDocument = serde_json::from_str(s)
            .map_err(|e| TreeError::Invariant(format!("malformed tree document: {e}")))?;
        doc.try_into()
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering: boxes for leaves, ellipses for virtual nodes.
pub fn to_dot(tree: &CogTree) -> String {
    let mut out = String::from("digraph cogtree {\n  rankdir=TB;\n  node [fontname=\"Helvetica\"];\n");
    for node in tree.nodes() {
        let (shape, style) = match node.kind {
            NodeKind::Root => ("doublecircle", "solid"),
            NodeKind::ConceptVirtual => ("ellipse", "solid"),
            NodeKind::FineVirtual => ("ellipse", "dashed"),
            NodeKind::ConceptLeaf => ("box", "bold"),
            NodeKind::FineLeaf => ("box", "solid"),
        };
        let label = match (node.kind, node.class) {
            (_, Some(c)) => escape(&tree.labels()[c]),
            (NodeKind::Root, None) => "root".to_string(),
            (NodeKind::ConceptVirtual, None) => {
                // Name the concept node after its concept leaf.
                let head = node
                    .children
                    .iter()
                    .find_map(|&c| {
                        let child = tree.node(c);
                        (child.kind == NodeKind::ConceptLeaf).then_some(child.class).flatten()
                    })
                    .map(|c| escape(&tree.labels()[c]))
                    .unwrap_or_default();
                format!("[{head}]")
            }
            _ => "fine".to_string(),
        };
        let _ = writeln!(
            out,
            "  n{} [label=\"{}\", shape={}, style={}];",
            node.id, label, shape, style
        );
    }
    for node in tree.nodes() {
        for &c in &node.children {
            let _ = writeln!(out, "  n{} -> n{};", node.id, c);
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::build_cogtree;
    use crate::types::{LabelSpace, PredictionLog};

    fn sample_tree() -> CogTree {
        let space = LabelSpace::new(
            vec!["on".into(), "standing \"on\"".into(), "near".into(), "behind".into()],
            vec![100, 10, 50, 5],
        )
        .unwrap();
        let log = PredictionLog::new(
            vec![(0, 0), (1, 0), (2, 2), (3, 2), (3, 3)],
            4,
        )
        .unwrap();
        build_cogtree(&log, &space, TreeVariant::Standard).unwrap()
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let t = sample_tree();
        let json = t.to_json();
        let back = CogTree::from_json(&json).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_json(), json);
        assert!(json.contains("\"fine_virtual\""));
        assert!(json.contains(&t.built_from));
    }

    #[test]
    fn json_rejects_broken_tree() {
        let t = sample_tree();
        let json = t.to_json().replace("\"layer\": 3", "\"layer\": 2");
        assert!(CogTree::from_json(&json).is_err());
        let json = t.to_json().replace("\"version\": 1", "\"version\": 9");
        assert!(CogTree::from_json(&json).is_err());
    }

    #[test]
    fn dot_lists_every_node_and_edge() {
        let t = sample_tree();
        let dot = to_dot(&t);
        assert!(dot.starts_with("digraph cogtree {"));
        for n in t.nodes() {
            assert!(dot.contains(&format!("  n{} [", n.id)));
        }
        let edges = t.nodes().iter().map(|n| n.children.len()).sum::<usize>();
        assert_eq!(dot.matches(" -> ").count(), edges);
        assert!(dot.contains("standing \\\"on\\\""));
        assert!(dot.contains("label=\"[on]\""));
    }
}
