use std::cmp::Ordering;

use log::warn;
use thiserror::Error;

use super::{CogTree, NodeKind, Shape, TreeError, TreeVariant};
use crate::cluster;
use crate::types::{ClassId, LabelSpace, PredictionLog};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("prediction log is empty")]
    EmptyLog,
    #[error("prediction log row {row} refers to a class outside the {num_classes}-class space")]
    ClassOutOfRange { row: usize, num_classes: usize },
    #[error("no concept has any member besides itself, so isolated classes have nowhere to attach")]
    NoValidHost,
    #[error("{got} class vectors for a {expected}-class space")]
    VectorCount { expected: usize, got: usize },
    #[error("class vector {index} has dimension {found}, expected {expected}")]
    VectorDimension {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("cannot cut {classes} classes into {requested} concepts")]
    TooManyConcepts { requested: usize, classes: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Something the builder decided on its own that a caller may want to see.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuildNote {
    /// The class never appeared as ground truth in the log.
    Unobserved { class: ClassId },
    /// `concept` is another class's concept but itself prefers `preferred`;
    /// it was kept as the root of its own subtree.
    RootConflict { concept: ClassId, preferred: ClassId },
    /// A memberless concept was attached under `host`.
    Relinked { class: ClassId, host: ClassId },
}

/// Per ground-truth class, how often each label was predicted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionStats {
    counts: Vec<Vec<u64>>,
    totals: Vec<u64>,
    class_sizes: Vec<u64>,
}

impl ConfusionStats {
    /// `counts[i][j]` = samples of class `i` predicted as `j`.
    /// `class_sizes` are training counts, used for tie-breaks.
    pub fn from_counts(counts: Vec<Vec<u64>>, class_sizes: Vec<u64>) -> Self {
        let totals = counts.iter().map(|row| row.iter().sum()).collect();
        Self {
            counts,
            totals,
            class_sizes,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn row(&self, class: ClassId) -> &[u64] {
        &self.counts[class]
    }

    pub fn count(&self, truth: ClassId, predicted: ClassId) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn total(&self, class: ClassId) -> u64 {
        self.totals[class]
    }

    /// Classes that never appeared as ground truth.
    pub fn unobserved(&self) -> Vec<ClassId> {
        (0..self.counts.len())
            .filter(|&c| self.totals[c] == 0)
            .collect()
    }

    /// Normalised frequencies for one class; all zero when unobserved.
    pub fn frequencies(&self, class: ClassId) -> Vec<f64> {
        let total = self.totals[class];
        self.counts[class]
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect()
    }

    /// Predicted classes for `class`, most frequent first. Ties go to the
    /// class with more training samples, then to the smaller index.
    fn ranked(&self, class: ClassId) -> Vec<ClassId> {
        let row = &self.counts[class];
        let mut order: Vec<ClassId> = (0..row.len()).collect();
        order.sort_by(|&a, &b| self.rank_cmp(row, a, b));
        order
    }

    fn rank_cmp(&self, row: &[u64], a: ClassId, b: ClassId) -> Ordering {
        row[b]
            .cmp(&row[a])
            .then(self.class_sizes[b].cmp(&self.class_sizes[a]))
            .then(a.cmp(&b))
    }
}

/// Counts predictions per ground-truth class.
pub fn collect_confusion(
    log: &PredictionLog,
    space: &LabelSpace,
) -> Result<ConfusionStats, BuildError> {
    if log.is_empty() {
        return Err(BuildError::EmptyLog);
    }
    let n = space.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (row, &(t, p)) in log.rows().iter().enumerate() {
        if t >= n || p >= n {
            return Err(BuildError::ClassOutOfRange {
                row,
                num_classes: n,
            });
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionStats::from_counts(counts, space.counts().to_vec()))
}

/// Assignment of every class to a concept class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptMap {
    concept_of: Vec<ClassId>,
    notes: Vec<BuildNote>,
}

impl ConceptMap {
    pub fn new(concept_of: Vec<ClassId>) -> Self {
        Self {
            concept_of,
            notes: Vec::new(),
        }
    }

    pub fn concept_of(&self, class: ClassId) -> ClassId {
        self.concept_of[class]
    }

    pub fn assignments(&self) -> &[ClassId] {
        &self.concept_of
    }

    /// Distinct concept classes in ascending order.
    pub fn concepts(&self) -> Vec<ClassId> {
        let mut c = self.concept_of.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Classes assigned to `concept` other than `concept` itself, ascending.
    pub fn fine_members(&self, concept: ClassId) -> Vec<ClassId> {
        self.concept_of
            .iter()
            .enumerate()
            .filter(|&(i, &c)| c == concept && i != concept)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn notes(&self) -> &[BuildNote] {
        &self.notes
    }

    fn has_members(&self, concept: ClassId) -> bool {
        self.concept_of
            .iter()
            .enumerate()
            .any(|(i, &c)| c == concept && i != concept)
    }

    /// True when every class is either a concept that maps to itself, or
    /// maps to such a concept.
    fn is_closed(&self) -> bool {
        self.concept_of
            .iter()
            .all(|&c| self.concept_of[c] == c)
    }
}

/// Each class's concept is the label it is most often predicted as.
///
/// Ties prefer the label with the larger training count, then the smaller
/// index. Unobserved classes start as their own concept.
pub fn induce_concepts(stats: &ConfusionStats) -> ConceptMap {
    let mut notes = Vec::new();
    let concept_of = (0..stats.num_classes())
        .map(|i| {
            if stats.total(i) == 0 {
                warn!("class {i} has no predictions in the log; treating it as isolated");
                notes.push(BuildNote::Unobserved { class: i });
                i
            } else {
                stats.ranked(i)[0]
            }
        })
        .collect();
    ConceptMap { concept_of, notes }
}

/// Resolves root conflicts and attaches memberless concepts to a host.
///
/// A concept that other classes point at stays the root of its own subtree
/// even if it prefers another label. A concept with no members other than
/// itself is attached to the highest-ranked concept in its own prediction
/// distribution that does have members; labels it was never predicted as
/// are ranked by training count. Hosts never change during this step, so the
/// result does not depend on processing order; isolated classes are still
/// visited in descending order of their strongest non-self prediction.
pub fn build_subtrees(
    map: &ConceptMap,
    stats: &ConfusionStats,
) -> Result<ConceptMap, BuildError> {
    let n = map.concept_of.len();
    let mut out = map.clone();

    let image = map.concepts();
    for &c in &image {
        let preferred = map.concept_of[c];
        if preferred != c {
            warn!("concept {c} prefers class {preferred}; keeping it as a subtree root");
            out.notes.push(BuildNote::RootConflict {
                concept: c,
                preferred,
            });
            out.concept_of[c] = c;
        }
    }
    debug_assert!(out.is_closed());

    let concepts = out.concepts();
    let hosts: Vec<bool> = (0..n)
        .map(|c| out.concept_of[c] == c && out.has_members(c))
        .collect();
    let mut isolated: Vec<ClassId> = concepts.into_iter().filter(|&c| !hosts[c]).collect();
    if isolated.is_empty() {
        return Ok(out);
    }
    if !hosts.iter().any(|&h| h) {
        return Err(BuildError::NoValidHost);
    }

    let strength = |c: ClassId| -> u64 {
        stats
            .row(c)
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != c)
            .map(|(_, &v)| v)
            .max()
            .unwrap_or(0)
    };
    isolated.sort_by(|&a, &b| strength(b).cmp(&strength(a)).then(a.cmp(&b)));

    for c in isolated {
        let host = stats
            .ranked(c)
            .into_iter()
            .find(|&j| j != c && hosts[j])
            .expect("at least one host exists");
        out.concept_of[c] = host;
        out.notes.push(BuildNote::Relinked { class: c, host });
    }
    Ok(out)
}

fn concept_shape(concept: ClassId, fine: &[ClassId], fused: bool) -> Shape {
    let mut children = vec![Shape::Leaf(NodeKind::ConceptLeaf, concept)];
    if fused {
        children.extend(fine.iter().map(|&f| Shape::Leaf(NodeKind::FineLeaf, f)));
    } else if !fine.is_empty() {
        children.push(Shape::Internal(
            NodeKind::FineVirtual,
            fine.iter().map(|&f| Shape::Leaf(NodeKind::FineLeaf, f)).collect(),
        ));
    }
    Shape::Internal(NodeKind::ConceptVirtual, children)
}

/// Assembles the standard four-layer tree from a relinked concept map.
pub fn aggregate_tree(map: &ConceptMap, space: &LabelSpace) -> Result<CogTree, BuildError> {
    assemble_variant(map, space, TreeVariant::Standard, String::new())
}

/// Lays out a concept map in the shape of `variant`.
pub fn assemble_variant(
    map: &ConceptMap,
    space: &LabelSpace,
    variant: TreeVariant,
    built_from: String,
) -> Result<CogTree, BuildError> {
    let labels = space.names().to_vec();
    let concepts = map.concepts();
    let root_children = match variant {
        TreeVariant::Standard | TreeVariant::Cluster => concepts
            .iter()
            .map(|&c| concept_shape(c, &map.fine_members(c), false))
            .collect(),
        TreeVariant::FuseLayer => concepts
            .iter()
            .map(|&c| concept_shape(c, &map.fine_members(c), true))
            .collect(),
        TreeVariant::FuseSubtree => {
            let mut children: Vec<Shape> = concepts
                .iter()
                .map(|&c| Shape::Leaf(NodeKind::ConceptLeaf, c))
                .collect();
            let fine: Vec<Shape> = (0..space.len())
                .filter(|&i| map.concept_of(i) != i)
                .map(|i| Shape::Leaf(NodeKind::FineLeaf, i))
                .collect();
            if !fine.is_empty() {
                children.push(Shape::Internal(NodeKind::FineVirtual, fine));
            }
            children
        }
        TreeVariant::Flat => (0..space.len())
            .map(|i| Shape::Leaf(NodeKind::ConceptLeaf, i))
            .collect(),
    };
    Ok(CogTree::assemble(variant, labels, root_children, built_from)?)
}

/// Builds a tree of the requested variant from a biased model's predictions.
///
/// `Cluster` needs class vectors rather than a log; use [`cluster_tree`].
pub fn build_cogtree(
    log: &PredictionLog,
    space: &LabelSpace,
    variant: TreeVariant,
) -> Result<CogTree, BuildError> {
    let digest = log.digest();
    if variant == TreeVariant::Flat {
        if log.is_empty() {
            return Err(BuildError::EmptyLog);
        }
        return assemble_variant(&ConceptMap::new((0..space.len()).collect()), space, variant, digest);
    }
    let stats = collect_confusion(log, space)?;
    let induced = induce_concepts(&stats);
    let relinked = build_subtrees(&induced, &stats)?;
    let variant = match variant {
        TreeVariant::Cluster => TreeVariant::Standard,
        v => v,
    };
    assemble_variant(&relinked, space, variant, digest)
}

/// Tree whose concepts come from average-linkage clustering of per-class
/// vectors (e.g. the rows of a classifier's last weight matrix). In each
/// cluster the class with the most training samples becomes the concept.
pub fn cluster_tree(
    class_vectors: &[Vec<f64>],
    space: &LabelSpace,
    num_concepts: usize,
) -> Result<CogTree, BuildError> {
    let n = space.len();
    if class_vectors.len() != n {
        return Err(BuildError::VectorCount {
            expected: n,
            got: class_vectors.len(),
        });
    }
    let dim = class_vectors[0].len();
    if let Some(index) = class_vectors.iter().position(|v| v.len() != dim) {
        return Err(BuildError::VectorDimension {
            index,
            expected: dim,
            found: class_vectors[index].len(),
        });
    }
    if num_concepts == 0 || num_concepts > n {
        return Err(BuildError::TooManyConcepts {
            requested: num_concepts,
            classes: n,
        });
    }
    let clusters = cluster::average_linkage(class_vectors, num_concepts);
    let mut concept_of = vec![0; n];
    for members in &clusters {
        let head = *members
            .iter()
            .max_by(|&&a, &&b| space.count(a).cmp(&space.count(b)).then(b.cmp(&a)))
            .expect("clusters are non-empty");
        for &m in members {
            concept_of[m] = head;
        }
    }
    let digest = {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in class_vectors {
            for x in v {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    };
    assemble_variant(&ConceptMap::new(concept_of), space, TreeVariant::Cluster, digest)
}
