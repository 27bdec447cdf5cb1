//! Concept trees induced from a biased classifier's confusions, and the
//! hierarchical class-balanced losses trained against them.
//!
//! The crate is organised around a two-phase protocol:
//!
//! 1. Train a plain cross-entropy classifier on long-tailed data and record
//!    which labels it predicts for each ground-truth class
//!    ([`model::predict_log`]).
//! 2. Collapse those confusions into a four-layer concept tree
//!    ([`tree::build_cogtree`]): root, concepts, a coarse/fine split, and
//!    fine-grained leaves.
//! 3. Retrain a fresh classifier with the tree loss ([`losses::Objective`]),
//!    then evaluate it with plain argmax and mean Recall@K ([`eval`]).
//!
//! All numerics are `f64`. Randomness comes from [`Seed`], a ChaCha8 stream,
//! so identical seeds reproduce bit-identical results on every platform.

pub mod cluster;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod losses;
pub mod model;
pub mod tree;
mod types;

pub use types::{
    validate_dataset, ClassId, Dataset, DatasetError, LabelSpace, LabelSpaceError, PredictionLog,
    ScoreVector, Seed, Split,
};
