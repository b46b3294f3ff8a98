//! Landmark-driven re-ranking for visual place recognition.
//!
//! The crate takes precomputed global and per-region image descriptors,
//! retrieves the top-K database candidates for each query, scores how well
//! the query's spatial landmarks agree with each candidate's, feeds those
//! correspondence features to a bagged decision-tree classifier and uses the
//! classifier's response to pull likely matches closer before re-sorting.
//!
//! Modules, in pipeline order:
//!
//! - [`bundle`]: descriptor matrices, region sets, candidate lists, ground
//!   truth, their on-disk formats and brute-force top-K retrieval.
//! - [`vlad`]: soft-assignment VLAD aggregation, region cropping of spatial
//!   descriptor maps and PCA whitening.
//! - [`edgebox`]: edge-group objectness scoring and non-maximum suppression.
//! - [`rerank`]: correlation matrices, landmark elevation, feature assembly
//!   and the distance update.
//! - [`pdl`]: the decision layer (bagged CART trees or naive Bayes).
//! - [`eval`]: recall@N tables, baseline comparisons and a synthetic bundle
//!   generator.

pub mod bundle;
pub mod edgebox;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod pdl;
pub mod rerank;
pub mod vlad;

pub use error::{Error, Result};
