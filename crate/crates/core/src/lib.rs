//! Positive-unlabeled learning with community trees.
//!
//! The crate builds a binary tree of positive-unlabeled (PU) classifiers. Each
//! node is a sub-population ("community") of the training data with its own
//! network, class prior and augmentation. Splits are proposed by a local linear
//! surrogate explainer whose neighbourhood is drawn where the sibling community's
//! model is least confident. Every root-to-leaf path is finally combined by a
//! gated fusion network trained with the non-negative PU risk.
//!
//! Module map:
//!
//! * [`dataset`] loading, synthesis, discretization and routing of tabular PU data
//! * [`mlp`] feed-forward network, Adam and weighted ridge regression
//! * [`purisk`] uPU / nnPU / consistency-regularized risks and the training loop
//! * [`prior`] per-community class-prior estimation
//! * [`augment`] mask-recovery augmentation
//! * [`explain`] sibling-aware local explanations and split scoring
//! * [`tree`] recursive tree construction, routing and export
//! * [`fusion`] gated path fusion network
//! * [`harness`] metrics, baselines, experiments and ablations

pub mod augment;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod fusion;
pub mod harness;
pub mod linalg;
pub mod mlp;
pub mod prior;
pub mod purisk;
pub mod rng;
pub mod tree;

pub use error::{Error, Result};
