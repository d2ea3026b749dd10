//! Tabular PU data: containers, ingestion, synthesis, discretization and routing.

mod discretize;
mod load;
mod sampling;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::tree::{NodeId, TreeNode};
use crate::{Error, Result};

pub use discretize::{fit_discretizer, BinSplit, Direction, Discretizer, DiscretizerScheme, Standardizer};
pub use load::{load_csv, load_csv_reader, write_labeled_csv, CategoricalColumn, CategoricalEncoding, Schema};
pub use sampling::{
    make_pu, make_pu_with_truth, sample_labeled, synth_community_labeled, synth_community_pu,
    synth_gaussian_labeled, synth_gaussian_pu, CommunitySynth,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PuLabel {
    Positive,
    Unlabeled,
}

/// Ground-truth class, used for evaluation and synthesis only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Class {
    Positive,
    Negative,
}

impl Class {
    pub fn sign(self) -> f64 {
        match self {
            Class::Positive => 1.0,
            Class::Negative => -1.0,
        }
    }

    /// Strictly positive scores are positive; zero falls on the negative side.
    pub fn from_score(score: f64) -> Self {
        if score > 0.0 {
            Class::Positive
        } else {
            Class::Negative
        }
    }
}

/// Positive/unlabeled training data with an assumed class prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuDataset {
    features: Array2<f64>,
    labels: Vec<PuLabel>,
    class_prior: f64,
    feature_names: Vec<String>,
}

impl PuDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<PuLabel>,
        class_prior: f64,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "PuDataset labels",
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::DimensionMismatch {
                context: "PuDataset feature names",
                expected: features.ncols(),
                got: feature_names.len(),
            });
        }
        check_prior(class_prior)?;
        Ok(Self {
            features,
            labels,
            class_prior,
            feature_names,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[PuLabel] {
        &self.labels
    }

    pub fn class_prior(&self) -> f64 {
        self.class_prior
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|l| **l == PuLabel::Positive).count()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.n_rows() - self.n_positive()
    }

    pub fn indices_of(&self, label: PuLabel) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Rows of one partition as an owned matrix.
    pub fn rows_of(&self, label: PuLabel) -> Array2<f64> {
        self.features.select(Axis(0), &self.indices_of(label))
    }

    pub fn with_prior(mut self, class_prior: f64) -> Result<Self> {
        check_prior(class_prior)?;
        self.class_prior = class_prior;
        Ok(self)
    }

    /// Sub-dataset of the given rows, in the given order, keeping the prior.
    pub fn select(&self, rows: &[usize]) -> PuDataset {
        PuDataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            class_prior: self.class_prior,
            feature_names: self.feature_names.clone(),
        }
    }

    /// New dataset with `extra` rows appended after the existing ones.
    pub fn append(&self, extra: ArrayView2<f64>, extra_labels: &[PuLabel]) -> Result<PuDataset> {
        if extra.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "PuDataset append",
                expected: self.dim(),
                got: extra.ncols(),
            });
        }
        if extra.nrows() != extra_labels.len() {
            return Err(Error::DimensionMismatch {
                context: "PuDataset append labels",
                expected: extra.nrows(),
                got: extra_labels.len(),
            });
        }
        let features = ndarray::concatenate(Axis(0), &[self.features.view(), extra])
            .expect("column counts checked");
        let mut labels = self.labels.clone();
        labels.extend_from_slice(extra_labels);
        Ok(PuDataset {
            features,
            labels,
            class_prior: self.class_prior,
            feature_names: self.feature_names.clone(),
        })
    }

    /// Training needs at least one labeled positive.
    pub fn require_trainable(&self) -> Result<()> {
        if self.n_positive() == 0 {
            return Err(Error::EmptyInput("dataset has no labeled positives"));
        }
        Ok(())
    }

    /// Applies a fitted standardizer to the feature matrix.
    pub fn standardized(&self, scaler: &Standardizer) -> Result<PuDataset> {
        Ok(PuDataset {
            features: scaler.transform(self.features.view())?,
            ..self.clone()
        })
    }
}

fn check_prior(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("class prior {p} outside (0, 1)")))
    }
}

/// Fully labeled data for evaluation and ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<Class>,
    feature_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<Class>, feature_names: Vec<String>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "LabeledDataset labels",
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::DimensionMismatch {
                context: "LabeledDataset feature names",
                expected: features.ncols(),
                got: feature_names.len(),
            });
        }
        Ok(Self {
            features,
            labels,
            feature_names,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[Class] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|c| **c == Class::Positive).count()
    }

    pub fn select(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn standardized(&self, scaler: &Standardizer) -> Result<LabeledDataset> {
        Ok(LabeledDataset {
            features: scaler.transform(self.features.view())?,
            ..self.clone()
        })
    }
}

/// Axis-aligned binary split. Values equal to the threshold go to the `<=` side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    LessEq,
    Greater,
}

impl Split {
    pub fn side(&self, instance: ArrayView1<f64>) -> Side {
        if instance[self.feature] > self.threshold {
            Side::Greater
        } else {
            Side::LessEq
        }
    }

    /// Splits `rows` of `features` into (`<=`, `>`) preserving order.
    pub fn partition(&self, features: ArrayView2<f64>, rows: &[usize]) -> (Vec<usize>, Vec<usize>) {
        rows.iter().partition(|&&r| features[[r, self.feature]] <= self.threshold)
    }
}

/// Child of a split node that `instance` falls into.
pub fn route(instance: ArrayView1<f64>, node: &TreeNode) -> Result<NodeId> {
    match (node.split, node.children) {
        (Some(split), Some([le, gt])) => {
            if split.feature >= instance.len() {
                return Err(Error::DimensionMismatch {
                    context: "route",
                    expected: split.feature + 1,
                    got: instance.len(),
                });
            }
            Ok(match split.side(instance) {
                Side::LessEq => le,
                Side::Greater => gt,
            })
        }
        _ => Err(Error::Routing(format!("node {} is a leaf", node.id))),
    }
}
