//! Quantile discretization for the explainer's binary feature space, and z-score
//! standardization for model inputs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

/// Empirical values kept per bin for neighbourhood sampling.
const BIN_SAMPLE_CAP: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscretizerScheme {
    #[default]
    Quartile,
    Decile,
}

impl DiscretizerScheme {
    fn probabilities(self) -> Vec<f64> {
        let k = match self {
            DiscretizerScheme::Quartile => 4,
            DiscretizerScheme::Decile => 10,
        };
        (1..k).map(|i| i as f64 / k as f64).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    LessEq,
    Greater,
}

/// The (feature, threshold, direction) reading of one binary bin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSplit {
    pub feature: usize,
    pub threshold: f64,
    pub direction: Direction,
}

#[derive(Clone, Debug)]
pub struct Discretizer {
    scheme: DiscretizerScheme,
    cuts: Vec<Vec<f64>>,
    offsets: Vec<usize>,
    n_bins: usize,
    bin_values: Vec<Vec<Vec<f64>>>,
    scale: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fits per-feature cut points at the scheme's quantiles. Duplicate cut points
/// collapse, and cuts at or above the column maximum are dropped since they would
/// leave an empty upper bin; a constant column therefore has a single bin.
pub fn fit_discretizer(data: ArrayView2<f64>, scheme: DiscretizerScheme) -> Result<Discretizer> {
    if data.nrows() == 0 {
        return Err(Error::EmptyInput("discretizer needs at least one row"));
    }
    let probs = scheme.probabilities();
    let d = data.ncols();
    let mut cuts = Vec::with_capacity(d);
    let mut bin_values = Vec::with_capacity(d);
    let mut scale = Vec::with_capacity(d);
    for col in data.columns() {
        let mut sorted: Vec<f64> = col.to_vec();
        sorted.sort_by(f64::total_cmp);
        let max = *sorted.last().expect("non-empty");
        let mut c: Vec<f64> = Vec::new();
        for &p in &probs {
            let q = quantile_sorted(&sorted, p);
            if q < max && c.last().is_none_or(|&last| q > last) {
                c.push(q);
            }
        }
        let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); c.len() + 1];
        for &v in &sorted {
            per_bin[c.partition_point(|&cut| v > cut)].push(v);
        }
        for values in per_bin.iter_mut() {
            if values.len() > BIN_SAMPLE_CAP {
                let n = values.len();
                *values = (0..BIN_SAMPLE_CAP).map(|k| values[k * n / BIN_SAMPLE_CAP]).collect();
            }
        }
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        cuts.push(c);
        bin_values.push(per_bin);
    }
    let mut offsets = Vec::with_capacity(d);
    let mut n_bins = 0;
    for c in &cuts {
        offsets.push(n_bins);
        n_bins += c.len() + 1;
    }
    Ok(Discretizer {
        scheme,
        cuts,
        offsets,
        n_bins,
        bin_values,
        scale,
    })
}

impl Discretizer {
    pub fn scheme(&self) -> DiscretizerScheme {
        self.scheme
    }

    pub fn n_features(&self) -> usize {
        self.cuts.len()
    }

    /// Width of the binary representation.
    pub fn n_bins_total(&self) -> usize {
        self.n_bins
    }

    pub fn cuts(&self, feature: usize) -> &[f64] {
        &self.cuts[feature]
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.cuts[feature].len() + 1
    }

    /// Training standard deviation of a feature (1 for constant columns).
    pub fn scale(&self, feature: usize) -> f64 {
        self.scale[feature]
    }

    /// Bin `b` covers `(cut[b-1], cut[b]]`.
    pub fn bin_of(&self, feature: usize, value: f64) -> usize {
        self.cuts[feature].partition_point(|&c| value > c)
    }

    pub fn global_bin(&self, feature: usize, bin: usize) -> usize {
        self.offsets[feature] + bin
    }

    pub fn feature_of(&self, global: usize) -> (usize, usize) {
        let f = self.offsets.partition_point(|&o| o <= global) - 1;
        (f, global - self.offsets[f])
    }

    pub fn binarize(&self, instance: ArrayView1<f64>) -> Result<Array1<f64>> {
        if instance.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                context: "binarize",
                expected: self.n_features(),
                got: instance.len(),
            });
        }
        let mut out = Array1::zeros(self.n_bins);
        for (f, &v) in instance.iter().enumerate() {
            out[self.global_bin(f, self.bin_of(f, v))] = 1.0;
        }
        Ok(out)
    }

    pub fn binarize_matrix(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((data.nrows(), self.n_bins));
        for (i, row) in data.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&self.binarize(row)?);
        }
        Ok(out)
    }

    /// Candidate split for a binary bin. Bins in the lower half of a feature read
    /// as `<= upper edge`, the rest as `> lower edge`. Single-bin features have none.
    pub fn bin_split(&self, global: usize) -> Option<BinSplit> {
        let (feature, bin) = self.feature_of(global);
        let cuts = &self.cuts[feature];
        if cuts.is_empty() {
            return None;
        }
        let n_bins = cuts.len() + 1;
        Some(if 2 * bin < n_bins && bin < cuts.len() {
            BinSplit {
                feature,
                threshold: cuts[bin],
                direction: Direction::LessEq,
            }
        } else {
            BinSplit {
                feature,
                threshold: cuts[bin - 1],
                direction: Direction::Greater,
            }
        })
    }

    pub fn bin_is_populated(&self, feature: usize, bin: usize) -> bool {
        !self.bin_values[feature][bin].is_empty()
    }

    /// Draws a training value that fell into the given bin.
    pub fn sample_from_bin(&self, feature: usize, bin: usize, rng: &mut Rng) -> Option<f64> {
        let values = &self.bin_values[feature][bin];
        if values.is_empty() {
            None
        } else {
            Some(values[rng.random_range(0..values.len())])
        }
    }
}

/// Per-column z-scoring fit on training data. Constant columns keep unit scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: ArrayView2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::EmptyInput("standardizer needs at least one row"));
        }
        let n = data.nrows() as f64;
        let mut mean = Vec::with_capacity(data.ncols());
        let mut std = Vec::with_capacity(data.ncols());
        for col in data.columns() {
            let m = col.sum() / n;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(if v > 1e-24 { v.sqrt() } else { 1.0 });
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        if data.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                context: "standardize",
                expected: self.mean.len(),
                got: data.ncols(),
            });
        }
        let mut out = data.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|x| (x - self.mean[j]) / self.std[j]);
        }
        Ok(out)
    }
}
