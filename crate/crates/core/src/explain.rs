//! Local surrogate explanations and the split objective.
//!
//! For a node model `f` an explainer is a weighted ridge fit of `f(z)` on the
//! binarized neighbourhood `z'` of an anchor row. The neighbourhood is drawn from
//! the anchor's quantile bins and, when the node has a sibling, narrowed to the
//! rows the sibling model is least confident about. Bins with large coefficients
//! become candidate splits, which are ranked by
//!
//! ```text
//! score = KL(tau_le || tau_gt) - logistic(|n_le - n_gt| / (n_le + n_gt))
//! ```
//!
//! where `tau` is the two-bin [positive, negative] mass of the node model's
//! predictions over each side.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{fit_discretizer, Discretizer, DiscretizerScheme, Split};
use crate::mlp::{fit_ridge, logistic, Scorer};
use crate::rng::{derive_seed, seeded, Rng};
use crate::{Error, Result};

/// Smoothing added to both bins before taking the KL divergence.
pub const KL_EPSILON: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainBudget {
    pub anchors: usize,
    pub pool_size: usize,
    /// Rows kept from each pool for the surrogate fit.
    pub neighbors: usize,
    pub candidates: usize,
    /// Kernel width as a multiple of `sqrt(d')`.
    pub kernel_width: f64,
    pub ridge: f64,
    pub scheme: DiscretizerScheme,
    /// Narrow each pool by sibling uncertainty. Off means plain LIME sampling.
    pub sibling_sampling: bool,
}

impl Default for ExplainBudget {
    fn default() -> Self {
        Self {
            anchors: 20,
            pool_size: 1000,
            neighbors: 250,
            candidates: 10,
            kernel_width: 0.75,
            ridge: 1.0,
            scheme: DiscretizerScheme::Quartile,
            sibling_sampling: true,
        }
    }
}

impl ExplainBudget {
    pub fn validate(&self) -> Result<()> {
        if self.anchors == 0 || self.pool_size == 0 || self.neighbors == 0 {
            return Err(Error::invalid("explainer budgets must be positive"));
        }
        if self.neighbors > self.pool_size {
            return Err(Error::invalid(format!(
                "neighbors {} exceed pool size {}",
                self.neighbors, self.pool_size
            )));
        }
        if !(self.kernel_width > 0.0) || !(self.ridge > 0.0) {
            return Err(Error::invalid("kernel width and ridge must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainerModel {
    /// One coefficient per binary bin of the discretizer.
    pub coefficients: Array1<f64>,
    pub intercept: f64,
    /// Weighted squared residual of the fit.
    pub loss: f64,
    pub kernel_width: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub split: Split,
    pub kl: f64,
    pub balance: f64,
    /// `kl - balance`, or negative infinity when a side is below the size guard.
    pub total: f64,
    pub sizes: [usize; 2],
}

impl SplitScore {
    pub fn rejected(&self) -> bool {
        self.total == f64::NEG_INFINITY
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDecision {
    pub chosen: SplitScore,
    /// Remaining scored candidates, best first.
    pub runners_up: Vec<SplitScore>,
}

/// Draws `pool_size` neighbours of `anchor`. Row 0 is the anchor itself. Every
/// other row keeps each feature with probability one half; a dropped feature takes
/// a training value from a different populated bin of that feature.
pub fn sample_neighborhood(anchor: ArrayView1<f64>, disc: &Discretizer, pool_size: usize, seed: u64) -> Result<Array2<f64>> {
    let mut rng = seeded(seed);
    sample_neighborhood_with(anchor, disc, pool_size, &mut rng)
}

fn sample_neighborhood_with(anchor: ArrayView1<f64>, disc: &Discretizer, pool_size: usize, rng: &mut Rng) -> Result<Array2<f64>> {
    if pool_size == 0 {
        return Err(Error::invalid("pool size must be at least 1"));
    }
    let d = disc.n_features();
    if anchor.len() != d {
        return Err(Error::DimensionMismatch {
            context: "neighbourhood anchor",
            expected: d,
            got: anchor.len(),
        });
    }
    let alternatives: Vec<Vec<usize>> = (0..d)
        .map(|f| {
            let own = disc.bin_of(f, anchor[f]);
            (0..disc.n_bins(f)).filter(|&b| b != own && disc.bin_is_populated(f, b)).collect()
        })
        .collect();
    let mut pool = Array2::zeros((pool_size, d));
    pool.row_mut(0).assign(&anchor);
    for i in 1..pool_size {
        for f in 0..d {
            let keep = rng.random_bool(0.5);
            pool[[i, f]] = if keep || alternatives[f].is_empty() {
                anchor[f]
            } else {
                let b = alternatives[f][rng.random_range(0..alternatives[f].len())];
                disc.sample_from_bin(f, b, rng).expect("populated bin")
            };
        }
    }
    Ok(pool)
}

/// Indices of the `k` pool rows the sibling is least confident about, where
/// confidence is `max(p, 1 - p)`. Ties keep pool order. Without a sibling the
/// first `k` rows are taken, which is uniform since the pool is random.
pub fn uncertainty_select(pool: ArrayView2<f64>, sibling: Option<&dyn Scorer>, k: usize) -> Result<Vec<usize>> {
    if pool.nrows() == 0 {
        return Err(Error::EmptyInput("uncertainty selection needs a non-empty pool"));
    }
    if k > pool.nrows() {
        return Err(Error::invalid(format!("cannot select {k} rows from a pool of {}", pool.nrows())));
    }
    let Some(sibling) = sibling else {
        return Ok((0..k).collect());
    };
    let p = sibling.probability(pool)?;
    let mut order: Vec<usize> = (0..pool.nrows()).collect();
    order.sort_by(|&a, &b| p[a].max(1.0 - p[a]).total_cmp(&p[b].max(1.0 - p[b])));
    order.truncate(k);
    Ok(order)
}

/// `exp(-|x - z|^2 / w^2)` with each feature divided by its training scale.
pub fn kernel_weights(anchor: ArrayView1<f64>, z: ArrayView2<f64>, disc: &Discretizer, width: f64) -> Array1<f64> {
    let w2 = width * width;
    z.rows()
        .into_iter()
        .map(|row| {
            let d2: f64 = row
                .iter()
                .zip(anchor)
                .enumerate()
                .map(|(f, (a, b))| ((a - b) / disc.scale(f)).powi(2))
                .sum();
            (-d2 / w2).exp()
        })
        .collect()
}

/// Fits the surrogate `g(z') ~ f(z)` around `anchor`.
pub fn fit_explainer(
    model: &dyn Scorer,
    z: ArrayView2<f64>,
    anchor: ArrayView1<f64>,
    disc: &Discretizer,
    kernel_width: f64,
    ridge: f64,
) -> Result<ExplainerModel> {
    if z.nrows() == 0 {
        return Err(Error::EmptyInput("explainer needs at least one neighbour"));
    }
    let target = model.probability(z)?.insert_axis(Axis(1));
    let binary = disc.binarize_matrix(z)?;
    let width = kernel_width * (disc.n_bins_total() as f64).sqrt();
    let w = kernel_weights(anchor, z, disc, width);
    let fit = fit_ridge(binary.view(), target.view(), w.view(), ridge)?;
    let loss = fit.weighted_loss(binary.view(), target.view(), w.view())?;
    Ok(ExplainerModel {
        coefficients: fit.coef.column(0).to_owned(),
        intercept: fit.intercept[0],
        loss,
        kernel_width: width,
    })
}

/// Explainers at `budget.anchors` rows drawn from `features`.
pub fn explain_anchors(
    model: &dyn Scorer,
    sibling: Option<&dyn Scorer>,
    features: ArrayView2<f64>,
    disc: &Discretizer,
    budget: &ExplainBudget,
    seed: u64,
) -> Result<Vec<ExplainerModel>> {
    budget.validate()?;
    if features.nrows() == 0 {
        return Err(Error::EmptyInput("explanation needs node rows"));
    }
    let mut rng = seeded(derive_seed(seed, 31));
    let sibling = if budget.sibling_sampling { sibling } else { None };
    (0..budget.anchors)
        .map(|_| {
            let anchor = features.row(rng.random_range(0..features.nrows()));
            let pool = sample_neighborhood_with(anchor, disc, budget.pool_size, &mut rng)?;
            let keep = uncertainty_select(pool.view(), sibling, budget.neighbors)?;
            let z = pool.select(Axis(0), &keep);
            fit_explainer(model, z.view(), anchor, disc, budget.kernel_width, budget.ridge)
        })
        .collect()
}

/// Mean absolute coefficient per binary bin.
pub fn mean_abs_coefficients(explainers: &[ExplainerModel], n_bins: usize) -> Array1<f64> {
    let mut acc = Array1::zeros(n_bins);
    for e in explainers {
        acc.zip_mut_with(&e.coefficients, |a, c| *a += c.abs());
    }
    if !explainers.is_empty() {
        acc /= explainers.len() as f64;
    }
    acc
}

fn two_bin(p: f64) -> [f64; 2] {
    let s = 1.0 + 2.0 * KL_EPSILON;
    [(p + KL_EPSILON) / s, (1.0 - p + KL_EPSILON) / s]
}

/// KL divergence between the smoothed two-bin distributions `[p, 1-p]` and `[q, 1-q]`.
pub fn kl_two_bin(p: f64, q: f64) -> f64 {
    let (a, b) = (two_bin(p), two_bin(q));
    a.iter().zip(&b).map(|(x, y)| x * (x / y).ln()).sum::<f64>().max(0.0)
}

/// Logistic of the normalized absolute size difference.
pub fn balance_term(n_le: usize, n_gt: usize) -> f64 {
    let total = (n_le + n_gt) as f64;
    let diff = (n_le as f64 - n_gt as f64).abs();
    logistic(if total > 0.0 { diff / total } else { 0.0 })
}

/// Scores `split` on node rows `features`, given the node model's probabilities
/// `probs` for those rows. Sides smaller than `min_child` are rejected.
pub fn score_split(split: Split, features: ArrayView2<f64>, probs: ArrayView1<f64>, min_child: usize) -> Result<SplitScore> {
    if probs.len() != features.nrows() {
        return Err(Error::DimensionMismatch {
            context: "split scoring probabilities",
            expected: features.nrows(),
            got: probs.len(),
        });
    }
    let mut sum = [0.0; 2];
    let mut n = [0usize; 2];
    for (row, &p) in features.rows().into_iter().zip(probs) {
        let side = (row[split.feature] > split.threshold) as usize;
        sum[side] += p;
        n[side] += 1;
    }
    let balance = balance_term(n[0], n[1]);
    if n[0] == 0 || n[1] == 0 || n[0] < min_child || n[1] < min_child {
        return Ok(SplitScore {
            split,
            kl: 0.0,
            balance,
            total: f64::NEG_INFINITY,
            sizes: n,
        });
    }
    let kl = kl_two_bin(sum[0] / n[0] as f64, sum[1] / n[1] as f64);
    Ok(SplitScore {
        split,
        kl,
        balance,
        total: kl - balance,
        sizes: n,
    })
}

/// Chooses a split for a node from its explainers' strongest bins. `None` means
/// no candidate passed the size guard and the node should become a leaf.
pub fn select_split(
    features: ArrayView2<f64>,
    model: &dyn Scorer,
    sibling: Option<&dyn Scorer>,
    budget: &ExplainBudget,
    min_child: usize,
    seed: u64,
) -> Result<Option<SplitDecision>> {
    budget.validate()?;
    if features.nrows() < 2 {
        return Ok(None);
    }
    let disc = fit_discretizer(features, budget.scheme)?;
    if (0..disc.n_features()).all(|f| disc.cuts(f).is_empty()) {
        return Ok(None);
    }
    let explainers = explain_anchors(model, sibling, features, &disc, budget, seed)?;
    let strength = mean_abs_coefficients(&explainers, disc.n_bins_total());
    let mut order: Vec<usize> = (0..strength.len()).collect();
    order.sort_by(|&a, &b| strength[b].total_cmp(&strength[a]));

    let mut seen = HashSet::new();
    let mut candidates = Vec::new();
    for g in order {
        if candidates.len() == budget.candidates {
            break;
        }
        if let Some(bs) = disc.bin_split(g) {
            if seen.insert((bs.feature, bs.threshold.to_bits())) {
                candidates.push(Split {
                    feature: bs.feature,
                    threshold: bs.threshold,
                });
            }
        }
    }
    let probs = model.probability(features)?;
    let mut scored: Vec<SplitScore> = candidates
        .into_iter()
        .map(|s| score_split(s, features, probs.view(), min_child))
        .collect::<Result<_>>()?;
    scored.retain(|s| !s.rejected());
    // stable: equal totals keep coefficient order
    scored.sort_by(|a, b| b.total.total_cmp(&a.total));
    let mut it = scored.into_iter();
    Ok(it.next().map(|chosen| SplitDecision {
        chosen,
        runners_up: it.collect(),
    }))
}
