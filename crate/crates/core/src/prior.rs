//! Class-prior estimation for one community.
//!
//! A coarse network separates labeled (and augmented) positives from the whole
//! unlabeled pool, which it treats as negative. Each unlabeled row then gets a
//! negative-class score, `p_mean` is the average of those scores, and rows
//! scoring above `p_mean` are reliable negatives.
//!
//! The unlabeled mean score is a mixture of the positive and negative score
//! levels, `p_mean = pi * s_pos + (1 - pi) * s_neg`. The labeled positives fix
//! `s_pos`; the reliable negatives give a first `s_neg`, and the estimate solves
//! for `pi`:
//!
//! ```text
//! pi = (s_neg - p_mean) / (s_neg - s_pos)
//! ```
//!
//! The reliable negatives sit above the average negative, so `s_neg` is then
//! recomputed from the top `(1 - pi)` share of the unlabeled scores and `pi`
//! solved again until it stops moving. Scores come from held-out folds so that
//! memorized positives do not pull `s_pos` down.

use ndarray::{concatenate, Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{PuDataset, PuLabel};
use crate::mlp::{logistic, AdamState, Mlp, MlpGrads};
use crate::purisk::stratified_batches;
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorHyper {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Weight both sides of each batch equally instead of per row.
    pub balanced: bool,
    /// Cross-fitting folds for the scores; 1 scores the training rows in-sample.
    pub folds: usize,
    pub seed: u64,
    /// Estimates are clamped to `[clamp, 1 - clamp]`.
    pub clamp: f64,
}

impl Default for PriorHyper {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 60,
            batch_size: 256,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            balanced: true,
            folds: 3,
            seed: 0,
            clamp: 0.005,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorEstimate {
    pub prior: f64,
    pub p_mean: f64,
    pub reliable_negatives: usize,
    pub n_unlabeled: usize,
    /// Mean negative-class score of the rows taken as negative at convergence.
    pub negative_level: f64,
    /// Mean held-out negative-class score of the labeled positives.
    pub positive_level: f64,
    /// Scores were flat or the positives did not score below the reliable
    /// negatives; `prior` is the clamp midpoint.
    pub degenerate: bool,
    pub iterations: usize,
}

/// Weighted log-loss of labeled (`true`) against unlabeled rows and its parameter
/// gradient. Rows weigh `1/n`, or with `balanced` each side shares half the weight.
pub fn coarse_objective(model: &Mlp, x: ArrayView2<f64>, positive: &[bool], balanced: bool) -> Result<(f64, MlpGrads)> {
    if positive.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            context: "coarse objective labels",
            expected: x.nrows(),
            got: positive.len(),
        });
    }
    let n = positive.len() as f64;
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    if balanced && (n_pos == 0.0 || n_pos == n) {
        return Err(Error::EmptyInput("balanced coarse loss needs both sides"));
    }
    let weight = |p: bool| match (balanced, p) {
        (false, _) => 1.0 / n,
        (true, true) => 0.5 / n_pos,
        (true, false) => 0.5 / (n - n_pos),
    };
    let fwd = model.forward_trace(x)?;
    let mut loss = 0.0;
    // d/dz of w * (ln(1 + e^z) - y z) is w * (sigma(z) - y)
    let dz = Array1::from_iter(positive.iter().zip(fwd.logits.iter()).map(|(&p, &z)| {
        let y = if p { 1.0 } else { 0.0 };
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        loss += weight(p) * (softplus - y * z);
        weight(p) * (logistic(z) - y)
    }));
    Ok((loss, model.backward_trace(&fwd, dz.view())?))
}

/// Logistic-loss network for labeled-vs-unlabeled separation. Returns the model;
/// its score is the log-odds of the positive (labeled) side.
pub fn train_coarse(positives: ArrayView2<f64>, negatives: ArrayView2<f64>, hyper: &PriorHyper) -> Result<Mlp> {
    let x = concatenate(Axis(0), &[positives, negatives]).map_err(|_| Error::DimensionMismatch {
        context: "coarse classifier",
        expected: positives.ncols(),
        got: negatives.ncols(),
    })?;
    let mut labels = vec![PuLabel::Positive; positives.nrows()];
    labels.resize(x.nrows(), PuLabel::Unlabeled);
    let mut model = Mlp::new(x.ncols(), &hyper.hidden, derive_seed(hyper.seed, 11))?;
    let mut adam = AdamState::new(&model, hyper.learning_rate);
    adam.weight_decay = hyper.weight_decay;
    let mut rng = seeded(derive_seed(hyper.seed, 12));
    for _ in 0..hyper.epochs {
        for rows in stratified_batches(&labels, hyper.batch_size, &mut rng) {
            let xb = x.select(Axis(0), &rows);
            let positive: Vec<bool> = rows.iter().map(|&r| labels[r] == PuLabel::Positive).collect();
            let (_, g) = coarse_objective(&model, xb.view(), &positive, hyper.balanced)?;
            adam.step(&mut model, &g)?;
        }
    }
    Ok(model)
}

fn split_folds(n: usize, folds: usize, rng: &mut crate::rng::Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut fold = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        fold[i] = k % folds;
    }
    fold
}

/// Out-of-fold negative-class scores of the real positives and the unlabeled
/// rows. Extra positives only train; each joins its source positive's fold.
fn held_out_scores(
    positives: ArrayView2<f64>,
    extra: ArrayView2<f64>,
    extra_source: &[Option<usize>],
    unlabeled: ArrayView2<f64>,
    hyper: &PriorHyper,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let folds = if positives.nrows() < hyper.folds || unlabeled.nrows() < hyper.folds {
        1
    } else {
        hyper.folds.max(1)
    };
    let all_pos = concatenate(Axis(0), &[positives, extra]).map_err(|_| Error::DimensionMismatch {
        context: "augmented positives",
        expected: positives.ncols(),
        got: extra.ncols(),
    })?;
    if folds == 1 {
        let model = train_coarse(all_pos.view(), unlabeled, hyper)?;
        return Ok((
            model.probability(positives)?.mapv(|p| 1.0 - p),
            model.probability(unlabeled)?.mapv(|p| 1.0 - p),
        ));
    }
    let mut rng = seeded(derive_seed(hyper.seed, 13));
    let mut fold_p = split_folds(positives.nrows(), folds, &mut rng);
    let free = split_folds(extra.nrows(), folds, &mut rng);
    let extra_folds: Vec<usize> = extra_source.iter().zip(&free).map(|(src, &f)| src.map_or(f, |s| fold_p[s])).collect();
    fold_p.extend(extra_folds);
    let fold_u = split_folds(unlabeled.nrows(), folds, &mut rng);
    let mut s_p = Array1::zeros(positives.nrows());
    let mut s_u = Array1::zeros(unlabeled.nrows());
    for f in 0..folds {
        let pick = |fold: &[usize], inside: bool| -> Vec<usize> { (0..fold.len()).filter(|&i| (fold[i] == f) == inside).collect() };
        let model = train_coarse(
            all_pos.select(Axis(0), &pick(&fold_p, false)).view(),
            unlabeled.select(Axis(0), &pick(&fold_u, false)).view(),
            &PriorHyper {
                seed: derive_seed(hyper.seed, 20 + f as u64),
                ..hyper.clone()
            },
        )?;
        let held_p: Vec<usize> = pick(&fold_p[..positives.nrows()], true);
        for (rows, x, out) in [(held_p, positives, &mut s_p), (pick(&fold_u, true), unlabeled, &mut s_u)] {
            let p = model.probability(x.select(Axis(0), &rows).view())?;
            for (k, &r) in rows.iter().enumerate() {
                out[r] = 1.0 - p[k];
            }
        }
    }
    Ok((s_p, s_u))
}

/// Estimates the fraction of positives in `data`'s unlabeled pool.
pub fn estimate_prior(data: &PuDataset, augmented_positives: ArrayView2<f64>, hyper: &PriorHyper) -> Result<PriorEstimate> {
    estimate_prior_traced(data, augmented_positives, None, hyper)
}

/// As [`estimate_prior`], with `sources[i]` the row of `data` that augmented
/// positive `i` was generated from, which keeps it out of that row's held-out fold.
pub fn estimate_prior_traced(
    data: &PuDataset,
    augmented_positives: ArrayView2<f64>,
    sources: Option<&[usize]>,
    hyper: &PriorHyper,
) -> Result<PriorEstimate> {
    data.require_trainable()?;
    let unlabeled = data.rows_of(PuLabel::Unlabeled);
    if unlabeled.nrows() == 0 {
        return Err(Error::EmptyInput("prior estimation needs unlabeled rows"));
    }
    if !(hyper.clamp > 0.0 && hyper.clamp < 0.5) {
        return Err(Error::invalid(format!("prior clamp {} outside (0, 0.5)", hyper.clamp)));
    }
    let pos_rows = data.indices_of(PuLabel::Positive);
    let extra_source: Vec<Option<usize>> = match sources {
        Some(src) => {
            if src.len() != augmented_positives.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "augmented positive sources",
                    expected: augmented_positives.nrows(),
                    got: src.len(),
                });
            }
            src.iter().map(|r| pos_rows.iter().position(|p| p == r)).collect()
        }
        None => vec![None; augmented_positives.nrows()],
    };
    let positives = data.rows_of(PuLabel::Positive);
    let (pos_scores, neg_scores) = held_out_scores(positives.view(), augmented_positives, &extra_source, unlabeled.view(), hyper)?;
    let positive_level = pos_scores.mean().expect("non-empty");
    Ok(prior_from_scores(neg_scores.view(), positive_level, hyper.clamp))
}

const MAX_REFINE: usize = 100;

/// The p_mean rule on precomputed negative-class scores of the unlabeled rows and
/// the mean negative-class score of the positives.
pub fn prior_from_scores(neg_scores: ArrayView1<f64>, positive_level: f64, clamp: f64) -> PriorEstimate {
    let n_u = neg_scores.len();
    let p_mean = neg_scores.sum() / n_u as f64;
    let (lo, hi) = (clamp, 1.0 - clamp);
    let (min, max) = neg_scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    let flat = max - min <= 1e-12;
    let (sum, reliable) = neg_scores
        .iter()
        .filter(|&&s| !flat && s > p_mean)
        .fold((0.0, 0usize), |(a, n), &s| (a + s, n + 1));
    let mut estimate = PriorEstimate {
        prior: 0.5 * (lo + hi),
        p_mean,
        reliable_negatives: reliable,
        n_unlabeled: n_u,
        negative_level: if reliable > 0 { sum / reliable as f64 } else { p_mean },
        positive_level,
        degenerate: true,
        iterations: 0,
    };
    let solve = |s_neg: f64| {
        let spread = s_neg - positive_level;
        (spread > 0.0).then(|| ((s_neg - p_mean) / spread).clamp(lo, hi))
    };
    if reliable == 0 {
        return estimate;
    }
    let Some(mut prior) = solve(estimate.negative_level) else {
        return estimate;
    };
    estimate.degenerate = false;
    let mut sorted = neg_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut prefix = Vec::with_capacity(n_u + 1);
    prefix.push(0.0);
    for s in &sorted {
        prefix.push(prefix.last().unwrap() + s);
    }
    for it in 1..=MAX_REFINE {
        let k = (((1.0 - prior) * n_u as f64).round() as usize).clamp(1, n_u);
        let level = prefix[k] / k as f64;
        let Some(next) = solve(level) else { break };
        estimate.negative_level = level;
        estimate.iterations = it;
        let done = (next - prior).abs() < 1e-12;
        prior = next;
        if done {
            break;
        }
    }
    estimate.prior = prior;
    estimate
}
