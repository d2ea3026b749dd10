//! Mask-recovery augmentation.
//!
//! The most important features of a node model are masked, a multi-output ridge
//! model learns to predict them from the rest, and synthetic rows are produced by
//! jittering the unmasked features of resampled rows and regenerating the masked
//! ones through the recovery model.
//!
//! With [`RecoveryFit::ByLabel`] synthetic positives are regenerated by a second
//! recovery model fitted on the labeled positives alone, so their masked values
//! are not pulled towards the unlabeled majority.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{fit_discretizer, PuDataset, PuLabel};
use crate::explain::{explain_anchors, mean_abs_coefficients, ExplainBudget};
use crate::mlp::{fit_ridge, RidgeRegressor, Scorer};
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceMethod {
    #[default]
    Explainer,
    Permutation,
}

/// Rows the recovery model for synthetic positives is fitted on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryFit {
    /// One model on all node rows.
    Pooled,
    /// Labeled positives get their own model when there are more of them than
    /// unmasked features.
    #[default]
    ByLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Synthetic rows per original row.
    pub multiplier: f64,
    /// Upper bound on the multiplier after topping small nodes up.
    pub max_multiplier: f64,
    pub mask_fraction: f64,
    /// Noise scale relative to each feature's standard deviation.
    pub perturbation: f64,
    pub ridge: f64,
    pub importance: ImportanceMethod,
    pub recovery: RecoveryFit,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            multiplier: 1.0,
            max_multiplier: 4.0,
            mask_fraction: 0.15,
            perturbation: 0.1,
            ridge: 1e-3,
            importance: ImportanceMethod::Explainer,
            recovery: RecoveryFit::default(),
        }
    }
}

impl AugmentConfig {
    /// The configured multiplier, raised so that a node of `n` rows reaches
    /// `min_rows` when possible, and capped at `max_multiplier`.
    pub fn effective_multiplier(&self, n: usize, min_rows: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let top_up = min_rows as f64 / n as f64 - 1.0;
        self.multiplier.max(top_up).min(self.max_multiplier.max(self.multiplier))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub mask: Vec<usize>,
    pub unmasked: Vec<usize>,
    /// Maps unmasked columns to masked columns.
    pub recovery: RidgeRegressor,
    /// Used instead of `recovery` for positive rows when present.
    #[serde(default)]
    pub positive_recovery: Option<RidgeRegressor>,
    /// Noise standard deviation per unmasked column.
    pub sigma: Vec<f64>,
}

/// What augmentation did at one node.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub mask: Vec<usize>,
    pub multiplier: f64,
    pub positives_added: usize,
    pub unlabeled_added: usize,
    pub skipped: Option<String>,
}

/// `ceil(fraction * d)`, at least one.
pub fn mask_count(d: usize, fraction: f64) -> usize {
    ((fraction * d as f64).ceil() as usize).max(1)
}

/// Importance of each original feature for `model` on `features`.
///
/// With the explainer method it is the largest mean absolute surrogate coefficient
/// among the feature's bins; with the permutation method it is the mean absolute
/// change in predicted probability after shuffling the column.
pub fn rank_features(
    model: &dyn Scorer,
    features: ArrayView2<f64>,
    method: ImportanceMethod,
    budget: &ExplainBudget,
    seed: u64,
) -> Result<Array1<f64>> {
    budget.validate()?;
    if features.nrows() == 0 {
        return Err(Error::EmptyInput("feature ranking needs rows"));
    }
    let d = features.ncols();
    match method {
        ImportanceMethod::Explainer => {
            let disc = fit_discretizer(features, budget.scheme)?;
            let explainers = explain_anchors(model, None, features, &disc, budget, seed)?;
            let per_bin = mean_abs_coefficients(&explainers, disc.n_bins_total());
            let mut out = Array1::zeros(d);
            for (g, &v) in per_bin.iter().enumerate() {
                let (f, _) = disc.feature_of(g);
                out[f] = f64::max(out[f], v);
            }
            Ok(out)
        }
        ImportanceMethod::Permutation => {
            let mut rng = seeded(derive_seed(seed, 41));
            let n = features.nrows().min(budget.anchors * budget.neighbors);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..features.nrows())).collect();
            let x = features.select(Axis(0), &rows);
            let base = model.probability(x.view())?;
            let mut out = Array1::zeros(d);
            for f in 0..d {
                let mut shuffled = x.clone();
                let perm = crate::rng::permutation(n, &mut rng);
                for (i, &j) in perm.iter().enumerate() {
                    shuffled[[i, f]] = x[[j, f]];
                }
                let p = model.probability(shuffled.view())?;
                out[f] = (&p - &base).mapv(f64::abs).mean().unwrap_or(0.0);
            }
            Ok(out)
        }
    }
}

/// Indices of the `k` largest importances; ties go to the lower index.
pub fn top_features(importance: &Array1<f64>, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]));
    order.truncate(k);
    order
}

/// Fits the recovery model for `mask` and the per-column noise scales.
pub fn fit_recovery(features: ArrayView2<f64>, mask: &[usize], perturbation: f64, ridge: f64) -> Result<AugmentationPlan> {
    let d = features.ncols();
    if features.nrows() == 0 {
        return Err(Error::EmptyInput("recovery fit needs rows"));
    }
    if mask.is_empty() || mask.iter().any(|&f| f >= d) {
        return Err(Error::invalid("mask must be a non-empty set of valid columns"));
    }
    let mut sorted = mask.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != mask.len() {
        return Err(Error::invalid("mask has repeated columns"));
    }
    if mask.len() >= d {
        return Err(Error::invalid("mask covers every feature; nothing left to recover from"));
    }
    if !(perturbation >= 0.0) {
        return Err(Error::invalid("perturbation factor must be non-negative"));
    }
    let unmasked: Vec<usize> = (0..d).filter(|f| !mask.contains(f)).collect();
    let inputs = features.select(Axis(1), &unmasked);
    let targets = features.select(Axis(1), mask);
    let ones = Array1::ones(features.nrows());
    let recovery = fit_ridge(inputs.view(), targets.view(), ones.view(), ridge)?;
    let n = features.nrows() as f64;
    let sigma = inputs
        .columns()
        .into_iter()
        .map(|c| {
            if features.nrows() < 2 {
                return 0.0;
            }
            let m = c.sum() / n;
            (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() * perturbation
        })
        .collect();
    Ok(AugmentationPlan {
        mask: mask.to_vec(),
        unmasked,
        recovery,
        positive_recovery: None,
        sigma,
    })
}

impl AugmentationPlan {
    /// Masked columns predicted from the unmasked ones of full-width rows.
    pub fn recover(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.recovery.predict(rows.select(Axis(1), &self.unmasked).view())
    }

    /// As [`recover`](Self::recover), with the model meant for rows of `label`.
    pub fn recover_for(&self, label: PuLabel, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        match (&self.positive_recovery, label) {
            (Some(r), PuLabel::Positive) => r.predict(rows.select(Axis(1), &self.unmasked).view()),
            _ => self.recover(rows),
        }
    }

    /// Adds a recovery model fitted on the positive rows of `data`. Left out when
    /// the positives do not outnumber the unmasked features.
    pub fn with_positive_recovery(mut self, data: &PuDataset, ridge: f64) -> Result<Self> {
        let pos = data.indices_of(PuLabel::Positive);
        self.positive_recovery = None;
        if pos.len() > self.unmasked.len() {
            let x = data.features().select(Axis(0), &pos);
            let inputs = x.select(Axis(1), &self.unmasked);
            let targets = x.select(Axis(1), &self.mask);
            let ones = Array1::ones(pos.len());
            self.positive_recovery = Some(fit_ridge(inputs.view(), targets.view(), ones.view(), ridge)?);
        }
        Ok(self)
    }
}

/// Appends `round(multiplier * n_p)` positive and `round(multiplier * n_u)`
/// unlabeled synthetic rows. Sources are drawn with replacement within each label.
pub fn augment(data: &PuDataset, plan: &AugmentationPlan, multiplier: f64, seed: u64) -> Result<PuDataset> {
    augment_traced(data, plan, multiplier, seed).map(|(d, _)| d)
}

/// As [`augment`], also returning the source row in `data` of every appended row.
pub fn augment_traced(data: &PuDataset, plan: &AugmentationPlan, multiplier: f64, seed: u64) -> Result<(PuDataset, Vec<usize>)> {
    if !(multiplier >= 0.0) || !multiplier.is_finite() {
        return Err(Error::invalid(format!("augmentation multiplier {multiplier} must be finite and non-negative")));
    }
    let d = data.dim();
    if plan.mask.len() + plan.unmasked.len() != d {
        return Err(Error::DimensionMismatch {
            context: "augmentation plan width",
            expected: d,
            got: plan.mask.len() + plan.unmasked.len(),
        });
    }
    let mut rng = seeded(seed);
    let mut sources = Vec::new();
    let mut labels = Vec::new();
    for label in [PuLabel::Positive, PuLabel::Unlabeled] {
        let pool = data.indices_of(label);
        if pool.is_empty() {
            continue;
        }
        let count = (multiplier * pool.len() as f64).round() as usize;
        for _ in 0..count {
            sources.push(pool[rng.random_range(0..pool.len())]);
            labels.push(label);
        }
    }
    if sources.is_empty() {
        return Ok((data.clone(), sources));
    }
    let mut rows = data.features().select(Axis(0), &sources);
    for (k, &f) in plan.unmasked.iter().enumerate() {
        if plan.sigma[k] > 0.0 {
            let noise = Normal::new(0.0, plan.sigma[k]).expect("finite sigma");
            for v in rows.column_mut(f) {
                *v += noise.sample(&mut rng);
            }
        }
    }
    let n_pos = labels.iter().take_while(|&&l| l == PuLabel::Positive).count();
    for (range, label) in [(0..n_pos, PuLabel::Positive), (n_pos..rows.nrows(), PuLabel::Unlabeled)] {
        let mut part = rows.slice_mut(ndarray::s![range, ..]);
        if part.nrows() == 0 {
            continue;
        }
        let recovered = plan.recover_for(label, part.view())?;
        for (k, &f) in plan.mask.iter().enumerate() {
            part.column_mut(f).assign(&recovered.column(k));
        }
    }
    Ok((data.append(rows.view(), &labels)?, sources))
}
