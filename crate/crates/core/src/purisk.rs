//! Positive-unlabeled risk estimators and the node training loop.
//!
//! With `z` the score of the model, `l` the surrogate loss, `pi` the class prior,
//! `P` the labeled positives and `U` the unlabeled rows:
//!
//! ```text
//! positive = pi/|P| sum_P l(z, +1)
//! bracket  = 1/|U| sum_U l(z, -1) - pi/|P| sum_P l(z, -1)
//! uPU      = positive + bracket
//! nnPU     = positive + max(0, bracket)
//! consist  = 1/N sum (sigma(z_child) - sigma(z_parent))^2
//! adv      = nnPU + lambda * consist
//! ```
//!
//! Training follows the non-negative policy: whenever a mini-batch's bracket is
//! negative the step descends on `-bracket` (plus the consistency term) instead
//! of the clamped total.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{PuDataset, PuLabel};
use crate::mlp::{logistic, AdamState, Mlp, MlpGrads};
use crate::rng::{derive_seed, seeded, Rng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateLoss {
    /// `l(z, y) = 1 / (1 + exp(y z))`
    #[default]
    Sigmoid,
}

impl SurrogateLoss {
    pub fn value(self, z: f64, y: f64) -> f64 {
        match self {
            SurrogateLoss::Sigmoid => logistic(-y * z),
        }
    }

    /// `d l(z, y) / d z`
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            SurrogateLoss::Sigmoid => {
                let s = logistic(-y * z);
                -y * s * (1.0 - s)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Upu,
    Nnpu,
    Adversarial,
}

/// Which risk a node model is trained on.
#[derive(Clone, Copy, Debug)]
pub struct RiskConfig<'a> {
    pub kind: EstimatorKind,
    pub prior: f64,
    pub lambda: f64,
    pub parent: Option<&'a Mlp>,
    pub loss: SurrogateLoss,
}

impl<'a> RiskConfig<'a> {
    pub fn upu(prior: f64) -> Self {
        Self {
            kind: EstimatorKind::Upu,
            prior,
            lambda: 0.0,
            parent: None,
            loss: SurrogateLoss::Sigmoid,
        }
    }

    pub fn nnpu(prior: f64) -> Self {
        Self {
            kind: EstimatorKind::Nnpu,
            ..Self::upu(prior)
        }
    }

    pub fn adversarial(prior: f64, lambda: f64, parent: &'a Mlp) -> Self {
        Self {
            kind: EstimatorKind::Adversarial,
            prior,
            lambda,
            parent: Some(parent),
            loss: SurrogateLoss::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return Err(Error::invalid(format!("prior {} outside (0, 1)", self.prior)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid(format!("consistency weight {} must be >= 0", self.lambda)));
        }
        if (self.kind == EstimatorKind::Adversarial) != self.parent.is_some() {
            return Err(Error::invalid("a parent model is required exactly for the adversarial risk"));
        }
        Ok(())
    }

    pub(crate) fn terms(&self) -> RiskTerms {
        RiskTerms {
            kind: self.kind,
            prior: self.prior,
            lambda: self.lambda,
            loss: self.loss,
        }
    }
}

/// Model-free description of an objective over logits.
#[derive(Clone, Copy, Debug)]
pub(crate) struct RiskTerms {
    pub kind: EstimatorKind,
    pub prior: f64,
    pub lambda: f64,
    pub loss: SurrogateLoss,
}

/// The two pieces every estimator is assembled from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskParts {
    pub positive: f64,
    pub bracket: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NnpuRisk {
    pub total: f64,
    pub positive_part: f64,
    pub corrected_negative_part: f64,
}

impl RiskParts {
    pub fn upu(&self) -> f64 {
        self.positive + self.bracket
    }

    pub fn nnpu(&self) -> NnpuRisk {
        let corrected = self.bracket.max(0.0);
        NnpuRisk {
            total: self.positive + corrected,
            positive_part: self.positive,
            corrected_negative_part: corrected,
        }
    }
}

fn partition_counts(labels: &[PuLabel]) -> Result<(usize, usize)> {
    let n_p = labels.iter().filter(|l| **l == PuLabel::Positive).count();
    let n_u = labels.len() - n_p;
    if n_p == 0 {
        return Err(Error::EmptyInput("risk needs at least one labeled positive"));
    }
    if n_u == 0 {
        return Err(Error::EmptyInput("risk needs at least one unlabeled row"));
    }
    Ok((n_p, n_u))
}

/// Risk pieces from precomputed scores.
pub fn risk_parts(logits: ArrayView1<f64>, labels: &[PuLabel], loss: SurrogateLoss, prior: f64) -> Result<RiskParts> {
    if logits.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "risk logits",
            expected: labels.len(),
            got: logits.len(),
        });
    }
    let (n_p, n_u) = partition_counts(labels)?;
    let (mut pos_plus, mut pos_minus, mut unl_minus) = (0.0, 0.0, 0.0);
    for (&z, l) in logits.iter().zip(labels) {
        match l {
            PuLabel::Positive => {
                pos_plus += loss.value(z, 1.0);
                pos_minus += loss.value(z, -1.0);
            }
            PuLabel::Unlabeled => unl_minus += loss.value(z, -1.0),
        }
    }
    let a = prior / n_p as f64;
    Ok(RiskParts {
        positive: a * pos_plus,
        bracket: unl_minus / n_u as f64 - a * pos_minus,
    })
}

/// Gradients of `positive` and `bracket` with respect to each logit.
fn risk_parts_grad(
    logits: ArrayView1<f64>,
    labels: &[PuLabel],
    loss: SurrogateLoss,
    prior: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let (n_p, n_u) = partition_counts(labels)?;
    let a = prior / n_p as f64;
    let mut d_pos = Array1::zeros(logits.len());
    let mut d_br = Array1::zeros(logits.len());
    for (i, (&z, l)) in logits.iter().zip(labels).enumerate() {
        match l {
            PuLabel::Positive => {
                d_pos[i] = a * loss.derivative(z, 1.0);
                d_br[i] = -a * loss.derivative(z, -1.0);
            }
            PuLabel::Unlabeled => d_br[i] = loss.derivative(z, -1.0) / n_u as f64,
        }
    }
    Ok((d_pos, d_br))
}

/// Mean squared difference between child probabilities and fixed parent probabilities.
fn consistency_from(child_logits: ArrayView1<f64>, parent_probs: ArrayView1<f64>) -> f64 {
    let n = child_logits.len() as f64;
    child_logits
        .iter()
        .zip(parent_probs)
        .map(|(&z, &p)| (logistic(z) - p).powi(2))
        .sum::<f64>()
        / n
}

fn consistency_grad(child_logits: ArrayView1<f64>, parent_probs: ArrayView1<f64>) -> Array1<f64> {
    let n = child_logits.len() as f64;
    Array1::from_iter(child_logits.iter().zip(parent_probs).map(|(&z, &p)| {
        let s = logistic(z);
        2.0 / n * (s - p) * s * (1.0 - s)
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientPolicy {
    /// Gradient of the reported objective value.
    Exact,
    /// Non-negative training rule: descend on `-bracket` when it is negative.
    NonNegative,
}

/// Objective breakdown on one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskValue {
    pub total: f64,
    pub positive: f64,
    pub bracket: f64,
    pub consistency: f64,
}

/// Objective value and its gradient with respect to the logits.
pub(crate) fn logit_objective(
    logits: ArrayView1<f64>,
    labels: &[PuLabel],
    parent_probs: Option<ArrayView1<f64>>,
    terms: RiskTerms,
    policy: GradientPolicy,
) -> Result<(RiskValue, Array1<f64>)> {
    let parts = risk_parts(logits, labels, terms.loss, terms.prior)?;
    let (d_pos, d_br) = risk_parts_grad(logits, labels, terms.loss, terms.prior)?;
    let (mut total, mut grad) = match terms.kind {
        EstimatorKind::Upu => (parts.upu(), &d_pos + &d_br),
        EstimatorKind::Nnpu | EstimatorKind::Adversarial => {
            let total = parts.nnpu().total;
            let grad = if parts.bracket >= 0.0 {
                &d_pos + &d_br
            } else {
                match policy {
                    GradientPolicy::Exact => d_pos,
                    GradientPolicy::NonNegative => -d_br,
                }
            };
            (total, grad)
        }
    };
    let mut consistency = 0.0;
    if terms.kind == EstimatorKind::Adversarial {
        let pp = parent_probs.ok_or_else(|| Error::invalid("adversarial risk needs parent predictions"))?;
        if pp.len() != logits.len() {
            return Err(Error::DimensionMismatch {
                context: "parent predictions",
                expected: logits.len(),
                got: pp.len(),
            });
        }
        consistency = consistency_from(logits, pp);
        total += terms.lambda * consistency;
        grad.scaled_add(terms.lambda, &consistency_grad(logits, pp));
    }
    Ok((
        RiskValue {
            total,
            positive: parts.positive,
            bracket: parts.bracket,
            consistency,
        },
        grad,
    ))
}

pub fn upu_risk(model: &Mlp, batch: &PuDataset, loss: SurrogateLoss, prior: f64) -> Result<f64> {
    let z = model.forward(batch.features())?;
    Ok(risk_parts(z.view(), batch.labels(), loss, prior)?.upu())
}

pub fn nnpu_risk(model: &Mlp, batch: &PuDataset, loss: SurrogateLoss, prior: f64) -> Result<NnpuRisk> {
    let z = model.forward(batch.features())?;
    Ok(risk_parts(z.view(), batch.labels(), loss, prior)?.nnpu())
}

pub fn consistency_risk(child: &Mlp, parent: &Mlp, features: ArrayView2<f64>) -> Result<f64> {
    if features.nrows() == 0 {
        return Err(Error::EmptyInput("consistency needs at least one row"));
    }
    let z = child.forward(features)?;
    let p = parent.probability(features)?;
    Ok(consistency_from(z.view(), p.view()))
}

pub fn adversarial_risk(
    child: &Mlp,
    parent: &Mlp,
    batch: &PuDataset,
    loss: SurrogateLoss,
    prior: f64,
    lambda: f64,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("consistency weight {lambda} must be >= 0")));
    }
    let nn = nnpu_risk(child, batch, loss, prior)?;
    Ok(nn.total + lambda * consistency_risk(child, parent, batch.features())?)
}

/// Value and parameter gradient of the configured risk on a batch.
pub fn risk_gradient(
    model: &Mlp,
    batch: &PuDataset,
    config: &RiskConfig<'_>,
    policy: GradientPolicy,
) -> Result<(RiskValue, MlpGrads)> {
    config.validate()?;
    let trace = model.forward_trace(batch.features())?;
    let parent_probs = config.parent.map(|p| p.probability(batch.features())).transpose()?;
    let (value, dz) = logit_objective(
        trace.logits.view(),
        batch.labels(),
        parent_probs.as_ref().map(|p| p.view()),
        config.terms(),
        policy,
    )?;
    Ok((value, model.backward_trace(&trace, dz.view())?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Evaluate the full-data objective after every epoch.
    pub record_trace: bool,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 4000,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            hidden: vec![300; 5],
            seed: 0,
            record_trace: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub positive: f64,
    pub bracket: f64,
    pub consistency: f64,
}

/// Mini-batches that keep the positive/unlabeled ratio of the full data.
pub(crate) fn stratified_batches(labels: &[PuLabel], batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == PuLabel::Positive).collect();
    let mut unl: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == PuLabel::Unlabeled).collect();
    pos.shuffle(rng);
    unl.shuffle(rng);
    let mut n_batches = labels.len().div_ceil(batch_size.max(1)).max(1);
    if !pos.is_empty() {
        n_batches = n_batches.min(pos.len());
    }
    if !unl.is_empty() {
        n_batches = n_batches.min(unl.len());
    }
    (0..n_batches)
        .map(|b| {
            let mut batch: Vec<usize> = pos[b * pos.len() / n_batches..(b + 1) * pos.len() / n_batches].to_vec();
            batch.extend_from_slice(&unl[b * unl.len() / n_batches..(b + 1) * unl.len() / n_batches]);
            batch
        })
        .collect()
}

pub fn train_pu(data: &PuDataset, config: &RiskConfig<'_>, hyper: &TrainHyper) -> Result<Mlp> {
    train_pu_traced(data, config, hyper).map(|(m, _)| m)
}

/// Trains a fresh network and returns it with the per-epoch full-data objective
/// (empty unless `record_trace` is set or debug logging is enabled).
pub fn train_pu_traced(
    data: &PuDataset,
    config: &RiskConfig<'_>,
    hyper: &TrainHyper,
) -> Result<(Mlp, Vec<EpochRecord>)> {
    config.validate()?;
    data.require_trainable()?;
    if data.n_unlabeled() == 0 {
        return Err(Error::EmptyInput("training needs unlabeled rows"));
    }
    let mut model = Mlp::new(data.dim(), &hyper.hidden, derive_seed(hyper.seed, 1))?;
    let parent_probs = config.parent.map(|p| p.probability(data.features())).transpose()?;
    let terms = config.terms();
    let mut adam = AdamState::new(&model, hyper.learning_rate);
    adam.weight_decay = hyper.weight_decay;
    let mut rng = seeded(derive_seed(hyper.seed, 2));
    let trace_on = hyper.record_trace || log::log_enabled!(log::Level::Debug);
    let mut trace = Vec::new();

    for epoch in 0..hyper.epochs {
        for rows in stratified_batches(data.labels(), hyper.batch_size, &mut rng) {
            let x = data.features().select(Axis(0), &rows);
            let labels: Vec<PuLabel> = rows.iter().map(|&r| data.labels()[r]).collect();
            let pp = parent_probs.as_ref().map(|p| p.select(Axis(0), &rows));
            let fwd = model.forward_trace(x.view())?;
            let (_, dz) = logit_objective(
                fwd.logits.view(),
                &labels,
                pp.as_ref().map(|p| p.view()),
                terms,
                GradientPolicy::NonNegative,
            )?;
            let grads = model.backward_trace(&fwd, dz.view())?;
            adam.step(&mut model, &grads)?;
        }
        if trace_on {
            let z = model.forward(data.features())?;
            let (v, _) = logit_objective(
                z.view(),
                data.labels(),
                parent_probs.as_ref().map(|p| p.view()),
                terms,
                GradientPolicy::Exact,
            )?;
            log::debug!(
                "epoch={} total={:.6} positive={:.6} bracket={:.6} consistency={:.6}",
                epoch,
                v.total,
                v.positive,
                v.bracket,
                v.consistency
            );
            trace.push(EpochRecord {
                epoch,
                total: v.total,
                positive: v.positive,
                bracket: v.bracket,
                consistency: v.consistency,
            });
        }
    }
    Ok((model, trace))
}
