//! PU splits of labeled data and synthetic generators with known ground truth.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{Class, LabeledDataset, PuDataset, PuLabel};
use crate::rng::{derive_seed, permutation, seeded, Rng};
use crate::{Error, Result};

fn split_by_class(labels: &[Class]) -> (Vec<usize>, Vec<usize>) {
    (0..labels.len()).partition(|&i| labels[i] == Class::Positive)
}

/// Draws a PU training set from labeled data: `n_labeled_pos` labeled positives
/// plus an unlabeled pool of `n_unlabeled` rows of which `round(fraction * n)` are
/// hidden positives. Returns the PU view and the hidden truth for the same rows.
pub fn make_pu_with_truth(
    data: &LabeledDataset,
    n_labeled_pos: usize,
    n_unlabeled: usize,
    unlabeled_pos_fraction: f64,
    seed: u64,
) -> Result<(PuDataset, LabeledDataset)> {
    if !(unlabeled_pos_fraction > 0.0 && unlabeled_pos_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "unlabeled positive fraction {unlabeled_pos_fraction} outside (0, 1)"
        )));
    }
    let n_hidden_pos = (unlabeled_pos_fraction * n_unlabeled as f64).round() as usize;
    let n_hidden_neg = n_unlabeled - n_hidden_pos;
    let (pos, neg) = split_by_class(data.labels());
    if pos.len() < n_labeled_pos + n_hidden_pos {
        return Err(Error::Capacity {
            what: "positives",
            needed: n_labeled_pos + n_hidden_pos,
            available: pos.len(),
        });
    }
    if neg.len() < n_hidden_neg {
        return Err(Error::Capacity {
            what: "negatives",
            needed: n_hidden_neg,
            available: neg.len(),
        });
    }
    let mut rng = seeded(seed);
    let pos_order = permutation(pos.len(), &mut rng);
    let neg_order = permutation(neg.len(), &mut rng);
    let labeled: Vec<usize> = pos_order[..n_labeled_pos].iter().map(|&i| pos[i]).collect();
    let mut unlabeled: Vec<usize> = pos_order[n_labeled_pos..n_labeled_pos + n_hidden_pos]
        .iter()
        .map(|&i| pos[i])
        .chain(neg_order[..n_hidden_neg].iter().map(|&i| neg[i]))
        .collect();
    let shuffle = permutation(unlabeled.len(), &mut rng);
    unlabeled = shuffle.iter().map(|&i| unlabeled[i]).collect();

    let rows: Vec<usize> = labeled.iter().chain(unlabeled.iter()).copied().collect();
    let truth = data.select(&rows);
    let mut pu_labels = vec![PuLabel::Positive; n_labeled_pos];
    pu_labels.resize(rows.len(), PuLabel::Unlabeled);
    let pu = PuDataset::new(
        truth.features().to_owned(),
        pu_labels,
        unlabeled_pos_fraction,
        data.feature_names().to_vec(),
    )?;
    Ok((pu, truth))
}

pub fn make_pu(
    data: &LabeledDataset,
    n_labeled_pos: usize,
    n_unlabeled: usize,
    unlabeled_pos_fraction: f64,
    seed: u64,
) -> Result<PuDataset> {
    make_pu_with_truth(data, n_labeled_pos, n_unlabeled, unlabeled_pos_fraction, seed).map(|(pu, _)| pu)
}

/// Labeled subsample with `round(pos_fraction * n)` positives, shuffled.
pub fn sample_labeled(data: &LabeledDataset, n: usize, pos_fraction: f64, seed: u64) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&pos_fraction) {
        return Err(Error::invalid(format!("positive fraction {pos_fraction} outside [0, 1]")));
    }
    let n_pos = (pos_fraction * n as f64).round() as usize;
    let n_neg = n - n_pos;
    let (pos, neg) = split_by_class(data.labels());
    if pos.len() < n_pos {
        return Err(Error::Capacity {
            what: "positives",
            needed: n_pos,
            available: pos.len(),
        });
    }
    if neg.len() < n_neg {
        return Err(Error::Capacity {
            what: "negatives",
            needed: n_neg,
            available: neg.len(),
        });
    }
    let mut rng = seeded(seed);
    let po = permutation(pos.len(), &mut rng);
    let no = permutation(neg.len(), &mut rng);
    let rows: Vec<usize> = po[..n_pos]
        .iter()
        .map(|&i| pos[i])
        .chain(no[..n_neg].iter().map(|&i| neg[i]))
        .collect();
    let order = permutation(rows.len(), &mut rng);
    let rows: Vec<usize> = order.iter().map(|&i| rows[i]).collect();
    Ok(data.select(&rows))
}

/// Builds rows from a per-class generator; labeled positives first, then a
/// shuffled unlabeled pool with `round(prior * n_unlabeled)` hidden positives.
fn synth_pu_from<F>(
    n_pos: usize,
    n_unlabeled: usize,
    prior: f64,
    dim: usize,
    names: Vec<String>,
    seed: u64,
    mut draw: F,
) -> Result<(PuDataset, LabeledDataset)>
where
    F: FnMut(Class, &mut Rng, &mut [f64]),
{
    if !(prior > 0.0 && prior < 1.0) {
        return Err(Error::invalid(format!("prior {prior} outside (0, 1)")));
    }
    let n_hidden = (prior * n_unlabeled as f64).round() as usize;
    let mut classes = vec![Class::Positive; n_hidden];
    classes.resize(n_unlabeled, Class::Negative);
    let mut rng = seeded(seed);
    let order = permutation(n_unlabeled, &mut rng);
    let mut truth: Vec<Class> = vec![Class::Positive; n_pos];
    truth.extend(order.iter().map(|&i| classes[i]));

    let n = truth.len();
    let mut x = Array2::<f64>::zeros((n, dim));
    for (i, c) in truth.iter().enumerate() {
        draw(*c, &mut rng, x.row_mut(i).as_slice_mut().expect("standard layout"));
    }
    let mut pu_labels = vec![PuLabel::Positive; n_pos];
    pu_labels.resize(n, PuLabel::Unlabeled);
    let pu = PuDataset::new(x.clone(), pu_labels, prior, names.clone())?;
    let gt = LabeledDataset::new(x, truth, names)?;
    Ok((pu, gt))
}

fn synth_labeled_from<F>(n: usize, pos_fraction: f64, dim: usize, names: Vec<String>, seed: u64, mut draw: F) -> Result<LabeledDataset>
where
    F: FnMut(Class, &mut Rng, &mut [f64]),
{
    if !(0.0..=1.0).contains(&pos_fraction) {
        return Err(Error::invalid(format!("positive fraction {pos_fraction} outside [0, 1]")));
    }
    let n_pos = (pos_fraction * n as f64).round() as usize;
    let mut classes = vec![Class::Positive; n_pos];
    classes.resize(n, Class::Negative);
    let mut rng = seeded(seed);
    let order = permutation(n, &mut rng);
    let labels: Vec<Class> = order.iter().map(|&i| classes[i]).collect();
    let mut x = Array2::<f64>::zeros((n, dim));
    for (i, c) in labels.iter().enumerate() {
        draw(*c, &mut rng, x.row_mut(i).as_slice_mut().expect("standard layout"));
    }
    LabeledDataset::new(x, labels, names)
}

fn gaussian_draw(dim: usize, separation: f64) -> impl FnMut(Class, &mut Rng, &mut [f64]) {
    // Means at +-separation/2 along the unit diagonal, identity covariance.
    let offset = 0.5 * separation / (dim as f64).sqrt();
    move |c, rng, row| {
        let m = c.sign() * offset;
        for v in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = m + z;
        }
    }
}

fn check_gaussian(dim: usize, separation: f64) -> Result<()> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if !(separation >= 0.0) {
        return Err(Error::invalid(format!("separation {separation} must be non-negative")));
    }
    Ok(())
}

fn numbered(prefix: &str, dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("{prefix}{i}")).collect()
}

/// Two unit-covariance Gaussians whose means are `separation` apart.
pub fn synth_gaussian_pu(
    n_pos: usize,
    n_unlabeled: usize,
    prior: f64,
    dimension: usize,
    separation: f64,
    seed: u64,
) -> Result<(PuDataset, LabeledDataset)> {
    check_gaussian(dimension, separation)?;
    synth_pu_from(
        n_pos,
        n_unlabeled,
        prior,
        dimension,
        numbered("x", dimension),
        seed,
        gaussian_draw(dimension, separation),
    )
}

/// Labeled test draw from the same two-Gaussian model.
pub fn synth_gaussian_labeled(n: usize, pos_fraction: f64, dimension: usize, separation: f64, seed: u64) -> Result<LabeledDataset> {
    check_gaussian(dimension, separation)?;
    synth_labeled_from(
        n,
        pos_fraction,
        dimension,
        numbered("x", dimension),
        seed,
        gaussian_draw(dimension, separation),
    )
}

/// Screening-style data with community structure.
///
/// Feature 0 (`age`) places every row in one of two communities by its sign.
/// The product frequencies come in blocks of six that share one latent factor
/// (`loading` on the factor plus unit-variance-completing noise), so any one of
/// them is partly predictable from its block. Positives raise factor 0 in the
/// lower community and factor 1 in the upper one by `shift`, and factor 2 by
/// half of it everywhere. Positives are over-represented in the upper community.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CommunitySynth {
    pub dimension: usize,
    pub prior: f64,
    pub shift: f64,
    pub loading: f64,
}

const FACTOR_BLOCK: usize = 6;

impl Default for CommunitySynth {
    fn default() -> Self {
        Self {
            dimension: 24,
            prior: 0.124,
            shift: 2.0,
            loading: 0.8,
        }
    }
}

impl CommunitySynth {
    fn check(&self) -> Result<()> {
        if self.dimension < 2 * FACTOR_BLOCK + 2 {
            return Err(Error::invalid(format!(
                "community synthesis needs at least {} features",
                2 * FACTOR_BLOCK + 2
            )));
        }
        if !(self.loading > 0.0 && self.loading < 1.0) {
            return Err(Error::invalid(format!("factor loading {} outside (0, 1)", self.loading)));
        }
        Ok(())
    }

    fn names(&self) -> Vec<String> {
        std::iter::once("age".to_string())
            .chain((1..self.dimension).map(|i| format!("product_freq_{i}")))
            .collect()
    }

    fn draw(&self) -> impl FnMut(Class, &mut Rng, &mut [f64]) {
        let (shift, loading) = (self.shift, self.loading);
        let noise = (1.0 - loading * loading).sqrt();
        let factors = (self.dimension - 1).div_ceil(FACTOR_BLOCK);
        let mut z = vec![0.0; factors];
        move |c, rng, row| {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let p_upper = if c == Class::Positive { 0.65 } else { 0.4 };
            let upper = rng.random::<f64>() < p_upper;
            if c == Class::Positive {
                z[if upper { 1 } else { 0 }] += shift;
                z[2] += 0.5 * shift;
            }
            let a: f64 = rng.sample::<f64, _>(StandardNormal).abs() + 0.1;
            row[0] = if upper { a } else { -a };
            for (j, v) in row.iter_mut().enumerate().skip(1) {
                let e: f64 = rng.sample(StandardNormal);
                *v = loading * z[(j - 1) / FACTOR_BLOCK] + noise * e;
            }
        }
    }
}

pub fn synth_community_pu(cfg: &CommunitySynth, n_pos: usize, n_unlabeled: usize, seed: u64) -> Result<(PuDataset, LabeledDataset)> {
    cfg.check()?;
    synth_pu_from(n_pos, n_unlabeled, cfg.prior, cfg.dimension, cfg.names(), seed, cfg.draw())
}

pub fn synth_community_labeled(cfg: &CommunitySynth, n: usize, seed: u64) -> Result<LabeledDataset> {
    cfg.check()?;
    synth_labeled_from(n, cfg.prior, cfg.dimension, cfg.names(), derive_seed(seed, 0x7e57), cfg.draw())
}
