//! Gated fusion of the models on one root-to-leaf path.
//!
//! Each path model contributes its last hidden representation `Q_i`. Per depth,
//! a value transform `V_i = relu(Q_i W_V^i + b)` and a gate
//! `K_i = logistic([Q_0 .. Q_h] w_K^i + c_i)` are formed, and the fused score is
//! the linear head applied to `sum_i K_i V_i`. Path models are read-only here.

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{PuDataset, PuLabel};
use crate::mlp::{logistic, AdamState, Mlp, ParamSet};
use crate::purisk::{logit_objective, stratified_batches, GradientPolicy, RiskConfig, RiskValue};
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionNetwork {
    /// Hidden width of each path model, root first.
    pub input_widths: Vec<usize>,
    pub fusion_width: usize,
    pub value_w: Vec<Array2<f64>>,
    pub value_b: Vec<Array1<f64>>,
    /// `sum(input_widths) x depth`; column `i` feeds gate `i`.
    pub gate_w: Array2<f64>,
    pub gate_b: Array1<f64>,
    pub head_w: Array1<f64>,
    /// Single element.
    pub head_b: Array1<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct FusionTrace {
    concat: Array2<f64>,
    pre: Vec<Array2<f64>>,
    values: Vec<Array2<f64>>,
    /// `rows x depth`
    pub gates: Array2<f64>,
    fused: Array2<f64>,
    pub logits: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Defaults to the leaf model's hidden width.
    pub fusion_width: Option<usize>,
    pub seed: u64,
}

impl Default for FusionHyper {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 4000,
            learning_rate: 1e-4,
            fusion_width: None,
            seed: 0,
        }
    }
}

fn uniform(rows: usize, cols: usize, limit: f64, rng: &mut crate::rng::Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

impl FusionNetwork {
    pub fn new(input_widths: &[usize], fusion_width: usize, seed: u64) -> Result<Self> {
        if input_widths.is_empty() || input_widths.contains(&0) || fusion_width == 0 {
            return Err(Error::invalid("fusion needs a non-empty path of positive widths"));
        }
        let mut rng = seeded(seed);
        let total: usize = input_widths.iter().sum();
        let depth = input_widths.len();
        let value_w = input_widths
            .iter()
            .map(|&h| uniform(h, fusion_width, (6.0 / h as f64).sqrt(), &mut rng))
            .collect();
        let gate_w = uniform(total, depth, (1.0 / total as f64).sqrt(), &mut rng);
        let head_w = uniform(fusion_width, 1, (1.0 / fusion_width as f64).sqrt(), &mut rng).index_axis_move(Axis(1), 0);
        Ok(Self {
            input_widths: input_widths.to_vec(),
            fusion_width,
            value_w,
            value_b: vec![Array1::zeros(fusion_width); depth],
            gate_w,
            gate_b: Array1::zeros(depth),
            head_w,
            head_b: Array1::zeros(1),
        })
    }

    pub fn depth(&self) -> usize {
        self.input_widths.len()
    }

    fn zeros_like(&self) -> Self {
        Self {
            input_widths: self.input_widths.clone(),
            fusion_width: self.fusion_width,
            value_w: self.value_w.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            value_b: self.value_b.iter().map(|b| Array1::zeros(b.len())).collect(),
            gate_w: Array2::zeros(self.gate_w.raw_dim()),
            gate_b: Array1::zeros(self.gate_b.len()),
            head_w: Array1::zeros(self.head_w.len()),
            head_b: Array1::zeros(1),
        }
    }

    fn check(&self, q: &[Array2<f64>]) -> Result<usize> {
        if q.len() != self.depth() {
            return Err(Error::DimensionMismatch {
                context: "fusion path length",
                expected: self.depth(),
                got: q.len(),
            });
        }
        let n = q[0].nrows();
        for (qi, &w) in q.iter().zip(&self.input_widths) {
            if qi.ncols() != w || qi.nrows() != n {
                return Err(Error::DimensionMismatch {
                    context: "fusion hidden representation",
                    expected: w,
                    got: qi.ncols(),
                });
            }
        }
        Ok(n)
    }

    /// Forward pass over precomputed path representations.
    pub fn forward_q(&self, q: &[Array2<f64>]) -> Result<FusionTrace> {
        self.check(q)?;
        let views: Vec<ArrayView2<f64>> = q.iter().map(|a| a.view()).collect();
        let concat = concatenate(Axis(1), &views).expect("rows checked");
        let mut gates = concat.dot(&self.gate_w) + &self.gate_b;
        gates.mapv_inplace(logistic);
        let mut pre = Vec::with_capacity(self.depth());
        let mut values = Vec::with_capacity(self.depth());
        let mut fused = Array2::zeros((concat.nrows(), self.fusion_width));
        for (i, qi) in q.iter().enumerate() {
            let p = qi.dot(&self.value_w[i]) + &self.value_b[i];
            let v = p.mapv(|x| x.max(0.0));
            fused += &(&v * &gates.column(i).insert_axis(Axis(1)));
            pre.push(p);
            values.push(v);
        }
        let logits = fused.dot(&self.head_w) + self.head_b[0];
        Ok(FusionTrace {
            concat,
            pre,
            values,
            gates,
            fused,
            logits,
        })
    }

    /// Parameter gradients of `sum_r upstream[r] * logit_r`.
    pub fn backward(&self, trace: &FusionTrace, q: &[Array2<f64>], upstream: ArrayView1<f64>) -> Result<FusionNetwork> {
        let n = self.check(q)?;
        if upstream.len() != n {
            return Err(Error::DimensionMismatch {
                context: "fusion upstream",
                expected: n,
                got: upstream.len(),
            });
        }
        let mut g = self.zeros_like();
        let up = upstream.insert_axis(Axis(1));
        g.head_w = trace.fused.t().dot(&upstream);
        g.head_b[0] = upstream.sum();
        let d_fused = &up * &self.head_w.view().insert_axis(Axis(0));
        let mut d_gate_pre = Array2::zeros((n, self.depth()));
        for i in 0..self.depth() {
            let k = trace.gates.column(i);
            let dk = (&d_fused * &trace.values[i]).sum_axis(Axis(1));
            d_gate_pre.column_mut(i).assign(&(&dk * &k.mapv(|s| s * (1.0 - s))));
            let mut dv = &d_fused * &k.insert_axis(Axis(1));
            dv.zip_mut_with(&trace.pre[i], |d, &p| {
                if p <= 0.0 {
                    *d = 0.0
                }
            });
            g.value_w[i] = crate::mlp::standard(q[i].t().dot(&dv));
            g.value_b[i] = dv.sum_axis(Axis(0));
        }
        g.gate_w = crate::mlp::standard(trace.concat.t().dot(&d_gate_pre));
        g.gate_b = d_gate_pre.sum_axis(Axis(0));
        Ok(g)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: FusionNetwork = serde_json::from_str(s)?;
        let total: usize = net.input_widths.iter().sum();
        let ok = net.value_w.len() == net.depth()
            && net.value_b.len() == net.depth()
            && net.value_w.iter().zip(&net.input_widths).all(|(w, &h)| w.dim() == (h, net.fusion_width))
            && net.value_b.iter().all(|b| b.len() == net.fusion_width)
            && net.gate_w.dim() == (total, net.depth())
            && net.gate_b.len() == net.depth()
            && net.head_w.len() == net.fusion_width
            && net.head_b.len() == 1;
        if !ok {
            return Err(Error::Config("fusion network tensors do not match its widths".into()));
        }
        Ok(net)
    }
}

impl ParamSet for FusionNetwork {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (w, b) in self.value_w.iter().zip(&self.value_b) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out.push(self.gate_w.as_slice().expect("standard layout"));
        out.push(self.gate_b.as_slice().expect("standard layout"));
        out.push(self.head_w.as_slice().expect("standard layout"));
        out.push(self.head_b.as_slice().expect("standard layout"));
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (w, b) in self.value_w.iter_mut().zip(self.value_b.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.gate_w.as_slice_mut().expect("standard layout"));
        out.push(self.gate_b.as_slice_mut().expect("standard layout"));
        out.push(self.head_w.as_slice_mut().expect("standard layout"));
        out.push(self.head_b.as_slice_mut().expect("standard layout"));
        out
    }
}

/// Last hidden representation of every path model on `x`.
pub fn path_representations(path: &[&Mlp], x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
    path.iter().map(|m| m.last_hidden(x)).collect()
}

/// Fused logits and gate values for the rows of `x`.
pub fn fusion_forward(net: &FusionNetwork, path: &[&Mlp], x: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let q = path_representations(path, x)?;
    let t = net.forward_q(&q)?;
    Ok((t.logits, t.gates))
}

/// Non-negative risk of the fused score and its parameter gradient.
pub fn fusion_risk_gradient(
    net: &FusionNetwork,
    q: &[Array2<f64>],
    labels: &[PuLabel],
    prior: f64,
    policy: GradientPolicy,
) -> Result<(RiskValue, FusionNetwork)> {
    let config = RiskConfig::nnpu(prior);
    config.validate()?;
    let t = net.forward_q(q)?;
    let (value, dz) = logit_objective(t.logits.view(), labels, None, config.terms(), policy)?;
    Ok((value, net.backward(&t, q, dz.view())?))
}

pub fn fusion_risk(net: &FusionNetwork, path: &[&Mlp], data: &PuDataset, prior: f64) -> Result<RiskValue> {
    let q = path_representations(path, data.features())?;
    Ok(fusion_risk_gradient(net, &q, data.labels(), prior, GradientPolicy::Exact)?.0)
}

/// Trains a fusion network on `data`, the rows routed to this path, expressed in
/// the path models' input space.
pub fn train_fusion(path: &[&Mlp], data: &PuDataset, prior: f64, hyper: &FusionHyper) -> Result<FusionNetwork> {
    if path.is_empty() {
        return Err(Error::EmptyInput("fusion needs at least one path model"));
    }
    data.require_trainable()?;
    if data.n_unlabeled() == 0 {
        return Err(Error::EmptyInput("fusion training needs unlabeled rows"));
    }
    let widths: Vec<usize> = path.iter().map(|m| m.last_hidden_width()).collect();
    let width = hyper.fusion_width.unwrap_or(*widths.last().expect("non-empty"));
    let mut net = FusionNetwork::new(&widths, width, derive_seed(hyper.seed, 51))?;
    let q_all = path_representations(path, data.features())?;
    let mut adam = AdamState::new(&net, hyper.learning_rate);
    let mut rng = seeded(derive_seed(hyper.seed, 52));
    for _ in 0..hyper.epochs {
        for rows in stratified_batches(data.labels(), hyper.batch_size, &mut rng) {
            let q: Vec<Array2<f64>> = q_all.iter().map(|a| a.select(Axis(0), &rows)).collect();
            let labels: Vec<PuLabel> = rows.iter().map(|&r| data.labels()[r]).collect();
            let (_, g) = fusion_risk_gradient(&net, &q, &labels, prior, GradientPolicy::NonNegative)?;
            adam.step(&mut net, &g)?;
        }
    }
    Ok(net)
}
