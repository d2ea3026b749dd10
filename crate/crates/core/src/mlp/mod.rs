//! Feed-forward scorer with hand-written reverse-mode gradients.
//!
//! Hidden layers use the rectifier, the output layer is a single linear unit whose
//! value is the real-valued score `g(x)`. [`Mlp::last_hidden`] exposes the final
//! hidden representation consumed by path fusion.

mod adam;
mod ridge;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::Standardizer;
use crate::rng::seeded;
use crate::{Error, Result};

pub use adam::AdamState;
pub use ridge::{fit_ridge, RidgeRegressor};

/// Logits are clamped to this magnitude before exponentiation.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Standard logistic function, strictly inside (0, 1) for every finite input.
pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).exp())
}

/// Anything that maps raw rows to positive-class probabilities.
pub trait Scorer {
    fn probability(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>>;
}

impl Scorer for Mlp {
    fn probability(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        Mlp::probability(self, batch)
    }
}

/// A network trained on z-scored inputs, fed raw rows.
#[derive(Clone, Copy, Debug)]
pub struct Standardized<'a> {
    pub model: &'a Mlp,
    pub scaler: &'a Standardizer,
}

impl Scorer for Standardized<'_> {
    fn probability(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.model.probability(self.scaler.transform(batch)?.view())
    }
}

/// Flat access to a model's trainable tensors, in a fixed order.
pub trait ParamSet {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn n_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Per-layer inputs recorded by a forward pass, reused by [`Mlp::backward_trace`].
#[derive(Clone, Debug)]
pub struct Trace {
    /// `inputs[l]` is the input of layer `l`; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    pub logits: Array1<f64>,
}

impl Trace {
    pub fn last_hidden(&self) -> ArrayView2<'_, f64> {
        self.inputs.last().expect("at least one hidden layer").view()
    }
}

/// Gradients with the same layout as the model's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    /// Accumulates `scale * other` in place.
    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(scale, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(scale, b);
        }
    }
}

pub(crate) fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn slices_of<'a>(w: &'a [Array2<f64>], b: &'a [Array1<f64>]) -> Vec<&'a [f64]> {
    w.iter()
        .zip(b)
        .flat_map(|(w, b)| [w.as_slice().expect("standard layout"), b.as_slice().expect("standard layout")])
        .collect()
}

fn slices_of_mut<'a>(w: &'a mut [Array2<f64>], b: &'a mut [Array1<f64>]) -> Vec<&'a mut [f64]> {
    w.iter_mut()
        .zip(b.iter_mut())
        .flat_map(|(w, b)| {
            [
                w.as_slice_mut().expect("standard layout"),
                b.as_slice_mut().expect("standard layout"),
            ]
        })
        .collect()
}

impl ParamSet for Mlp {
    fn slices(&self) -> Vec<&[f64]> {
        slices_of(&self.weights, &self.biases)
    }
    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        slices_of_mut(&mut self.weights, &mut self.biases)
    }
}

impl ParamSet for MlpGrads {
    fn slices(&self) -> Vec<&[f64]> {
        slices_of(&self.weights, &self.biases)
    }
    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        slices_of_mut(&mut self.weights, &mut self.biases)
    }
}

#[derive(Serialize, Deserialize)]
struct MlpFile {
    format_version: u32,
    model: Mlp,
}

const MLP_FORMAT_VERSION: u32 = 1;

impl Mlp {
    /// Network `input -> hidden[0] -> ... -> 1` with seeded fan-in uniform weights
    /// (limit `sqrt(6 / fan_in)` on rectifier layers, `sqrt(1 / fan_in)` on the
    /// output) and zero biases.
    pub fn new(input: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut model = Self::zeros(input, hidden)?;
        let mut rng = seeded(seed);
        let n_layers = model.weights.len();
        for (l, w) in model.weights.iter_mut().enumerate() {
            let fan_in = w.nrows() as f64;
            let limit = if l + 1 == n_layers { (1.0 / fan_in).sqrt() } else { (6.0 / fan_in).sqrt() };
            w.mapv_inplace(|_| rng.random_range(-limit..limit));
        }
        Ok(model)
    }

    pub fn zeros(input: usize, hidden: &[usize]) -> Result<Self> {
        if input == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::invalid(
                "network needs a positive input width and at least one non-empty hidden layer",
            ));
        }
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let weights = widths.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect();
        let biases = widths[1..].iter().map(|&w| Array1::zeros(w)).collect();
        Ok(Self { widths, weights, biases })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn last_hidden_width(&self) -> usize {
        self.widths[self.widths.len() - 2]
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    fn check_input(&self, batch: ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp input",
                expected: self.input_dim(),
                got: batch.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward_trace(&self, batch: ArrayView2<f64>) -> Result<Trace> {
        self.check_input(batch)?;
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        inputs.push(batch.to_owned());
        for l in 0..last {
            let mut z = inputs[l].dot(&self.weights[l]);
            z += &self.biases[l];
            z.mapv_inplace(|v| v.max(0.0));
            inputs.push(z);
        }
        let mut out = inputs[last].dot(&self.weights[last]);
        out += &self.biases[last];
        let logits = out.index_axis_move(Axis(1), 0);
        Ok(Trace { inputs, logits })
    }

    /// One score per row.
    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward_trace(batch)?.logits)
    }

    pub fn probability(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(batch)?.mapv(logistic))
    }

    /// Final hidden-layer activations, `rows x last_hidden_width`.
    pub fn last_hidden(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut trace = self.forward_trace(batch)?;
        Ok(trace.inputs.pop().expect("at least one hidden layer"))
    }

    /// Parameter gradients of `sum_i upstream[i] * g(x_i)`.
    pub fn backward(&self, batch: ArrayView2<f64>, upstream: ArrayView1<f64>) -> Result<MlpGrads> {
        let trace = self.forward_trace(batch)?;
        self.backward_trace(&trace, upstream)
    }

    pub fn backward_trace(&self, trace: &Trace, upstream: ArrayView1<f64>) -> Result<MlpGrads> {
        let rows = trace.inputs[0].nrows();
        if upstream.len() != rows {
            return Err(Error::DimensionMismatch {
                context: "mlp upstream gradient",
                expected: rows,
                got: upstream.len(),
            });
        }
        let n_layers = self.weights.len();
        let mut gw = Vec::with_capacity(n_layers);
        let mut gb = Vec::with_capacity(n_layers);
        let mut delta = upstream.to_owned().insert_axis(Axis(1));
        for l in (0..n_layers).rev() {
            gw.push(standard(trace.inputs[l].t().dot(&delta)));
            gb.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l].t());
                // rectifier derivative is zero wherever the activation was clipped
                Zip::from(&mut back).and(&trace.inputs[l]).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        gw.reverse();
        gb.reverse();
        Ok(MlpGrads { weights: gw, biases: gb })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&MlpFile {
            format_version: MLP_FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: MlpFile = serde_json::from_str(s)?;
        if file.format_version != MLP_FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported model format {}", file.format_version)));
        }
        file.model.validate()?;
        Ok(file.model)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.widths.len() >= 3
            && self.weights.len() == self.widths.len() - 1
            && self.biases.len() == self.weights.len()
            && self.weights.iter().enumerate().all(|(l, w)| {
                w.dim() == (self.widths[l], self.widths[l + 1]) && w.is_standard_layout()
            })
            && self.biases.iter().enumerate().all(|(l, b)| b.len() == self.widths[l + 1]);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("inconsistent network layout"))
        }
    }
}
