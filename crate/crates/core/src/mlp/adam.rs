use super::ParamSet;
use crate::{Error, Result};

/// Adaptive-moment optimizer state for one parameter set.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient added to every gradient before the moment updates.
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: ParamSet + ?Sized>(params: &P, learning_rate: f64) -> Self {
        let shapes: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<P, G>(&mut self, params: &mut P, grads: &G) -> Result<()>
    where
        P: ParamSet + ?Sized,
        G: ParamSet + ?Sized,
    {
        let grads = grads.slices();
        let mut params = params.slices_mut();
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                context: "adam tensors",
                expected: self.m.len(),
                got: grads.len(),
            });
        }
        for (k, g) in grads.iter().enumerate() {
            if g.len() != self.m[k].len() || params[k].len() != self.m[k].len() {
                return Err(Error::DimensionMismatch {
                    context: "adam tensor size",
                    expected: self.m[k].len(),
                    got: g.len(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, g) in grads.iter().enumerate() {
            let (m, v, p) = (&mut self.m[k], &mut self.v[k], &mut params[k]);
            for i in 0..g.len() {
                let gi = g[i] + self.weight_decay * p[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
