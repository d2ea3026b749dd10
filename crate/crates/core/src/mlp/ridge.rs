use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::linalg::spd_solve;
use crate::{Error, Result};

/// Multi-output linear map `y = x W + b` fit by weighted ridge regression.
/// The intercept is not penalized.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RidgeRegressor {
    /// `inputs x outputs`
    pub coef: Array2<f64>,
    pub intercept: Array1<f64>,
    pub regularization: f64,
}

/// Minimizes `sum_i w_i |y_i - (x_i W + b)|^2 + reg |W|^2` in closed form.
pub fn fit_ridge(
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    sample_weights: ArrayView1<f64>,
    regularization: f64,
) -> Result<RidgeRegressor> {
    if !(regularization > 0.0) {
        return Err(Error::invalid(format!("ridge regularization {regularization} must be positive")));
    }
    let n = inputs.nrows();
    if targets.nrows() != n || sample_weights.len() != n {
        return Err(Error::DimensionMismatch {
            context: "ridge rows",
            expected: n,
            got: if targets.nrows() != n { targets.nrows() } else { sample_weights.len() },
        });
    }
    if sample_weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid("ridge sample weights must be non-negative"));
    }
    let p = inputs.ncols();
    let k = targets.ncols();
    let total: f64 = sample_weights.sum();
    let (x_mean, y_mean) = if total > 0.0 {
        (
            inputs.t().dot(&sample_weights) / total,
            targets.t().dot(&sample_weights) / total,
        )
    } else {
        (Array1::zeros(p), Array1::zeros(k))
    };
    let xc = &inputs - &x_mean;
    let yc = &targets - &y_mean;
    let sw = sample_weights.insert_axis(Axis(1));
    let xw = &xc * &sw;
    let mut gram = xw.t().dot(&xc);
    for j in 0..p {
        gram[[j, j]] += regularization;
    }
    let rhs = xw.t().dot(&yc);
    let coef = spd_solve(gram.view(), rhs.view())?;
    let intercept = &y_mean - &x_mean.dot(&coef);
    Ok(RidgeRegressor {
        coef,
        intercept,
        regularization,
    })
}

impl RidgeRegressor {
    pub fn n_inputs(&self) -> usize {
        self.coef.nrows()
    }

    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                context: "ridge predict",
                expected: self.n_inputs(),
                got: inputs.ncols(),
            });
        }
        Ok(inputs.dot(&self.coef) + &self.intercept)
    }

    /// Weighted squared residual without the penalty.
    pub fn weighted_loss(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>, w: ArrayView1<f64>) -> Result<f64> {
        let r = &targets - &self.predict(inputs)?;
        Ok(r.rows().into_iter().zip(w).map(|(row, wi)| wi * row.dot(&row)).sum())
    }

    pub fn objective(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>, w: ArrayView1<f64>) -> Result<f64> {
        Ok(self.weighted_loss(inputs, targets, w)? + self.regularization * self.coef.iter().map(|c| c * c).sum::<f64>())
    }

    /// Gradient of [`Self::objective`] with respect to (coef, intercept).
    pub fn objective_gradient(
        &self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        w: ArrayView1<f64>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        let r = &self.predict(inputs)? - &targets;
        let rw = &r * &w.insert_axis(Axis(1));
        let g_coef = inputs.t().dot(&rw) * 2.0 + &self.coef * (2.0 * self.regularization);
        let g_int = rw.sum_axis(Axis(0)) * 2.0;
        Ok((g_coef, g_int))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::{array, Array1};
    use rand::Rng as _;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn exact_linear_recovery() {
        let x = random(40, 3, 1);
        let w_true = array![[1.5, -0.5], [0.0, 2.0], [-3.0, 0.25]];
        let b_true = array![0.7, -1.1];
        let y = x.dot(&w_true) + &b_true;
        let fit = fit_ridge(x.view(), y.view(), Array1::ones(40).view(), 1e-8).unwrap();
        for (a, b) in fit.coef.iter().zip(w_true.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in fit.intercept.iter().zip(b_true.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn single_weighted_row_is_interpolated() {
        let x = random(6, 2, 2);
        let y = random(6, 1, 3);
        let mut w = Array1::zeros(6);
        w[4] = 1.0;
        let fit = fit_ridge(x.view(), y.view(), w.view(), 1.0).unwrap();
        let pred = fit.predict(x.slice(ndarray::s![4..5, ..])).unwrap();
        assert!((pred[[0, 0]] - y[[4, 0]]).abs() < 1e-12);
    }

    #[test]
    fn duplicated_rows_equal_doubled_weight() {
        let x = random(8, 3, 4);
        let y = random(8, 2, 5);
        let w = Array1::from_shape_fn(8, |i| 0.5 + i as f64 * 0.1);
        let mut w2 = w.clone();
        w2[2] *= 2.0;
        let single = fit_ridge(x.view(), y.view(), w2.view(), 0.3).unwrap();
        let xd = ndarray::concatenate(Axis(0), &[x.view(), x.slice(ndarray::s![2..3, ..])]).unwrap();
        let yd = ndarray::concatenate(Axis(0), &[y.view(), y.slice(ndarray::s![2..3, ..])]).unwrap();
        let mut wd = w.to_vec();
        wd.push(w[2]);
        let dup = fit_ridge(xd.view(), yd.view(), Array1::from(wd).view(), 0.3).unwrap();
        for (a, b) in single.coef.iter().zip(dup.coef.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in single.intercept.iter().zip(dup.intercept.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn solution_is_stationary() {
        let x = random(30, 4, 6);
        let y = random(30, 3, 7);
        let w = Array1::from_shape_fn(30, |i| 1.0 + (i % 3) as f64);
        let fit = fit_ridge(x.view(), y.view(), w.view(), 0.8).unwrap();
        let (gc, gi) = fit.objective_gradient(x.view(), y.view(), w.view()).unwrap();
        assert!(gc.iter().chain(gi.iter()).all(|g| g.abs() < 1e-8));
    }

    #[test]
    fn rejects_non_positive_regularization() {
        let x = random(3, 2, 0);
        let y = random(3, 1, 0);
        assert!(fit_ridge(x.view(), y.view(), Array1::ones(3).view(), 0.0).is_err());
        assert!(fit_ridge(x.view(), y.view(), Array1::ones(3).view(), -1.0).is_err());
    }
}
