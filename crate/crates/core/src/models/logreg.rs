use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::NegLogDensity;
use crate::error::{Error, Result};

/// `log(1 / (1 + exp(-x)))` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bayesian logistic regression with labels in `{-1, +1}` and a `N(0, I)`
/// prior on the coefficients.
#[derive(Debug, Clone)]
pub struct LogReg {
    /// Design rows, row-major `N x d`.
    x: Vec<f64>,
    y: Vec<f64>,
    dim: usize,
}

impl LogReg {
    pub fn new(x: &DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::mismatch("label vector", x.nrows(), y.len()));
        }
        if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(Error::Config(format!("logistic labels must be +1 or -1, got {bad}")));
        }
        let dim = x.ncols();
        let rows = (0..x.nrows())
            .flat_map(|i| (0..dim).map(move |j| (i, j)))
            .map(|(i, j)| x[(i, j)])
            .collect();
        Ok(LogReg { x: rows, y, dim })
    }

    /// `beta ~ N(0, I/N)`, rows `x_i ~ N(0, I)`, and `y_i = +1` with
    /// probability `S(x_i' beta)`.
    pub fn synthetic(n_obs: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = (n_obs as f64).sqrt().recip();
        let beta: Vec<f64> = (0..dim)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let x = DMatrix::from_fn(n_obs, dim, |_, _| StandardNormal.sample(&mut rng));
        let y = (0..n_obs)
            .map(|i| {
                let t: f64 = (0..dim).map(|j| x[(i, j)] * beta[j]).sum();
                if rng.gen::<f64>() < sigmoid(t) {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        Self::new(&x, y)
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_obs(), self.dim, &self.x)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    fn margin(&self, i: usize, beta: &[f64]) -> f64 {
        self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()
    }
}

impl NegLogDensity for LogReg {
    fn dim(&self) -> usize {
        self.dim
    }

    fn standard_prior(&self, _j: usize) -> bool {
        true
    }

    fn value(&self, beta: &[f64]) -> f64 {
        (0..self.n_obs())
            .map(|i| -log_sigmoid(self.y[i] * self.margin(i, beta)))
            .sum()
    }

    fn value_grad(&self, beta: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let mut v = 0.0;
        for i in 0..self.n_obs() {
            let m = self.y[i] * self.margin(i, beta);
            v -= log_sigmoid(m);
            let w = -self.y[i] * sigmoid(-m);
            for (g, a) in grad.iter_mut().zip(self.row(i)) {
                *g += w * a;
            }
        }
        v
    }

    fn hvp(&self, beta: &[f64], w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.n_obs() {
            let t = self.margin(i, beta);
            let curv = sigmoid(t) * sigmoid(-t);
            let xw: f64 = self.row(i).iter().zip(w).map(|(a, b)| a * b).sum();
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += curv * xw * a;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        let far = log_sigmoid(-745.0);
        assert!(far.is_finite() && (far + 745.0).abs() < 1e-12);
        assert!(log_sigmoid(800.0) <= 0.0 && log_sigmoid(800.0) > -1e-300);
        assert!(log_sigmoid(-1000.0) == -1000.0);
    }

    #[test]
    fn zero_margin_costs_log_two_per_row() {
        let m = LogReg::synthetic(30, 100, 1).unwrap();
        let v = m.value(&vec![0.0; 100]);
        assert!((v - 30.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn synthetic_defaults_and_labels() {
        let m = LogReg::synthetic(30, 100, 4).unwrap();
        assert_eq!(m.n_obs(), 30);
        assert_eq!(m.dim(), 100);
        assert!(m.labels().iter().all(|&y| y == 1.0 || y == -1.0));
        let again = LogReg::synthetic(30, 100, 4).unwrap();
        assert_eq!(m.x, again.x);
        assert_eq!(m.y, again.y);
    }

    #[test]
    fn rejects_non_binary_labels() {
        let x = DMatrix::identity(2, 2);
        assert!(LogReg::new(&x, vec![1.0, 0.0]).is_err());
        assert!(LogReg::new(&x, vec![1.0]).is_err());
    }
}
