use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::NegLogDensity;
use crate::error::{Error, Result};

/// Bayesian linear regression `y | beta ~ N(X beta, gamma^2 I)`,
/// `beta ~ N(0, I)`.
///
/// The negative log likelihood is stored as the quadratic
/// `0.5 beta' A beta - b' beta + c` with `A = X'X / gamma^2` and
/// `b = X'y / gamma^2`, so each per-sample evaluation costs `O(d^2)`
/// regardless of `N`.
#[derive(Debug, Clone)]
pub struct LinReg {
    x: DMatrix<f64>,
    y: DVector<f64>,
    gamma: f64,
    /// `X'X / gamma^2`, row-major.
    a: Vec<f64>,
    b: Vec<f64>,
    c: f64,
}

/// Closed-form variational optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct LinRegOptimum {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LinRegOptimum {
    /// As a flat `(mu, log_sigma)` vector.
    pub fn theta(&self) -> Vec<f64> {
        self.mu
            .iter()
            .copied()
            .chain(self.sigma.iter().map(|s| s.ln()))
            .collect()
    }
}

impl LinReg {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("noise sd gamma must be positive, got {gamma}")));
        }
        if y.len() != x.nrows() {
            return Err(Error::mismatch("response vector", x.nrows(), y.len()));
        }
        let d = x.ncols();
        let g2 = gamma * gamma;
        let xtx = x.transpose() * &x / g2;
        let xty = x.transpose() * &y / g2;
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = xtx[(i, j)];
            }
        }
        let n = x.nrows() as f64;
        let c = y.norm_squared() / (2.0 * g2)
            + 0.5 * n * (2.0 * std::f64::consts::PI * g2).ln();
        Ok(LinReg {
            b: xty.iter().copied().collect(),
            x,
            y,
            gamma,
            a,
            c,
        })
    }

    /// `X` with IID `N(0,1)` entries, `beta` drawn from its prior, and
    /// `y = X beta + gamma * eps`.
    pub fn synthetic(n_obs: usize, dim: usize, gamma: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n_obs, dim, |_, _| StandardNormal.sample(&mut rng));
        let beta = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        let noise = DVector::from_fn(n_obs, |_, _| {
            gamma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let y = &x * beta + noise;
        Self::new(x, y, gamma)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn a_diag(&self, j: usize) -> f64 {
        self.a[j * self.dim() + j]
    }

    fn a_times(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.a[i * d..(i + 1) * d];
            *o = row.iter().zip(v).map(|(r, x)| r * x).sum();
        }
    }

    fn precision(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.a[i * d + j] + if i == j { 1.0 } else { 0.0 })
    }

    /// `mu* = (X'X/gamma^2 + I)^{-1} X'y/gamma^2` and
    /// `sigma*_j = (1 + |X_j|^2/gamma^2)^{-1/2}`.
    pub fn optimum(&self) -> Result<LinRegOptimum> {
        let chol = self
            .precision()
            .cholesky()
            .ok_or_else(|| Error::Solver("X'X/gamma^2 + I is not positive definite".into()))?;
        let mu = chol.solve(&DVector::from_column_slice(&self.b));
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("non-finite optimum".into()));
        }
        let sigma = (0..self.dim())
            .map(|j| (1.0 + self.a_diag(j)).powf(-0.5))
            .collect();
        Ok(LinRegOptimum {
            mu: mu.iter().copied().collect(),
            sigma,
        })
    }

    /// Extreme eigenvalues `(c, L)` of `X'X/gamma^2 + I`, the Hessian of the
    /// exact objective in `mu`.
    pub fn mu_curvature_bounds(&self) -> (f64, f64) {
        let eig = SymmetricEigen::new(self.precision()).eigenvalues;
        (eig.min(), eig.max())
    }

    /// Exact ELBO at `theta = (mu, log_sigma)`.
    pub fn analytic_elbo(&self, theta: &[f64]) -> f64 {
        -self.expected_objective(theta).expect("linear regression is closed form")
    }
}

impl NegLogDensity for LinReg {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn standard_prior(&self, _j: usize) -> bool {
        true
    }

    fn value(&self, beta: &[f64]) -> f64 {
        let mut ab = vec![0.0; beta.len()];
        self.a_times(beta, &mut ab);
        beta.iter()
            .zip(&ab)
            .zip(&self.b)
            .map(|((x, ax), b)| 0.5 * x * ax - b * x)
            .sum::<f64>()
            + self.c
    }

    fn value_grad(&self, beta: &[f64], grad: &mut [f64]) -> f64 {
        self.a_times(beta, grad);
        let mut v = self.c;
        for ((g, x), b) in grad.iter_mut().zip(beta).zip(&self.b) {
            v += 0.5 * x * *g - b * x;
            *g -= b;
        }
        v
    }

    fn hvp(&self, _beta: &[f64], w: &[f64], out: &mut [f64]) {
        self.a_times(w, out);
    }

    fn optimum_theta(&self) -> Option<Vec<f64>> {
        LinReg::optimum(self).ok().map(|o| o.theta())
    }

    fn expected_objective(&self, theta: &[f64]) -> Option<f64> {
        let d = self.dim();
        let (mu, ls) = theta.split_at(d);
        let mut value = self.value(mu);
        for j in 0..d {
            let s2 = (2.0 * ls[j]).exp();
            value += 0.5 * self.a_diag(j) * s2 + 0.5 * (s2 + mu[j] * mu[j] - 1.0) - ls[j];
        }
        Some(value)
    }

    fn expected_gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let d = self.dim();
        let (mu, ls) = theta.split_at(d);
        let mut grad = vec![0.0; 2 * d];
        self.a_times(mu, &mut grad[..d]);
        for j in 0..d {
            let s2 = (2.0 * ls[j]).exp();
            grad[j] += mu[j] - self.b[j];
            grad[d + j] = (self.a_diag(j) + 1.0) * s2 - 1.0;
        }
        Some(grad)
    }
}
