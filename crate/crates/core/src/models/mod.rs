//! Variational-Bayes benchmark problems.
//!
//! Every problem is exposed through [`VbProblem`]: a per-sample objective
//! `f(z; theta)` whose expectation over the base distribution is the
//! negative ELBO, together with its gradient and Hessian-vector product.
//! Minimizing `E f` maximizes the ELBO throughout the crate.
//!
//! The mean-field models share [`MeanField`], which owns the
//! reparameterization `beta = mu + exp(log_sigma) * z`, the closed-form KL
//! against `N(0, 1)` for coordinates with a standard-normal prior, and the
//! Gaussian entropy for the remaining coordinates. The model-specific part
//! is a [`NegLogDensity`] over the latent vector.

mod crossed;
mod linreg;
mod logreg;
mod quadratic;

pub use crossed::CrossedEffects;
pub use linreg::{LinReg, LinRegOptimum};
pub use logreg::{log_sigmoid, LogReg};
pub use quadratic::NoisyQuadratic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{inv_normal_cdf, DiagGaussianParams};

/// Per-sample objective contract shared by optimizers and estimators.
pub trait VbProblem: Send + Sync {
    /// Dimension of one base sample `z` (the Sobol' dimension).
    fn latent_dim(&self) -> usize;

    fn theta_dim(&self) -> usize;

    /// Maps a uniform point to the base distribution. Defaults to the
    /// standard normal via the inverse CDF.
    fn to_base(&self, u: &[f64], out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(u) {
            *o = inv_normal_cdf(x);
        }
    }

    fn value(&self, z: &[f64], theta: &[f64]) -> f64;

    /// Writes `grad_theta f(z; theta)` into `grad` and returns `f(z; theta)`.
    fn value_grad(&self, z: &[f64], theta: &[f64], grad: &mut [f64]) -> f64;

    /// Writes `hess_theta f(z; theta) * v` into `out`.
    fn hvp(&self, z: &[f64], theta: &[f64], v: &[f64], out: &mut [f64]);

    fn initial_theta(&self) -> Vec<f64> {
        vec![0.0; self.theta_dim()]
    }

    /// Exact minimizer of `E f`, when known in closed form.
    fn optimum(&self) -> Option<Vec<f64>> {
        None
    }

    /// Exact `F(theta) = E f(z; theta)`, when known.
    fn exact_objective(&self, _theta: &[f64]) -> Option<f64> {
        None
    }

    /// Exact `grad F(theta)`, when known.
    fn exact_gradient(&self, _theta: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Negative log density (likelihood plus any non-standard prior terms) as a
/// function of the latent vector.
pub trait NegLogDensity: Send + Sync {
    fn dim(&self) -> usize;

    /// Whether coordinate `j` has an independent `N(0, 1)` prior handled by
    /// the closed-form KL term.
    fn standard_prior(&self, j: usize) -> bool;

    fn value(&self, beta: &[f64]) -> f64;

    fn value_grad(&self, beta: &[f64], grad: &mut [f64]) -> f64;

    fn hvp(&self, beta: &[f64], w: &[f64], out: &mut [f64]);

    /// Closed-form variational optimum `(mu, log_sigma)`, if the model has one.
    fn optimum_theta(&self) -> Option<Vec<f64>> {
        None
    }

    /// Closed-form negative ELBO of the mean-field family, if available.
    fn expected_objective(&self, _theta: &[f64]) -> Option<f64> {
        None
    }

    fn expected_gradient(&self, _theta: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// `KL(N(mu, sigma^2) || N(0, 1))` summed over coordinates, and its gradient
/// with respect to `(mu, log_sigma)`.
pub fn kl_diag_gaussian(params: &DiagGaussianParams) -> (f64, Vec<f64>) {
    let d = params.dim();
    let mut grad = vec![0.0; 2 * d];
    let mut kl = 0.0;
    for j in 0..d {
        let (m, ls) = (params.mu[j], params.log_sigma[j]);
        let s2 = (2.0 * ls).exp();
        kl += 0.5 * (s2 + m * m - 1.0) - ls;
        grad[j] = m;
        grad[d + j] = s2 - 1.0;
    }
    (kl, grad)
}

/// `0.5 * ln(2 pi e)`, the entropy of `N(0, 1)`.
const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;

/// Mean-field Gaussian variational family over a latent density.
#[derive(Debug, Clone)]
pub struct MeanField<T> {
    pub term: T,
}

impl<T: NegLogDensity> MeanField<T> {
    pub fn new(term: T) -> Self {
        MeanField { term }
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let d = self.term.dim();
        assert_eq!(theta.len(), 2 * d, "theta has wrong dimension");
        theta.split_at(d)
    }

    /// Closed-form part of `f`: KL for standard-prior coordinates, negative
    /// entropy for the rest.
    fn regularizer(&self, mu: &[f64], log_sigma: &[f64]) -> f64 {
        (0..mu.len())
            .map(|j| {
                if self.term.standard_prior(j) {
                    0.5 * ((2.0 * log_sigma[j]).exp() + mu[j] * mu[j] - 1.0) - log_sigma[j]
                } else {
                    -(HALF_LN_2PI_E + log_sigma[j])
                }
            })
            .sum()
    }
}

fn latent_point(mu: &[f64], log_sigma: &[f64], z: &[f64], sigma: &mut [f64]) -> Vec<f64> {
    mu.iter()
        .zip(log_sigma)
        .zip(z)
        .zip(sigma.iter_mut())
        .map(|(((m, ls), zj), sj)| {
            *sj = ls.exp();
            m + *sj * zj
        })
        .collect()
}

impl<T: NegLogDensity> VbProblem for MeanField<T> {
    fn latent_dim(&self) -> usize {
        self.term.dim()
    }

    fn theta_dim(&self) -> usize {
        2 * self.term.dim()
    }

    fn value(&self, z: &[f64], theta: &[f64]) -> f64 {
        let (mu, ls) = self.split(theta);
        let mut sigma = vec![0.0; mu.len()];
        let beta = latent_point(mu, ls, z, &mut sigma);
        self.term.value(&beta) + self.regularizer(mu, ls)
    }

    fn value_grad(&self, z: &[f64], theta: &[f64], grad: &mut [f64]) -> f64 {
        let (mu, ls) = self.split(theta);
        let d = mu.len();
        let mut sigma = vec![0.0; d];
        let beta = latent_point(mu, ls, z, &mut sigma);
        let (g_mu, g_ls) = grad.split_at_mut(d);
        let ell = self.term.value_grad(&beta, g_mu);
        for j in 0..d {
            let g_beta = g_mu[j];
            if self.term.standard_prior(j) {
                g_mu[j] = g_beta + mu[j];
                g_ls[j] = sigma[j] * z[j] * g_beta + sigma[j] * sigma[j] - 1.0;
            } else {
                g_ls[j] = sigma[j] * z[j] * g_beta - 1.0;
            }
        }
        ell + self.regularizer(mu, ls)
    }

    fn hvp(&self, z: &[f64], theta: &[f64], v: &[f64], out: &mut [f64]) {
        let (mu, ls) = self.split(theta);
        let d = mu.len();
        let mut sigma = vec![0.0; d];
        let beta = latent_point(mu, ls, z, &mut sigma);
        let (v_mu, v_ls) = v.split_at(d);
        // direction of beta induced by v
        let w: Vec<f64> = (0..d).map(|j| v_mu[j] + sigma[j] * z[j] * v_ls[j]).collect();
        let mut g_beta = vec![0.0; d];
        self.term.value_grad(&beta, &mut g_beta);
        let (o_mu, o_ls) = out.split_at_mut(d);
        self.term.hvp(&beta, &w, o_mu);
        for j in 0..d {
            let hw = o_mu[j];
            let sz = sigma[j] * z[j];
            o_ls[j] = sz * hw + sz * g_beta[j] * v_ls[j];
            if self.term.standard_prior(j) {
                o_mu[j] = hw + v_mu[j];
                o_ls[j] += 2.0 * sigma[j] * sigma[j] * v_ls[j];
            }
        }
    }

    fn optimum(&self) -> Option<Vec<f64>> {
        self.term.optimum_theta()
    }

    fn exact_objective(&self, theta: &[f64]) -> Option<f64> {
        self.term.expected_objective(theta)
    }

    fn exact_gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        self.term.expected_gradient(theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linreg,
    Logreg,
    Crossed,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linreg" => Ok(ModelKind::Linreg),
            "logreg" => Ok(ModelKind::Logreg),
            "crossed" => Ok(ModelKind::Crossed),
            other => Err(Error::Config(format!(
                "unknown model {other:?} (linreg | logreg | crossed)"
            ))),
        }
    }
}

/// Dataset seed used when a config does not name one.
pub const DEFAULT_DATA_SEED: u64 = 20_220_117;

/// Which synthetic dataset to build, and at what size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Observations `N` (regression models).
    pub n_obs: usize,
    /// Coefficients `d` (regression models).
    pub dim: usize,
    /// Row and column factor levels `I`, `J` (crossed effects).
    pub rows: usize,
    pub cols: usize,
    /// Noise standard deviation (linear regression).
    pub gamma: f64,
    pub data_seed: u64,
}

impl ModelSpec {
    /// Full-size defaults: linreg `N=300, d=100, gamma=0.5`; logreg
    /// `N=30, d=100`; crossed `I=10, J=5`.
    pub fn defaults(kind: ModelKind) -> Self {
        let (n_obs, dim) = match kind {
            ModelKind::Linreg => (300, 100),
            ModelKind::Logreg => (30, 100),
            ModelKind::Crossed => (0, 0),
        };
        ModelSpec {
            kind,
            n_obs,
            dim,
            rows: 10,
            cols: 5,
            gamma: 0.5,
            data_seed: DEFAULT_DATA_SEED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            ModelKind::Linreg => self.n_obs > 0 && self.dim > 0 && self.gamma > 0.0,
            ModelKind::Logreg => self.n_obs > 0 && self.dim > 0,
            ModelKind::Crossed => self.rows > 0 && self.cols > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("model sizes must be positive: {self:?}")))
        }
    }
}

/// A concrete benchmark problem.
#[derive(Debug, Clone)]
pub enum Model {
    Linreg(MeanField<LinReg>),
    Logreg(MeanField<LogReg>),
    Crossed(MeanField<CrossedEffects>),
}

impl Model {
    pub fn problem(&self) -> &dyn VbProblem {
        match self {
            Model::Linreg(m) => m,
            Model::Logreg(m) => m,
            Model::Crossed(m) => m,
        }
    }

    /// Writes the dataset as CSV: `y,x_1..x_d` rows for the regressions,
    /// the `I x J` matrix for crossed effects.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let join = |v: &mut dyn Iterator<Item = f64>| {
            v.map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
        };
        match self {
            Model::Linreg(m) => {
                let (x, y) = (m.term.x(), m.term.y());
                writeln!(w, "y,{}", (1..=x.ncols()).map(|j| format!("x{j}")).collect::<Vec<_>>().join(","))?;
                for i in 0..x.nrows() {
                    writeln!(w, "{:e},{}", y[i], join(&mut x.row(i).iter().copied()))?;
                }
            }
            Model::Logreg(m) => {
                let x = m.term.design();
                writeln!(w, "y,{}", (1..=x.ncols()).map(|j| format!("x{j}")).collect::<Vec<_>>().join(","))?;
                for (i, y) in m.term.labels().iter().enumerate() {
                    writeln!(w, "{y},{}", join(&mut x.row(i).iter().copied()))?;
                }
            }
            Model::Crossed(m) => {
                let (_, cols) = m.term.shape();
                writeln!(w, "{}", (1..=cols).map(|j| format!("col{j}")).collect::<Vec<_>>().join(","))?;
                for row in m.term.observations().chunks(cols) {
                    writeln!(w, "{}", join(&mut row.iter().copied()))?;
                }
            }
        }
        Ok(())
    }

    /// Reads a dataset written by [`Model::write_csv`]. `gamma` is only used
    /// for linear regression.
    pub fn read_csv<R: std::io::BufRead>(kind: ModelKind, source: R, gamma: f64) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, line) in source.lines().enumerate().skip(1) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|t| {
                    t.trim().parse::<f64>().map_err(|e| {
                        Error::Config(format!("dataset line {}: {t:?}: {e}", idx + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::mismatch("dataset row", first.len(), row.len()));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Config("dataset has no rows".into()));
        }
        let ncol = rows[0].len();
        Ok(match kind {
            ModelKind::Linreg | ModelKind::Logreg => {
                let x = nalgebra::DMatrix::from_fn(rows.len(), ncol - 1, |i, j| rows[i][j + 1]);
                let y: Vec<f64> = rows.iter().map(|r| r[0]).collect();
                if kind == ModelKind::Linreg {
                    Model::Linreg(MeanField::new(LinReg::new(x, nalgebra::DVector::from_vec(y), gamma)?))
                } else {
                    Model::Logreg(MeanField::new(LogReg::new(&x, y)?))
                }
            }
            ModelKind::Crossed => {
                let n = rows.len();
                Model::Crossed(MeanField::new(CrossedEffects::new(n, ncol, rows.concat())?))
            }
        })
    }
}

/// Builds the synthetic dataset described by `spec`.
pub fn generate_synthetic(spec: &ModelSpec) -> Result<Model> {
    spec.validate()?;
    Ok(match spec.kind {
        ModelKind::Linreg => Model::Linreg(MeanField::new(LinReg::synthetic(
            spec.n_obs,
            spec.dim,
            spec.gamma,
            spec.data_seed,
        )?)),
        ModelKind::Logreg => Model::Logreg(MeanField::new(LogReg::synthetic(
            spec.n_obs,
            spec.dim,
            spec.data_seed,
        )?)),
        ModelKind::Crossed => Model::Crossed(MeanField::new(CrossedEffects::synthetic(
            spec.rows,
            spec.cols,
            spec.data_seed,
        )?)),
    })
}
