use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::NegLogDensity;
use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Intercept-only crossed random effects:
/// `Y_ij ~ N(mu + a_i + b_j, 1)`, `a_i ~ N(0, sigma_a^2)`,
/// `b_j ~ N(0, sigma_b^2)`, with `mu`, `log sigma_a`, `log sigma_b`
/// independent `N(0, 1)`.
///
/// Latent layout: `(mu, log sigma_a, log sigma_b, a_1..a_I, b_1..b_J)`.
/// The first three coordinates carry standard-normal priors (closed-form
/// KL); the hierarchical priors of `a` and `b` depend on the latent scales
/// and are part of this density.
#[derive(Debug, Clone)]
pub struct CrossedEffects {
    rows: usize,
    cols: usize,
    /// `I x J`, row-major.
    obs: Vec<f64>,
}

impl CrossedEffects {
    pub fn new(rows: usize, cols: usize, obs: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config("crossed effects needs I, J >= 1".into()));
        }
        if obs.len() != rows * cols {
            return Err(Error::mismatch("observation matrix", rows * cols, obs.len()));
        }
        Ok(CrossedEffects { rows, cols, obs })
    }

    /// Draws every latent from its prior, then the observations.
    pub fn synthetic(rows: usize, cols: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut std = || -> f64 { StandardNormal.sample(&mut rng) };
        let mu = std();
        let sa = std().exp();
        let sb = std().exp();
        let a: Vec<f64> = (0..rows).map(|_| sa * std()).collect();
        let b: Vec<f64> = (0..cols).map(|_| sb * std()).collect();
        let mut obs = Vec::with_capacity(rows * cols);
        for ai in &a {
            for bj in &b {
                obs.push(mu + ai + bj + std());
            }
        }
        Self::new(rows, cols, obs)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn observations(&self) -> &[f64] {
        &self.obs
    }

    fn resid(&self, z: &[f64], i: usize, j: usize) -> f64 {
        self.obs[i * self.cols + j] - z[0] - z[3 + i] - z[3 + self.rows + j]
    }
}

impl NegLogDensity for CrossedEffects {
    fn dim(&self) -> usize {
        self.rows + self.cols + 3
    }

    fn standard_prior(&self, j: usize) -> bool {
        j < 3
    }

    fn value(&self, z: &[f64]) -> f64 {
        let mut grad = vec![0.0; self.dim()];
        self.value_grad(z, &mut grad)
    }

    fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let (ni, nj) = (self.rows, self.cols);
        let (la, lb) = (z[1], z[2]);
        let (pa, pb) = ((-2.0 * la).exp(), (-2.0 * lb).exp());
        grad.fill(0.0);
        let mut v = (ni * nj + ni + nj) as f64 * HALF_LN_2PI;
        for i in 0..ni {
            for j in 0..nj {
                let r = self.resid(z, i, j);
                v += 0.5 * r * r;
                grad[0] -= r;
                grad[3 + i] -= r;
                grad[3 + ni + j] -= r;
            }
        }
        let a = &z[3..3 + ni];
        let b = &z[3 + ni..];
        let ssa: f64 = a.iter().map(|x| x * x).sum();
        let ssb: f64 = b.iter().map(|x| x * x).sum();
        v += 0.5 * pa * ssa + ni as f64 * la + 0.5 * pb * ssb + nj as f64 * lb;
        grad[1] = ni as f64 - pa * ssa;
        grad[2] = nj as f64 - pb * ssb;
        for (g, x) in grad[3..3 + ni].iter_mut().zip(a) {
            *g += pa * x;
        }
        for (g, x) in grad[3 + ni..].iter_mut().zip(b) {
            *g += pb * x;
        }
        v
    }

    fn hvp(&self, z: &[f64], w: &[f64], out: &mut [f64]) {
        let (ni, nj) = (self.rows, self.cols);
        let (pa, pb) = ((-2.0 * z[1]).exp(), (-2.0 * z[2]).exp());
        out.fill(0.0);
        for i in 0..ni {
            for j in 0..nj {
                let t = w[0] + w[3 + i] + w[3 + ni + j];
                out[0] += t;
                out[3 + i] += t;
                out[3 + ni + j] += t;
            }
        }
        let a = &z[3..3 + ni];
        let b = &z[3 + ni..];
        let (wa, wb) = (&w[3..3 + ni], &w[3 + ni..]);
        let a_dot: f64 = a.iter().zip(wa).map(|(x, y)| x * y).sum();
        let b_dot: f64 = b.iter().zip(wb).map(|(x, y)| x * y).sum();
        let ssa: f64 = a.iter().map(|x| x * x).sum();
        let ssb: f64 = b.iter().map(|x| x * x).sum();
        out[1] += 2.0 * pa * ssa * w[1] - 2.0 * pa * a_dot;
        out[2] += 2.0 * pb * ssb * w[2] - 2.0 * pb * b_dot;
        for i in 0..ni {
            out[3 + i] += pa * wa[i] - 2.0 * pa * a[i] * w[1];
        }
        for j in 0..nj {
            out[3 + ni + j] += pb * wb[j] - 2.0 * pb * b[j] * w[2];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{MeanField, VbProblem};

    #[test]
    fn hand_assembled_value() {
        // I = J = 1, Y = 0, all latents 0, q = N(0, I) over 5 coordinates.
        // Gaussian log-density terms at 0: one observation, one a-prior, one
        // b-prior, each -0.5 ln(2 pi). KL for (mu, log sa, log sb) is 0; the
        // a and b coordinates contribute minus the N(0,1) entropy.
        let m = MeanField::new(CrossedEffects::new(1, 1, vec![0.0]).unwrap());
        let f = m.value(&[0.0; 5], &[0.0; 10]);
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let entropy = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        let expected = 3.0 * half_ln_2pi - 2.0 * entropy;
        assert!((f - expected).abs() < 1e-14, "{f} vs {expected}");
    }

    #[test]
    fn layout() {
        let m = CrossedEffects::synthetic(10, 5, 0).unwrap();
        assert_eq!(m.dim(), 18);
        assert!(m.standard_prior(2) && !m.standard_prior(3));
        assert!(CrossedEffects::new(2, 2, vec![0.0; 3]).is_err());
    }
}
