use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::VbProblem;

/// Strongly convex quadratic with additive bounded noise:
/// `f(u; theta) = 0.5 (theta - theta*)' A (theta - theta*) - theta' xi(u)`
/// with `xi_j(u) = scale * sqrt(12) * (u_j - 1/2)`, so each noise coordinate
/// has mean 0 and variance `scale^2`. `F* = 0` at `theta*`.
///
/// The base distribution is the uniform cube itself (no inverse-CDF map),
/// which keeps every per-sample gradient bounded on bounded sets.
#[derive(Debug, Clone)]
pub struct NoisyQuadratic {
    a: DMatrix<f64>,
    theta_star: Vec<f64>,
    noise_scale: f64,
    eig_min: f64,
    eig_max: f64,
}

impl NoisyQuadratic {
    /// `A = Q diag(eigenvalues) Q'` with a seeded random orthogonal `Q`.
    pub fn new(eigenvalues: &[f64], theta_star: Vec<f64>, noise_scale: f64, seed: u64) -> Self {
        let d = eigenvalues.len();
        assert_eq!(theta_star.len(), d);
        assert!(eigenvalues.iter().all(|&e| e > 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        let q = g.qr().q();
        let a: DMatrix<f64> = &q * DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues)) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        NoisyQuadratic {
            a,
            theta_star,
            noise_scale,
            eig_min: eigenvalues.iter().copied().fold(f64::INFINITY, f64::min),
            eig_max: eigenvalues.iter().copied().fold(0.0, f64::max),
        }
    }

    /// Strong-convexity and gradient-Lipschitz constants `(c, L)`.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        (self.eig_min, self.eig_max)
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Exact `tr Var(g_bar)` for `n` IID uniform points.
    pub fn mc_variance_trace(&self, n: usize) -> f64 {
        self.theta_star.len() as f64 * self.noise_scale.powi(2) / n as f64
    }

    /// Largest per-sample noise norm, `scale * sqrt(3 d)`.
    pub fn noise_bound(&self) -> f64 {
        self.noise_scale * (3.0 * self.theta_star.len() as f64).sqrt()
    }

    fn noise(&self, j: usize, u: &[f64]) -> f64 {
        self.noise_scale * 12f64.sqrt() * (u[j] - 0.5)
    }

    fn a_times(&self, v: &[f64], out: &mut [f64]) {
        let d = v.len();
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..d).map(|j| self.a[(i, j)] * v[j]).sum();
        }
    }
}

impl VbProblem for NoisyQuadratic {
    fn latent_dim(&self) -> usize {
        self.theta_star.len()
    }

    fn theta_dim(&self) -> usize {
        self.theta_star.len()
    }

    fn to_base(&self, u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(u);
    }

    fn value(&self, u: &[f64], theta: &[f64]) -> f64 {
        let mut g = vec![0.0; theta.len()];
        self.value_grad(u, theta, &mut g)
    }

    fn value_grad(&self, u: &[f64], theta: &[f64], grad: &mut [f64]) -> f64 {
        let diff: Vec<f64> = theta.iter().zip(&self.theta_star).map(|(t, s)| t - s).collect();
        self.a_times(&diff, grad);
        let mut v = 0.0;
        for j in 0..theta.len() {
            let xi = self.noise(j, u);
            v += 0.5 * diff[j] * grad[j] - theta[j] * xi;
            grad[j] -= xi;
        }
        v
    }

    fn hvp(&self, _u: &[f64], _theta: &[f64], v: &[f64], out: &mut [f64]) {
        self.a_times(v, out);
    }

    fn optimum(&self) -> Option<Vec<f64>> {
        Some(self.theta_star.clone())
    }

    fn exact_objective(&self, theta: &[f64]) -> Option<f64> {
        let diff: Vec<f64> = theta.iter().zip(&self.theta_star).map(|(t, s)| t - s).collect();
        let mut ad = vec![0.0; diff.len()];
        self.a_times(&diff, &mut ad);
        Some(0.5 * diff.iter().zip(&ad).map(|(a, b)| a * b).sum::<f64>())
    }

    fn exact_gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let diff: Vec<f64> = theta.iter().zip(&self.theta_star).map(|(t, s)| t - s).collect();
        let mut g = vec![0.0; diff.len()];
        self.a_times(&diff, &mut g);
        Some(g)
    }
}
