//! Limited-memory BFGS: correction-pair buffer, two-loop recursion and a
//! weak Wolfe line search.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{dot, norm};

/// Relative curvature threshold for accepting a pair.
pub const CURVATURE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionPair {
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct LbfgsBuffer {
    pairs: VecDeque<CorrectionPair>,
    memory: usize,
}

impl LbfgsBuffer {
    pub fn new(memory: usize) -> Self {
        assert!(memory >= 1, "L-BFGS memory must be at least 1");
        LbfgsBuffer {
            pairs: VecDeque::with_capacity(memory),
            memory,
        }
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Oldest first.
    pub fn pairs(&self) -> impl Iterator<Item = &CorrectionPair> {
        self.pairs.iter()
    }

    /// Stores `(s, y)` when `s'y > CURVATURE_EPS |s| |y|`, evicting the oldest
    /// pair once full. Returns whether the pair was stored.
    pub fn insert_pair(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        assert_eq!(s.len(), y.len(), "correction pair dimensions differ");
        let sy = dot(&s, &y);
        if !(sy > CURVATURE_EPS * norm(&s) * norm(&y)) {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back(CorrectionPair { s, y, rho: 1.0 / sy });
        true
    }

    /// Initial scaling `s'y / y'y` of the newest pair, 1 when empty.
    pub fn gamma(&self) -> f64 {
        self.pairs
            .back()
            .map_or(1.0, |p| 1.0 / (p.rho * dot(&p.y, &p.y)))
    }

    /// `H g` for the implicit inverse-Hessian approximation.
    pub fn two_loop(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = vec![0.0; self.pairs.len()];
        for (i, p) in self.pairs.iter().enumerate().rev() {
            let a = p.rho * dot(&p.s, &q);
            alphas[i] = a;
            q.iter_mut().zip(&p.y).for_each(|(qj, yj)| *qj -= a * yj);
        }
        let gamma = self.gamma();
        q.iter_mut().for_each(|v| *v *= gamma);
        for (p, a) in self.pairs.iter().zip(&alphas) {
            let b = p.rho * dot(&p.y, &q);
            q.iter_mut().zip(&p.s).for_each(|(qj, sj)| *qj += (a - b) * sj);
        }
        q
    }

    /// The implicit `H` as a dense symmetric matrix, column by column.
    pub fn dense(&self, dim: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(dim, dim);
        let mut e = vec![0.0; dim];
        for j in 0..dim {
            e[j] = 1.0;
            let col = self.two_loop(&e);
            e[j] = 0.0;
            for (i, v) in col.into_iter().enumerate() {
                h[(i, j)] = v;
            }
        }
        (&h + h.transpose()) * 0.5
    }

    /// Smallest and largest eigenvalue of the implicit `H`.
    pub fn spectrum_bounds(&self, dim: usize) -> (f64, f64) {
        let eig = SymmetricEigen::new(self.dense(dim)).eigenvalues;
        (eig.min(), eig.max())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WolfeConfig {
    pub c1: f64,
    pub c2: f64,
    pub max_iter: usize,
    pub initial_step: f64,
}

impl Default for WolfeConfig {
    fn default() -> Self {
        WolfeConfig {
            c1: 1e-3,
            c2: 1e-2,
            max_iter: 20,
            initial_step: 1.0,
        }
    }
}

impl WolfeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Config(format!(
                "Wolfe constants need 0 < c1 < c2 < 1, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        if self.max_iter == 0 || !(self.initial_step > 0.0) {
            return Err(Error::Config("line search needs max_iter >= 1 and a positive initial step".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearchStatus {
    Converged,
    MaxIterations,
    NotDescent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchOutcome {
    pub step: f64,
    pub status: LineSearchStatus,
    /// Objective-and-gradient evaluations spent.
    pub evaluations: usize,
}

impl LineSearchOutcome {
    pub fn fell_back(&self) -> bool {
        self.status != LineSearchStatus::Converged
    }
}

/// Weak Wolfe search by bracketing and bisection.
///
/// `eval` returns the objective and gradient at a trial point; `f0` and `g0`
/// are their values at `theta`. Returns `fallback` when `p` is not a descent
/// direction or no step is accepted within `config.max_iter` trials.
pub fn wolfe_line_search<F>(
    mut eval: F,
    theta: &[f64],
    f0: f64,
    g0: &[f64],
    p: &[f64],
    config: &WolfeConfig,
    fallback: f64,
) -> LineSearchOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let d0 = dot(g0, p);
    if !(d0 < 0.0) {
        return LineSearchOutcome {
            step: fallback,
            status: LineSearchStatus::NotDescent,
            evaluations: 0,
        };
    }
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut alpha = config.initial_step;
    let mut trial = vec![0.0; theta.len()];
    for it in 0..config.max_iter {
        for ((t, x), pj) in trial.iter_mut().zip(theta).zip(p) {
            *t = x + alpha * pj;
        }
        let (f, g) = eval(&trial);
        if !f.is_finite() || f > f0 + config.c1 * alpha * d0 {
            hi = alpha;
        } else if dot(&g, p) < config.c2 * d0 {
            lo = alpha;
        } else {
            return LineSearchOutcome {
                step: alpha,
                status: LineSearchStatus::Converged,
                evaluations: it + 1,
            };
        }
        alpha = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * alpha };
    }
    LineSearchOutcome {
        step: fallback,
        status: LineSearchStatus::MaxIterations,
        evaluations: config.max_iter,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Explicit BFGS inverse update from `gamma I` over every stored pair.
    fn dense_oracle(buf: &LbfgsBuffer, dim: usize) -> DMatrix<f64> {
        let mut h = DMatrix::identity(dim, dim) * buf.gamma();
        for p in buf.pairs() {
            let s = DVector::from_column_slice(&p.s);
            let y = DVector::from_column_slice(&p.y);
            let v = DMatrix::identity(dim, dim) - &y * s.transpose() * p.rho;
            h = v.transpose() * h * &v + &s * s.transpose() * p.rho;
        }
        h
    }

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        &g * g.transpose() + DMatrix::identity(d, d) * 0.5
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm(&diff) / norm(b)
    }

    #[test]
    fn empty_buffer_is_identity() {
        let buf = LbfgsBuffer::new(3);
        assert_eq!(buf.two_loop(&[1.0, -2.0, 0.5]), vec![1.0, -2.0, 0.5]);
        assert_eq!(buf.gamma(), 1.0);
    }

    #[test]
    fn insertion_rules() {
        let mut buf = LbfgsBuffer::new(2);
        assert!(buf.insert_pair(vec![1.0, 0.0], vec![1.0, 0.0]));
        assert!(!buf.insert_pair(vec![1.0, 2.0], vec![-1.0, -2.0]));
        assert!(!buf.insert_pair(vec![1.0, 0.0], vec![0.0, 1.0]));
        assert!(buf.insert_pair(vec![0.0, 1.0], vec![0.0, 2.0]));
        assert!(buf.insert_pair(vec![1.0, 1.0], vec![1.0, 3.0]));
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.pairs().next().unwrap().s, vec![0.0, 1.0]);
    }

    #[test]
    fn one_pair_matches_dense_update() {
        let mut buf = LbfgsBuffer::new(5);
        buf.insert_pair(vec![0.5, -1.0], vec![2.0, -0.5]);
        let g = [0.3, 0.7];
        let dense = dense_oracle(&buf, 2) * DVector::from_column_slice(&g);
        assert!(rel_err(&buf.two_loop(&g), dense.as_slice()) < 1e-12);
    }

    #[test]
    fn matches_dense_oracle_for_every_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let d = 2 + trial % 4;
            let a = random_spd(&mut rng, d);
            let mut buf = LbfgsBuffer::new(d + 3);
            for _ in 0..d + 3 {
                let s = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
                let y = &a * &s;
                assert!(buf.insert_pair(s.as_slice().to_vec(), y.as_slice().to_vec()));
                let g: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let want = dense_oracle(&buf, d) * DVector::from_column_slice(&g);
                let err = rel_err(&buf.two_loop(&g), want.as_slice());
                assert!(err < 1e-10, "trial {trial}, {} pairs: {err}", buf.len());
            }
        }
    }

    #[test]
    fn recovers_inverse_on_quadratic() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let ainv = a.clone().try_inverse().unwrap();
        let mut buf = LbfgsBuffer::new(5);
        let mut theta = DVector::from_column_slice(&[1.0, -2.0, 0.7]);
        for _ in 0..5 {
            let g = &a * &theta;
            let p = -DVector::from_column_slice(&buf.two_loop(g.as_slice()));
            let alpha = -g.dot(&p) / p.dot(&(&a * &p));
            let s = &p * alpha;
            let y = &a * &s;
            theta += &s;
            buf.insert_pair(s.as_slice().to_vec(), y.as_slice().to_vec());
        }
        let g = [0.4, -1.0, 2.0];
        let want = &ainv * DVector::from_column_slice(&g);
        assert!(rel_err(&buf.two_loop(&g), want.as_slice()) < 1e-6);
    }

    proptest! {
        #[test]
        fn direction_is_descent(seed in 0u64..10_000, d in 2usize..6, g in prop::collection::vec(-5.0f64..5.0, 6)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut buf = LbfgsBuffer::new(4);
            for _ in 0..6 {
                let s: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                buf.insert_pair(s, y);
            }
            let g = &g[..d];
            prop_assume!(norm(g) > 1e-6);
            prop_assert!(dot(g, &buf.two_loop(g)) > 0.0);
            let (lo, hi) = buf.spectrum_bounds(d);
            prop_assert!(lo > 0.0 && hi >= lo);
        }
    }

    #[test]
    fn spectrum_is_a_positive_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 1.3, 1.7, 2.0]));
        let mut buf = LbfgsBuffer::new(3);
        for _ in 0..10 {
            let s = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let y = &a * &s;
            buf.insert_pair(s.as_slice().to_vec(), y.as_slice().to_vec());
            let (lo, hi) = buf.spectrum_bounds(4);
            assert!(lo > 0.0 && hi.is_finite() && lo <= hi, "[{lo}, {hi}]");
        }
    }

    fn quad(diag: &[f64]) -> impl Fn(&[f64]) -> (f64, Vec<f64>) + '_ {
        move |x: &[f64]| {
            let g: Vec<f64> = x.iter().zip(diag).map(|(v, a)| a * v).collect();
            (0.5 * dot(x, &g), g)
        }
    }

    #[test]
    fn unit_step_accepted_on_scalar_quadratic() {
        let f = quad(&[1.0]);
        let out = wolfe_line_search(&f, &[1.0], 0.5, &[1.0], &[-1.0], &WolfeConfig::default(), 0.01);
        assert_eq!(out.step, 1.0);
        assert_eq!(out.status, LineSearchStatus::Converged);
        assert_eq!(out.evaluations, 1);
    }

    #[test]
    fn ascent_direction_falls_back() {
        let f = quad(&[1.0]);
        let out = wolfe_line_search(&f, &[1.0], 0.5, &[1.0], &[1.0], &WolfeConfig::default(), 0.01);
        assert_eq!(out.step, 0.01);
        assert_eq!(out.status, LineSearchStatus::NotDescent);
        assert!(out.fell_back());
    }

    #[test]
    fn ill_conditioned_step_satisfies_both_conditions() {
        let diag = [1.0, 100.0];
        let f = quad(&diag);
        let theta = [1.0, 1.0];
        let (f0, g0) = f(&theta);
        let p: Vec<f64> = g0.iter().map(|g| -g).collect();
        let cfg = WolfeConfig::default();
        let out = wolfe_line_search(&f, &theta, f0, &g0, &p, &cfg, 0.01);
        assert_eq!(out.status, LineSearchStatus::Converged);
        let x: Vec<f64> = theta.iter().zip(&p).map(|(t, d)| t + out.step * d).collect();
        let (fa, ga) = f(&x);
        let d0 = dot(&g0, &p);
        assert!(fa <= f0 + cfg.c1 * out.step * d0);
        assert!(dot(&ga, &p) >= cfg.c2 * d0);
    }

    #[test]
    fn config_validation() {
        assert!(WolfeConfig::default().validate().is_ok());
        let bad = WolfeConfig { c1: 0.5, c2: 0.1, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
