//! Empirical checks of the expected optimality-gap and parameter-error bounds
//! on a strongly convex quadratic with bounded noise.

use super::{run_sqn_with, stream_seed, RunOptions, SqnConfig};
use crate::error::{Error, Result};
use crate::estimators::variance_trace;
use crate::models::{NoisyQuadratic, VbProblem};
use crate::sobol::SamplerKind;

#[derive(Debug, Clone)]
pub struct TheoremSetup {
    /// Run with a fixed step; the line search is switched off.
    pub sqn: SqnConfig,
    pub sampler: SamplerKind,
    pub theta0: Vec<f64>,
    pub reps: usize,
    pub horizons: Vec<usize>,
    /// Replicates used to measure `M`.
    pub variance_reps: usize,
}

/// Replicate runs reduced to what the bounds need.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub alpha: f64,
    pub c: f64,
    pub l: f64,
    pub h1: f64,
    pub h2: f64,
    /// Measured `tr Var(g_bar)` at `theta0`.
    pub m: f64,
    pub gap0: f64,
    pub sq_err0: f64,
    /// Bound on per-sample gradient norms over the region the runs visited.
    pub grad_bound: f64,
    pub horizons: Vec<usize>,
    /// `[rep][horizon]`
    pub gaps: Vec<Vec<f64>>,
    pub sq_errs: Vec<Vec<f64>>,
}

impl Simulation {
    pub fn mean_gap(&self, h: usize) -> f64 {
        self.gaps.iter().map(|g| g[h]).sum::<f64>() / self.gaps.len() as f64
    }

    pub fn mean_sq_err(&self, h: usize) -> f64 {
        self.sq_errs.iter().map(|g| g[h]).sum::<f64>() / self.sq_errs.len() as f64
    }
}

pub fn simulate(problem: &NoisyQuadratic, setup: &TheoremSetup) -> Result<Simulation> {
    if setup.reps == 0 || setup.horizons.is_empty() {
        return Err(Error::Config("need at least one replicate and one horizon".into()));
    }
    let k_max = *setup.horizons.iter().max().unwrap();
    let sqn = SqnConfig {
        iterations: k_max,
        line_search: false,
        ..setup.sqn.clone()
    };
    let dim = problem.theta_dim();
    let star = problem.optimum().unwrap();
    let (c, l) = problem.curvature_bounds();
    let gap = |th: &[f64]| problem.exact_objective(th).unwrap();
    let sq_err = |th: &[f64]| th.iter().zip(&star).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let opts = RunOptions {
        record_iterates: true,
        track_spectrum: true,
    };

    let (mut h1, mut h2) = (f64::INFINITY, 0.0f64);
    let mut max_dist = 0.0f64;
    let mut gaps = Vec::with_capacity(setup.reps);
    let mut sq_errs = Vec::with_capacity(setup.reps);
    for rep in 0..setup.reps as u64 {
        let seed = setup.sqn.seed.wrapping_add(rep);
        let mut g = setup.sampler.build(dim, stream_seed(seed, 0))?;
        let mut h = setup.sampler.build(dim, stream_seed(seed, 1))?;
        let (_, rec) = run_sqn_with(problem, &sqn, setup.theta0.clone(), g.as_mut(), h.as_mut(), &opts)?;
        if let Some(reason) = rec.aborted {
            return Err(Error::Solver(reason));
        }
        let (lo, hi) = rec.h_bounds.unwrap_or((1.0, 1.0));
        h1 = h1.min(lo);
        h2 = h2.max(hi);
        for th in &rec.iterates {
            max_dist = max_dist.max(sq_err(th).sqrt());
        }
        gaps.push(setup.horizons.iter().map(|&k| gap(&rec.iterates[k])).collect());
        sq_errs.push(setup.horizons.iter().map(|&k| sq_err(&rec.iterates[k])).collect());
    }
    let mut src = setup.sampler.build(dim, stream_seed(setup.sqn.seed, 2))?;
    let m = variance_trace(problem, src.as_mut(), &setup.theta0, sqn.n_grad, setup.variance_reps)?;
    Ok(Simulation {
        alpha: sqn.alpha,
        c,
        l,
        h1,
        h2,
        m,
        gap0: gap(&setup.theta0),
        sq_err0: sq_err(&setup.theta0),
        grad_bound: l * max_dist + problem.noise_bound(),
        horizons: setup.horizons.clone(),
        gaps,
        sq_errs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub k: usize,
    pub observed: f64,
    pub bound: f64,
}

impl BoundRow {
    pub fn holds(&self) -> bool {
        self.observed <= self.bound
    }
}

#[derive(Debug, Clone)]
pub struct Theorem1Report {
    pub step_ceiling: f64,
    pub plateau: f64,
    pub rows: Vec<BoundRow>,
}

impl Theorem1Report {
    pub fn holds(&self) -> bool {
        self.rows.iter().all(BoundRow::holds)
    }
}

fn contraction1(sim: &Simulation, k: usize) -> f64 {
    let a = (1.0 - sim.alpha * sim.c).powi(k as i32);
    let b = (1.0 - sim.alpha * sim.c * sim.h1).powi(k as i32);
    a.max(b)
}

/// Expected optimality gap against its bound at every horizon.
pub fn theorem1_bound_check(sim: &Simulation) -> Result<Theorem1Report> {
    let ceiling = sim.h1 / (sim.l * sim.h2 * sim.h2);
    if sim.alpha > ceiling {
        return Err(Error::Config(format!(
            "step {} exceeds h1/(L h2^2) = {ceiling} (h1={}, h2={})",
            sim.alpha, sim.h1, sim.h2
        )));
    }
    let plateau = sim.alpha * sim.l * sim.h2 * sim.h2 / (2.0 * sim.c * sim.h1) * sim.m;
    let rows = sim
        .horizons
        .iter()
        .enumerate()
        .map(|(i, &k)| BoundRow {
            k,
            observed: sim.mean_gap(i),
            bound: contraction1(sim, k) * sim.gap0 + plateau,
        })
        .collect();
    Ok(Theorem1Report {
        step_ceiling: ceiling,
        plateau,
        rows,
    })
}

#[derive(Debug, Clone)]
pub struct HighProbabilityReport {
    pub k: usize,
    pub epsilon: f64,
    pub bound: f64,
    pub exceed_fraction: f64,
    pub allowed: f64,
}

impl HighProbabilityReport {
    pub fn holds(&self) -> bool {
        self.exceed_fraction <= self.allowed
    }
}

/// Fraction of replicates whose gap at the last horizon exceeds the
/// finite-sample bound; allowed up to `exp(-epsilon^2) + slack`.
pub fn high_probability_check(sim: &Simulation, epsilon: f64, slack: f64) -> Result<HighProbabilityReport> {
    let t1 = theorem1_bound_check(sim)?;
    let last = sim.horizons.len() - 1;
    let k = sim.horizons[last];
    let (a, c, l, h1, h2) = (sim.alpha, sim.c, sim.l, sim.h1, sim.h2);
    let extra = sim.grad_bound.powi(2) * (2.0 * a / (c * h1)).sqrt() * (h2 - l * a * h1 * h1 + h1) * epsilon;
    let bound = contraction1(sim, k) * sim.gap0 + t1.plateau + extra;
    let exceed = sim.gaps.iter().filter(|g| g[last] > bound).count();
    Ok(HighProbabilityReport {
        k,
        epsilon,
        bound,
        exceed_fraction: exceed as f64 / sim.gaps.len() as f64,
        allowed: (-epsilon * epsilon).exp() + slack,
    })
}

#[derive(Debug, Clone)]
pub enum Theorem2Outcome {
    NotApplicable(String),
    Checked { step_ceiling: f64, rows: Vec<BoundRow> },
}

impl Theorem2Outcome {
    /// Not applicable counts as holding.
    pub fn holds(&self) -> bool {
        match self {
            Theorem2Outcome::NotApplicable(_) => true,
            Theorem2Outcome::Checked { rows, .. } => rows.iter().all(BoundRow::holds),
        }
    }
}

/// Expected squared parameter error against its bound, when the curvature
/// and step hypotheses hold for the recorded `h1`, `h2`.
pub fn theorem2_bound_check(sim: &Simulation) -> Theorem2Outcome {
    let (a, c, l, h1, h2) = (sim.alpha, sim.c, sim.l, sim.h1, sim.h2);
    let ratio = (h2 - h1) / (h2 + h1);
    if c / l <= ratio {
        return Theorem2Outcome::NotApplicable(format!("c/L = {} <= (h2-h1)/(h2+h1) = {ratio}", c / l));
    }
    let ceiling = ((h1 + h2) * c - (h2 - h1) * l) / (2.0 * l * l * h2 * h2);
    if a >= ceiling {
        return Theorem2Outcome::NotApplicable(format!("step {a} >= {ceiling}"));
    }
    let rho = 1.0 - a * a * h2 * h2 * l * l;
    let rows = sim
        .horizons
        .iter()
        .enumerate()
        .map(|(i, &k)| BoundRow {
            k,
            observed: sim.mean_sq_err(i),
            bound: rho.powi(k as i32) * sim.sq_err0 + sim.m / (l * l),
        })
        .collect();
    Theorem2Outcome::Checked {
        step_ceiling: ceiling,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(noise: f64) -> NoisyQuadratic {
        let eig: Vec<f64> = (0..6).map(|i| 1.0 + i as f64 / 5.0).collect();
        NoisyQuadratic::new(&eig, vec![0.5; 6], noise, 17)
    }

    fn setup(kind: SamplerKind, n: usize, interval: usize, horizons: Vec<usize>) -> TheoremSetup {
        TheoremSetup {
            sqn: SqnConfig {
                n_grad: n,
                n_hess: 64,
                interval,
                memory: 10,
                alpha: 0.05,
                ..Default::default()
            },
            sampler: kind,
            theta0: vec![2.0; 6],
            reps: 100,
            horizons,
            variance_reps: 200,
        }
    }

    #[test]
    fn noiseless_gap_is_pure_contraction() {
        let q = problem(0.0);
        let sim = simulate(&q, &setup(SamplerKind::Mc, 4, 10, vec![10, 50, 200])).unwrap();
        assert!(sim.m < 1e-20);
        let rep = theorem1_bound_check(&sim).unwrap();
        assert!(rep.plateau < 1e-18);
        assert!(rep.holds(), "{:?}", rep.rows);
    }

    #[test]
    fn identity_preconditioner_contraction() {
        let q = problem(0.0);
        let sim = simulate(&q, &setup(SamplerKind::Mc, 4, 1000, vec![5, 40])).unwrap();
        assert_eq!((sim.h1, sim.h2), (1.0, 1.0));
        match theorem2_bound_check(&sim) {
            Theorem2Outcome::Checked { rows, .. } => {
                for r in rows {
                    let rho = (1.0 - sim.alpha.powi(2) * sim.l.powi(2)).powi(r.k as i32);
                    assert!((r.bound - rho * sim.sq_err0).abs() < 1e-12);
                    assert!(r.holds());
                }
            }
            other => panic!("{other:?}"),
        }
    }

    fn plateau(kind: SamplerKind, n: usize) -> f64 {
        let q = problem(0.5);
        let sim = simulate(&q, &setup(kind, n, 1000, vec![300])).unwrap();
        sim.mean_gap(0)
    }

    #[test]
    fn plateau_scales_with_batch_size() {
        let ratio = plateau(SamplerKind::Mc, 16) / plateau(SamplerKind::Mc, 64);
        assert!(ratio > 2.0 && ratio < 8.0, "ratio {ratio}");
    }

    #[test]
    fn rqmc_plateau_below_mc() {
        assert!(plateau(SamplerKind::Rqmc, 16) <= plateau(SamplerKind::Mc, 16));
    }

    #[test]
    fn curvature_hypothesis_failure_is_not_applicable() {
        let sim = Simulation {
            alpha: 0.01,
            c: 1.0,
            l: 2.0,
            h1: 0.1,
            h2: 1.0,
            m: 1.0,
            gap0: 1.0,
            sq_err0: 1.0,
            grad_bound: 1.0,
            horizons: vec![1],
            gaps: vec![vec![0.0]],
            sq_errs: vec![vec![0.0]],
        };
        let out = theorem2_bound_check(&sim);
        assert!(matches!(out, Theorem2Outcome::NotApplicable(_)));
        assert!(out.holds());
    }

    #[test]
    fn oversized_step_is_a_config_error() {
        let q = problem(0.1);
        let mut s = setup(SamplerKind::Mc, 4, 1000, vec![5]);
        s.sqn.alpha = 0.6;
        let sim = simulate(&q, &s).unwrap();
        assert!(matches!(theorem1_bound_check(&sim), Err(Error::Config(_))));
    }
}
