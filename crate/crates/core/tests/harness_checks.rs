use rqmc_sqn::harness::acceptance::{default_search, line_search_check, select};
use rqmc_sqn::lbfgs::{LineSearchOutcome, LineSearchStatus, WolfeConfig};

fn armijo_only(
    eval: &mut dyn FnMut(&[f64]) -> (f64, Vec<f64>),
    theta: &[f64],
    f0: f64,
    g0: &[f64],
    p: &[f64],
    config: &WolfeConfig,
    _fallback: f64,
) -> LineSearchOutcome {
    let d0: f64 = g0.iter().zip(p).map(|(a, b)| a * b).sum();
    let mut step = 1e-6;
    let mut evaluations = 0;
    loop {
        let x: Vec<f64> = theta.iter().zip(p).map(|(t, q)| t + step * q).collect();
        let (f, _) = eval(&x);
        evaluations += 1;
        if f <= f0 + config.c1 * step * d0 || evaluations >= 40 {
            break;
        }
        step *= 0.5;
    }
    LineSearchOutcome { step, status: LineSearchStatus::Converged, evaluations }
}

#[test]
fn line_search_check_accepts_wolfe_search() {
    let (ok, detail) = line_search_check(default_search).unwrap();
    assert!(ok, "{detail}");
}

#[test]
fn line_search_check_rejects_missing_curvature_condition() {
    let (ok, detail) = line_search_check(armijo_only).unwrap();
    assert!(!ok, "{detail}");
}

#[test]
fn selectors() {
    let ids = |s| select(s).unwrap().iter().map(|c| c.id).collect::<Vec<_>>();
    assert_eq!(ids("sobol"), ["1", "3"]);
    assert_eq!(ids("theory"), ["8", "8b", "9"]);
    assert_eq!(ids("11"), ["11"]);
    assert_eq!(ids("all").len(), 13);
    assert!(select("nope").is_err());
}
