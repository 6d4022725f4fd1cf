//! Uniform-to-Gaussian mapping and the diagonal-Gaussian reparameterization.

use crate::error::{Error, Result};
use crate::sobol::SampleBatch;

/// Inputs at or outside the endpoints are clamped to `[U_MIN, 1 - U_MIN]`,
/// so the exact zero emitted by the unscrambled sequence maps to a finite
/// value. Interior inputs are left alone.
pub const U_MIN: f64 = 1.0 / 4_294_967_296.0;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal quantile: Wichura's AS241 rational approximation followed
/// by one Halley step against `normal_cdf`.
#[allow(clippy::excessive_precision)]
pub fn inv_normal_cdf(u: f64) -> f64 {
    const A: [f64; 8] = [
        3.3871328727963666080e0,
        1.3314166789178437745e+2,
        1.9715909503065514427e+3,
        1.3731693765509461125e+4,
        4.5921953931549871457e+4,
        6.7265770927008700853e+4,
        3.3430575583588128105e+4,
        2.5090809287301226727e+3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.2313330701600911252e+1,
        6.8718700749205790830e+2,
        5.3941960214247511077e+3,
        2.1213794301586595867e+4,
        3.9307895800092710610e+4,
        2.8729085735721942674e+4,
        5.2264952788528545610e+3,
    ];
    const C: [f64; 8] = [
        1.42343711074968357734e0,
        4.63033784615654529590e0,
        5.76949722146069140550e0,
        3.64784832476320460504e0,
        1.27045825245236838258e0,
        2.41780725177450611770e-1,
        2.27238449892691845833e-2,
        7.74545014278341407640e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.05319162663775882187e0,
        1.67638483018380384940e0,
        6.89767334985100004550e-1,
        1.48103976427480074590e-1,
        1.51986665636164571966e-2,
        5.47593808499534494600e-4,
        1.05075007164441684324e-9,
    ];
    const E: [f64; 8] = [
        6.65790464350110377720e0,
        5.46378491116411436990e0,
        1.78482653991729133580e0,
        2.96560571828504891230e-1,
        2.65321895265761230930e-2,
        1.24266094738807843860e-3,
        2.71155556874348757815e-5,
        2.01033439929228813265e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.99832206555887937690e-1,
        1.36929880922735805310e-1,
        1.48753612908506148525e-2,
        7.86869131145613259100e-4,
        1.84631831751005468180e-5,
        1.42151175831644588870e-7,
        2.04426310338993978564e-15,
    ];

    fn ratio(num: &[f64; 8], den: &[f64; 8], r: f64) -> f64 {
        let p = num.iter().rev().fold(0.0, |acc, &c| acc * r + c);
        let q = den.iter().rev().fold(0.0, |acc, &c| acc * r + c);
        p / q
    }

    let u = if u <= 0.0 || u.is_nan() {
        U_MIN
    } else if u >= 1.0 {
        1.0 - U_MIN
    } else {
        u
    };
    let q = u - 0.5;
    let x = if q.abs() <= 0.425 {
        q * ratio(&A, &B, 0.180625 - q * q)
    } else {
        let tail = if q < 0.0 { u } else { 1.0 - u };
        let r = (-tail.ln()).sqrt();
        let z = if r <= 5.0 {
            ratio(&C, &D, r - 1.6)
        } else {
            ratio(&E, &F, r - 5.0)
        };
        if q < 0.0 {
            -z
        } else {
            z
        }
    };

    // Halley refinement; the residual is taken on the smaller tail to keep
    // relative precision.
    let resid = if x < 0.0 {
        normal_cdf(x) - u
    } else {
        (1.0 - u) - normal_cdf(-x)
    };
    let t = resid / normal_pdf(x);
    x - t / (1.0 + 0.5 * x * t)
}

/// Means and log standard deviations of a mean-field Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussianParams {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl DiagGaussianParams {
    pub fn new(mu: Vec<f64>, log_sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != log_sigma.len() {
            return Err(Error::mismatch("log_sigma", mu.len(), log_sigma.len()));
        }
        Ok(DiagGaussianParams { mu, log_sigma })
    }

    /// Splits a flat parameter vector `(mu, log_sigma)` of even length.
    pub fn from_theta(theta: &[f64]) -> Result<Self> {
        if theta.len() % 2 != 0 {
            return Err(Error::mismatch("theta (must be even)", theta.len() + 1, theta.len()));
        }
        let d = theta.len() / 2;
        Ok(DiagGaussianParams {
            mu: theta[..d].to_vec(),
            log_sigma: theta[d..].to_vec(),
        })
    }

    pub fn to_theta(&self) -> Vec<f64> {
        self.mu.iter().chain(&self.log_sigma).copied().collect()
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|s| s.exp()).collect()
    }
}

/// `mu + sigma * z`, elementwise.
pub fn reparameterize(z_std: &[f64], params: &DiagGaussianParams) -> Result<Vec<f64>> {
    if z_std.len() != params.dim() {
        return Err(Error::mismatch("standard-normal draw", params.dim(), z_std.len()));
    }
    Ok(z_std
        .iter()
        .zip(&params.mu)
        .zip(&params.log_sigma)
        .map(|((z, m), ls)| m + ls.exp() * z)
        .collect())
}

/// Elementwise `inv_normal_cdf` over a batch, keeping its shape.
pub fn uniform_batch_to_normal(batch: &SampleBatch) -> SampleBatch {
    SampleBatch {
        points: batch.points.iter().map(|&u| inv_normal_cdf(u)).collect(),
        n: batch.n,
        dim: batch.dim,
        iteration: batch.iteration,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sobol::{Randomization, SobolSampler};
    use crate::harness::oracles::reference_normal_cdf as oracle_cdf;

    #[test]
    fn reference_quantiles() {
        // 40-digit values from mpmath: sqrt(2) * erfinv(2u - 1)
        let cases = [
            (0.975, 1.959963984540054235524594430520551527956),
            (0.999, 3.090232306167813541540399830107379205490),
            (0.02425, -1.972961051311884850269798859475845657886),
            (1e-10, -6.361340902404056204695375828265217557721),
        ];
        for (u, z) in cases {
            let got = inv_normal_cdf(u);
            assert!((got - z).abs() <= 1e-14 * z.abs(), "u={u}: {got} vs {z}");
        }
        assert_eq!(inv_normal_cdf(0.5), 0.0);
    }

    #[test]
    fn antisymmetric() {
        for i in 1..1000 {
            let u = i as f64 / 1000.0;
            assert!((inv_normal_cdf(u) + inv_normal_cdf(1.0 - u)).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_log_grid() {
        let n = 2000;
        let (lo, hi) = (1e-10f64.ln(), 0.5f64.ln());
        let mut worst = 0.0f64;
        for i in 0..=n {
            let u = (lo + (hi - lo) * i as f64 / n as f64).exp();
            for v in [u, 1.0 - u] {
                worst = worst.max((oracle_cdf(inv_normal_cdf(v)) - v).abs());
            }
        }
        assert!(worst <= 1e-12, "max round-trip error {worst}");
    }

    #[test]
    fn endpoints_are_clamped() {
        let lo = inv_normal_cdf(0.0);
        let hi = inv_normal_cdf(1.0);
        assert!(lo.is_finite() && hi.is_finite());
        // 2^-32 quantile, mpmath
        assert!((lo + 6.230260137989043162289235943696879614935).abs() < 1e-12);
        assert_eq!(lo, -hi);
    }

    #[test]
    fn reparameterize_cases() {
        let p = DiagGaussianParams::new(vec![1.0, 2.0], vec![2f64.ln(), 3f64.ln()]).unwrap();
        let out = reparameterize(&[1.0, -1.0], &p).unwrap();
        assert!((out[0] - 3.0).abs() < 1e-15 && (out[1] + 1.0).abs() < 1e-15);
        assert_eq!(reparameterize(&[0.0, 0.0], &p).unwrap(), p.mu);
        let id = DiagGaussianParams::new(vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert_eq!(reparameterize(&[0.3, -1.2, 4.0], &id).unwrap(), vec![0.3, -1.2, 4.0]);
        assert!(matches!(
            reparameterize(&[0.0], &p),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(DiagGaussianParams::new(vec![0.0], vec![]).is_err());
    }

    #[test]
    fn batch_mapping() {
        let halves = SampleBatch::new(vec![0.5; 6], 3, 0);
        assert!(uniform_batch_to_normal(&halves).points.iter().all(|&x| x == 0.0));
        let b = SampleBatch::new(vec![0.975, 0.0], 2, 0);
        let z = uniform_batch_to_normal(&b);
        assert!((z.points[0] - 1.959963984540054).abs() < 1e-13);
        assert!(z.points[1].is_finite());
    }

    #[test]
    fn scrambled_normal_moments() {
        let dim = 4;
        let mut s = SobolSampler::bundled(dim, Randomization::LinearScrambleShift, 3).unwrap();
        let z = uniform_batch_to_normal(&s.draw_batch(1 << 14).unwrap());
        for j in 0..dim {
            let xs: Vec<f64> = z.rows().map(|r| r[j]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            assert!(mean.abs() < 1e-3, "coord {j} mean {mean}");
            assert!((var - 1.0).abs() < 1e-2, "coord {j} var {var}");
        }
    }
}
