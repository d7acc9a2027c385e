//! Factorized Gaussians, the softplus scale parameterization and the
//! reparameterized weight sampler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Above this pre-activation softplus is evaluated as `rho + log1p(exp(-rho))`.
pub const SOFTPLUS_LINEAR_THRESHOLD: f64 = 30.0;

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Scalar `log(1 + exp(x))`, overflow-safe.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR_THRESHOLD {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise softplus mapping unconstrained `rho` to a positive scale.
pub fn softplus_sigma(rho: &[f64]) -> Result<Vec<f64>> {
    rho.iter()
        .enumerate()
        .map(|(i, &r)| {
            if r.is_finite() {
                Ok(softplus(r))
            } else {
                Err(Error::invalid(format!("rho[{i}] = {r} is not finite")))
            }
        })
        .collect()
}

/// Log-density of a univariate normal.
#[inline]
pub fn log_normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -HALF_LN_2PI - sigma.ln() - 0.5 * z * z
}

/// A Gaussian with diagonal covariance, stored as per-dimension mean and
/// standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::invalid("gaussian must have at least one dimension"));
        }
        if mu.len() != sigma.len() {
            return Err(Error::invalid(format!(
                "mean has {} entries but sigma has {}",
                mu.len(),
                sigma.len()
            )));
        }
        if let Some(i) = sigma.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid(format!(
                "sigma[{i}] = {} must be positive and finite",
                sigma[i]
            )));
        }
        if let Some(i) = mu.iter().position(|m| !m.is_finite()) {
            return Err(Error::invalid(format!("mu[{i}] = {} is not finite", mu[i])));
        }
        Ok(Self { mu, sigma })
    }

    /// Univariate Gaussian from mean and variance.
    pub fn univariate(mu: f64, variance: f64) -> Result<Self> {
        Self::new(vec![mu], vec![variance.sqrt()])
    }

    /// `n` independent copies of `N(mu, sigma^2)`.
    pub fn splat(n: usize, mu: f64, sigma: f64) -> Result<Self> {
        Self::new(vec![mu; n], vec![sigma; n])
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn variance(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s * s).collect()
    }

    /// Draw `mu + sigma * eps`.
    pub fn transform(&self, eps: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .zip(eps)
            .map(|((m, s), e)| m + s * e)
            .collect()
    }

    pub(crate) fn check_same_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::invalid(format!(
                "dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

/// Trainable `(mu, rho)` pair for one parameter tensor; `sigma = softplus(rho)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

impl VariationalParams {
    pub fn new(mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if mu.len() != rho.len() {
            return Err(Error::invalid(format!(
                "mu has {} entries but rho has {}",
                mu.len(),
                rho.len()
            )));
        }
        Ok(Self { mu, rho })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    pub fn posterior(&self) -> Result<DiagonalGaussian> {
        DiagonalGaussian::new(self.mu.clone(), softplus_sigma(&self.rho)?)
    }
}

/// Reparameterized draw `mu + softplus(rho) * eps`.
pub fn sample_weights(params: &VariationalParams, epsilon: &[f64]) -> Result<Vec<f64>> {
    if epsilon.len() != params.len() {
        return Err(Error::invalid(format!(
            "epsilon has {} entries, parameters have {}",
            epsilon.len(),
            params.len()
        )));
    }
    Ok(params
        .mu
        .iter()
        .zip(&params.rho)
        .zip(epsilon)
        .map(|((m, &r), e)| m + softplus(r) * e)
        .collect())
}

/// Joint log-density of `x` under a diagonal Gaussian.
pub fn log_density(x: &[f64], g: &DiagonalGaussian) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::invalid(format!(
            "point has {} entries, gaussian has dimension {}",
            x.len(),
            g.dim()
        )));
    }
    Ok(x.iter()
        .zip(g.mu())
        .zip(g.sigma())
        .map(|((&xi, &m), &s)| log_normal_pdf(xi, m, s))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn softplus_examples() {
        let s = softplus_sigma(&[0.0, -40.0, 2.197_225]).unwrap();
        assert!((s[0] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(s[1] > 0.0 && (s[1] - 4.248_354_255_291_589e-18).abs() < 1e-30);
        // e^2.197225 is 9 to six places, so this is ln 10
        assert!((s[2] - std::f64::consts::LN_10).abs() < 1e-6);
    }

    #[test]
    fn softplus_large_branch_is_continuous() {
        let below = softplus(SOFTPLUS_LINEAR_THRESHOLD - 1e-9);
        let above = softplus(SOFTPLUS_LINEAR_THRESHOLD + 1e-9);
        assert!((above - below).abs() < 1e-8);
        assert_eq!(softplus(1000.0), 1000.0);
    }

    #[test]
    fn softplus_rejects_non_finite() {
        assert!(softplus_sigma(&[f64::NAN]).is_err());
        assert!(softplus_sigma(&[0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn sample_weights_examples() {
        let p = VariationalParams::new(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(sample_weights(&p, &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);

        let p = VariationalParams::new(vec![0.0], vec![0.0]).unwrap();
        let w = sample_weights(&p, &[1.0]).unwrap();
        assert!((w[0] - std::f64::consts::LN_2).abs() < 1e-15);

        let p = VariationalParams::new(vec![0.5], vec![-4.0]).unwrap();
        let w = sample_weights(&p, &[2.0]).unwrap();
        assert!((w[0] - 0.536_299_8).abs() < 1e-7);

        assert!(sample_weights(&p, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn log_density_examples() {
        let std_normal = DiagonalGaussian::univariate(0.0, 1.0).unwrap();
        assert!((log_density(&[0.0], &std_normal).unwrap() + 0.918_938_5).abs() < 1e-7);
        let shifted = DiagonalGaussian::univariate(3.7, 1.0).unwrap();
        assert!((log_density(&[3.7], &shifted).unwrap() + 0.918_938_5).abs() < 1e-7);
        let wide = DiagonalGaussian::new(vec![0.0], vec![2.0]).unwrap();
        // -0.9189385 - ln 2 - 1/8
        assert!((log_density(&[1.0], &wide).unwrap() + 1.737_085_7).abs() < 1e-7);
        assert!(log_density(&[1.0, 2.0], &wide).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        // trapezoid over +-12 sigma
        let g = DiagonalGaussian::new(vec![0.3], vec![0.7]).unwrap();
        let (lo, hi, n) = (0.3 - 12.0 * 0.7, 0.3 + 12.0 * 0.7, 200_000);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * log_density(&[x], &g).unwrap().exp();
        }
        assert!((total * h - 1.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_gaussians_rejected() {
        assert!(DiagonalGaussian::new(vec![], vec![]).is_err());
        assert!(DiagonalGaussian::new(vec![0.0], vec![0.0]).is_err());
        assert!(DiagonalGaussian::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(VariationalParams::new(vec![0.0], vec![]).is_err());
    }

    #[test]
    fn reparameterized_moments() {
        let p = VariationalParams::new(vec![1.5], vec![-0.3]).unwrap();
        let sigma = softplus(-0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_weights(&p, &[StandardNormal.sample(&mut rng)]).unwrap()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = sigma / (n as f64).sqrt();
        assert!((mean - 1.5).abs() < 3.0 * se_mean);
        // sd of the sample standard deviation is about sigma / sqrt(2n)
        let se_sd = sigma / (2.0 * n as f64).sqrt();
        assert!((var.sqrt() - sigma).abs() < 3.0 * se_sd);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softplus_positive_and_monotone(a in -700.0f64..700.0, b in -700.0f64..700.0) {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                prop_assert!(softplus(lo) > 0.0);
                prop_assert!(softplus(lo) <= softplus(hi));
            }
        }
    }
}
