//! Closed-form and Monte-Carlo divergences between diagonal Gaussians.
//!
//! Argument convention: the first Gaussian is always the variational
//! posterior `q`, the second the prior `p`. The skewed divergences are
//!
//! * JS-G: `(1-a) KL(q || G) + a KL(p || G)` where `G` is the normalized
//!   weighted geometric mean `q^a p^(1-a) / Z`, itself Gaussian.
//! * JS-A: `(1-a) KL(q || A) + a KL(p || A)` with the mixture
//!   `A = a q + (1-a) p`, bounded by [`jsa_bound`].
//!
//! Both reduce to `KL(q || p)` at `a = 0` and `KL(p || q)` at `a = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{log_normal_pdf, DiagonalGaussian};
use crate::rng::{derive_seed, seeded, standard_normals, Rng};

/// Skew, regularization weight and Monte-Carlo settings shared by the losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

impl DivergenceConfig {
    pub fn new(alpha: f64, lambda: f64, mc_samples: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            alpha,
            lambda,
            mc_samples,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda = {} must be >= 0", self.lambda)));
        }
        if self.mc_samples == 0 {
            return Err(Error::invalid("mc_samples must be >= 1"));
        }
        Ok(())
    }
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lambda: 1.0,
            mc_samples: 1,
            seed: 0,
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha = {alpha} outside [0, 1]")))
    }
}

/// Parameters of the normalized geometric-mean Gaussian `q^a p^(1-a) / Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricMeanParams {
    pub mu_prime: Vec<f64>,
    pub sigma_prime_sq: Vec<f64>,
}

impl GeometricMeanParams {
    pub fn to_gaussian(&self) -> Result<DiagonalGaussian> {
        DiagonalGaussian::new(
            self.mu_prime.clone(),
            self.sigma_prime_sq.iter().map(|v| v.sqrt()).collect(),
        )
    }
}

// ---------------------------------------------------------------------------
// Per-coordinate primitives. `v` denotes a variance.

#[inline]
pub(crate) fn kl_1d(mq: f64, vq: f64, mp: f64, vp: f64) -> f64 {
    let d = mp - mq;
    0.5 * (vq / vp + (vp / vq).ln() + d * d / vp - 1.0)
}

/// `KL(q || p)` for one coordinate with its derivatives in `(mu_q, sigma_q)`.
#[inline]
pub(crate) fn kl_1d_grad(mq: f64, sq: f64, mp: f64, sp: f64) -> (f64, f64, f64) {
    let (vq, vp) = (sq * sq, sp * sp);
    let value = kl_1d(mq, vq, mp, vp);
    let d_mu = (mq - mp) / vp;
    let d_sigma = sq / vp - 1.0 / sq;
    (value, d_mu, d_sigma)
}

#[inline]
fn geometric_mean_1d(m1: f64, v1: f64, m2: f64, v2: f64, a: f64) -> (f64, f64) {
    let denom = (1.0 - a) * v1 + a * v2;
    let v_prime = v1 * v2 / denom;
    let m_prime = v_prime * (a * m1 / v1 + (1.0 - a) * m2 / v2);
    (m_prime, v_prime)
}

#[inline]
pub(crate) fn jsg_1d(m1: f64, v1: f64, m2: f64, v2: f64, a: f64) -> f64 {
    let (mp, vp) = geometric_mean_1d(m1, v1, m2, v2, a);
    let trace = ((1.0 - a) * v1 + a * v2) / vp;
    let log_det = vp.ln() - (1.0 - a) * v1.ln() - a * v2.ln();
    let d1 = mp - m1;
    let d2 = mp - m2;
    let mahal = ((1.0 - a) * d1 * d1 + a * d2 * d2) / vp;
    0.5 * (trace + log_det + mahal - 1.0)
}

/// Closed-form JS-G for one coordinate with derivatives in `(mu_1, sigma_1)`.
///
/// Uses the simplification `mu' - mu_1 = (1-a) v1 (mu_2 - mu_1) / D` and
/// `mu' - mu_2 = a v2 (mu_1 - mu_2) / D`, `D = (1-a) v1 + a v2`.
pub(crate) fn jsg_1d_grad(m1: f64, s1: f64, m2: f64, s2: f64, a: f64) -> (f64, f64, f64) {
    let (v1, v2) = (s1 * s1, s2 * s2);
    let b = 1.0 - a;
    let d = b * v1 + a * v2;
    let delta = m1 - m2;
    let n = b * b * b * v1 * v1 + a * a * a * v2 * v2;
    let value = jsg_1d(m1, v1, m2, v2, a);

    let d_mu = delta * n / (d * v1 * v2);

    let d_trace = d * (2.0 * b * v1 - d) / (v1 * v1 * v2);
    let d_logdet = a / v1 - b / d;
    let dv1 = d * v1;
    let d_mahal = delta * delta / v2 * (2.0 * b * b * b * v1 * dv1 - n * (b * v1 + d)) / (dv1 * dv1);
    let d_v1 = 0.5 * (d_trace + d_logdet + d_mahal);
    (value, d_mu, d_v1 * 2.0 * s1)
}

/// `log(exp(x) + exp(y))` tolerating `-inf` arguments.
#[inline]
pub(crate) fn log_add_exp(x: f64, y: f64) -> f64 {
    let m = x.max(y);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((x - m).exp() + (y - m).exp()).ln()
}

/// Log-density of the mixture `a q + (1-a) p` given the component log-densities.
#[inline]
pub(crate) fn log_mixture(a: f64, log_q: f64, log_p: f64) -> f64 {
    log_add_exp(a.ln() + log_q, (1.0 - a).ln() + log_p)
}

// ---------------------------------------------------------------------------
// Closed forms

/// `KL(q || p)` for diagonal Gaussians.
pub fn kl_gaussian(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<f64> {
    q.check_same_dim(p)?;
    Ok((0..q.dim())
        .map(|i| {
            let (sq, sp) = (q.sigma()[i], p.sigma()[i]);
            kl_1d(q.mu()[i], sq * sq, p.mu()[i], sp * sp)
        })
        .sum())
}

pub fn geometric_mean_params(
    q: &DiagonalGaussian,
    p: &DiagonalGaussian,
    alpha: f64,
) -> Result<GeometricMeanParams> {
    q.check_same_dim(p)?;
    check_alpha(alpha)?;
    let (v1, v2) = (q.variance(), p.variance());
    let (mu_prime, sigma_prime_sq) = (0..q.dim())
        .map(|i| geometric_mean_1d(q.mu()[i], v1[i], p.mu()[i], v2[i], alpha))
        .unzip();
    Ok(GeometricMeanParams {
        mu_prime,
        sigma_prime_sq,
    })
}

/// Closed-form geometric Jensen-Shannon divergence.
pub fn jsg_gaussian_closed(q: &DiagonalGaussian, p: &DiagonalGaussian, alpha: f64) -> Result<f64> {
    q.check_same_dim(p)?;
    check_alpha(alpha)?;
    let (v1, v2) = (q.variance(), p.variance());
    Ok((0..q.dim())
        .map(|i| jsg_1d(q.mu()[i], v1[i], p.mu()[i], v2[i], alpha))
        .sum())
}

/// Upper bound `-(1-a) ln a - a ln(1-a)` on JS-A. Infinite at the endpoints,
/// where JS-A degenerates to an unbounded KL.
pub fn jsa_bound(alpha: f64) -> f64 {
    if alpha <= 0.0 || alpha >= 1.0 {
        return f64::INFINITY;
    }
    -(1.0 - alpha) * alpha.ln() - alpha * (1.0 - alpha).ln()
}

// ---------------------------------------------------------------------------
// Monte-Carlo estimators

/// Plain Monte-Carlo estimate of `KL(q || p)` from `n` draws of `q`.
pub fn mc_kl<S, Q, P>(mut q_sampler: S, q_logpdf: Q, p_logpdf: P, n: usize, seed: u64) -> Result<f64>
where
    S: FnMut(&mut Rng) -> Vec<f64>,
    Q: Fn(&[f64]) -> f64,
    P: Fn(&[f64]) -> f64,
{
    if n == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let mut rng = seeded(seed);
    let mut acc = 0.0;
    for i in 0..n {
        let x = q_sampler(&mut rng);
        let term = q_logpdf(&x) - p_logpdf(&x);
        if !term.is_finite() {
            return Err(Error::NonFinite {
                context: "log-density ratio".into(),
                index: i,
            });
        }
        acc += term;
    }
    Ok(acc / n as f64)
}

fn gaussian_sampler(g: &DiagonalGaussian) -> impl FnMut(&mut Rng) -> Vec<f64> + '_ {
    move |rng| g.transform(&standard_normals(rng, g.dim()))
}

fn gaussian_logpdf(g: &DiagonalGaussian) -> impl Fn(&[f64]) -> f64 + '_ {
    move |x| {
        x.iter()
            .zip(g.mu())
            .zip(g.sigma())
            .map(|((&xi, &m), &s)| log_normal_pdf(xi, m, s))
            .sum()
    }
}

/// Monte-Carlo `KL(q || p)` between diagonal Gaussians.
pub fn mc_kl_gaussian(q: &DiagonalGaussian, p: &DiagonalGaussian, n: usize, seed: u64) -> Result<f64> {
    q.check_same_dim(p)?;
    mc_kl(gaussian_sampler(q), gaussian_logpdf(q), gaussian_logpdf(p), n, seed)
}

/// Monte-Carlo estimate of the JS-G divergence whose closed form is
/// [`jsg_gaussian_closed`]: both KL terms are taken against the normalized
/// geometric-mean Gaussian. The `q` and `p` expectations use sub-streams 0
/// and 1 of `seed`.
pub fn jsg_mc(q: &DiagonalGaussian, p: &DiagonalGaussian, alpha: f64, n: usize, seed: u64) -> Result<f64> {
    let g = geometric_mean_params(q, p, alpha)?.to_gaussian()?;
    let first = mc_kl(gaussian_sampler(q), gaussian_logpdf(q), gaussian_logpdf(&g), n, derive_seed(seed, 0))?;
    let second = mc_kl(gaussian_sampler(p), gaussian_logpdf(p), gaussian_logpdf(&g), n, derive_seed(seed, 1))?;
    Ok((1.0 - alpha) * first + alpha * second)
}

/// Monte-Carlo estimate of `(1-a)^2 KL(q || p) + a^2 KL(p || q)`, the
/// divergence part of the sampled JS-G loss. Its expectation exceeds
/// [`jsg_gaussian_closed`] by `-log Z`, the log-normalizer of `q^a p^(1-a)`.
pub fn weighted_kl_mc(q: &DiagonalGaussian, p: &DiagonalGaussian, alpha: f64, n: usize, seed: u64) -> Result<f64> {
    q.check_same_dim(p)?;
    check_alpha(alpha)?;
    let forward = mc_kl(gaussian_sampler(q), gaussian_logpdf(q), gaussian_logpdf(p), n, derive_seed(seed, 0))?;
    let reverse = mc_kl(gaussian_sampler(p), gaussian_logpdf(p), gaussian_logpdf(q), n, derive_seed(seed, 1))?;
    Ok((1.0 - alpha).powi(2) * forward + alpha * alpha * reverse)
}

/// `(1-a)^2 KL(q || p) + a^2 KL(p || q)` in closed form.
pub fn weighted_kl_closed(q: &DiagonalGaussian, p: &DiagonalGaussian, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok((1.0 - alpha).powi(2) * kl_gaussian(q, p)? + alpha * alpha * kl_gaussian(p, q)?)
}

/// JS-A from explicit standard-normal draws: `eps_q[i]` is mapped through `q`
/// and `eps_p[j]` through `p`. The mixture is formed per coordinate.
pub fn jsa_mc_with_noise(
    q: &DiagonalGaussian,
    p: &DiagonalGaussian,
    alpha: f64,
    eps_q: &[Vec<f64>],
    eps_p: &[Vec<f64>],
) -> Result<f64> {
    q.check_same_dim(p)?;
    check_alpha(alpha)?;
    if eps_q.is_empty() || eps_p.is_empty() {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let half = |own: &DiagonalGaussian, other: &DiagonalGaussian, own_weight: f64, draws: &[Vec<f64>]| {
        let mut acc = 0.0;
        for (idx, eps) in draws.iter().enumerate() {
            if eps.len() != own.dim() {
                return Err(Error::invalid("noise dimension does not match gaussian"));
            }
            let mut term = 0.0;
            for (i, &e) in eps.iter().enumerate() {
                let x = own.mu()[i] + own.sigma()[i] * e;
                let lo = log_normal_pdf(x, own.mu()[i], own.sigma()[i]);
                let lt = log_normal_pdf(x, other.mu()[i], other.sigma()[i]);
                term += lo - log_mixture(own_weight, lo, lt);
            }
            if !term.is_finite() {
                return Err(Error::NonFinite {
                    context: "JS-A log-ratio".into(),
                    index: idx,
                });
            }
            acc += term;
        }
        Ok(acc / draws.len() as f64)
    };
    // mixture a q + (1-a) p: q carries weight a, p carries 1-a
    let q_part = half(q, p, alpha, eps_q)?;
    let p_part = half(p, q, 1.0 - alpha, eps_p)?;
    Ok((1.0 - alpha) * q_part + alpha * p_part)
}

/// Monte-Carlo JS-A with `n` draws per expectation.
pub fn jsa_mc(q: &DiagonalGaussian, p: &DiagonalGaussian, alpha: f64, n: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let draw = |stream| {
        let mut rng = seeded(derive_seed(seed, stream));
        (0..n).map(|_| standard_normals(&mut rng, q.dim())).collect::<Vec<_>>()
    };
    jsa_mc_with_noise(q, p, alpha, &draw(0), &draw(1))
}

// ---------------------------------------------------------------------------
// Regularization dominance

/// Smallest skew above which the JS-G loss penalizes more than the KL loss
/// (with unit weight): `2 KL(q||p) / (KL(q||p) + KL(p||q))`.
pub fn alpha_threshold(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<f64> {
    let forward = kl_gaussian(q, p)?;
    let reverse = kl_gaussian(p, q)?;
    let denom = forward + reverse;
    if q == p || denom <= 0.0 {
        return Err(Error::UndefinedThreshold);
    }
    Ok(2.0 * forward / denom)
}

fn check_univariate(g: &DiagonalGaussian) -> Result<()> {
    if g.dim() != 1 {
        return Err(Error::invalid(format!("expected a univariate gaussian, got dimension {}", g.dim())));
    }
    Ok(())
}

/// Whether some `alpha` in `[0, 1]` lets the JS-G divergence term exceed the
/// KL term: holds exactly when the prior variance exceeds the posterior's.
pub fn variance_condition_holds(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<bool> {
    check_univariate(q)?;
    check_univariate(p)?;
    Ok(p.sigma()[0] > q.sigma()[0])
}

/// `ln[exp(g - 1/g) / g^2] + (mu_q - mu_p)^2 / var_q * (1 - 1/g)` with
/// `g = var_p / var_q`; positive iff `KL(p||q) > KL(q||p)`.
pub fn variance_ratio_expression(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<f64> {
    check_univariate(q)?;
    check_univariate(p)?;
    let vq = q.sigma()[0].powi(2);
    let gamma = p.sigma()[0].powi(2) / vq;
    let dm = q.mu()[0] - p.mu()[0];
    Ok(gamma - 1.0 / gamma - 2.0 * gamma.ln() + dm * dm / vq * (1.0 - 1.0 / gamma))
}

/// `lambda [(1-a)^2 KL(q||p) + a^2 KL(p||q)] > KL(q||p)`.
pub fn jsg_dominates_kl(q: &DiagonalGaussian, p: &DiagonalGaussian, alpha: f64, lambda: f64) -> Result<bool> {
    let forward = kl_gaussian(q, p)?;
    Ok(lambda * weighted_kl_closed(q, p, alpha)? > forward)
}
