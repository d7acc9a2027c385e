//! The three divergence-regularized objectives and their exact gradients.
//!
//! Every loss has the form `scale * divergence_term + nll_term`, where
//! `divergence_term = lambda * D(q || P)` and `nll_term` is the Monte-Carlo
//! negative log-likelihood of the batch, summed over examples and averaged
//! over posterior draws `w = mu + softplus(rho) * eps`. `scale` is the
//! minibatch factor (1 / minibatches per epoch).
//!
//! A loss is a deterministic function of the parameters once the noise
//! ([`LossNoise`]) is fixed, which is what the gradient checks rely on.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::divergence::{jsg_1d_grad, kl_1d_grad, log_add_exp, DivergenceConfig};
use crate::error::{Error, Result};
use crate::gaussian::{log_normal_pdf, sigmoid, HALF_LN_2PI};
use crate::network::{log_softmax_at, softmax, BayesianNetwork, NetworkNoise};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Evidence lower bound with the closed-form KL.
    Kl,
    /// Geometric JS divergence in closed form.
    JsgClosed,
    /// Weighted forward/reverse KL estimated by sampling.
    JsgMc,
    /// Mixture JS divergence estimated by sampling.
    JsaMc,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Kl, LossKind::JsgClosed, LossKind::JsgMc, LossKind::JsaMc];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Kl => "kl",
            LossKind::JsgClosed => "jsg_closed",
            LossKind::JsgMc => "jsg_mc",
            LossKind::JsaMc => "jsa_mc",
        }
    }

    /// Whether the divergence needs draws from the prior.
    pub fn samples_prior(self) -> bool {
        matches!(self, LossKind::JsgMc | LossKind::JsaMc)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown loss kind {s:?} (expected kl, jsg_closed, jsg_mc or jsa_mc)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub divergence_term: f64,
    pub nll_term: f64,
    pub total: f64,
    pub minibatch_scale: f64,
}

impl LossBreakdown {
    fn new(divergence_term: f64, nll_term: f64, minibatch_scale: f64) -> Self {
        Self {
            divergence_term,
            nll_term,
            total: minibatch_scale * divergence_term + nll_term,
            minibatch_scale,
        }
    }

    pub const CSV_HEADER: &'static str = "step,divergence_term,nll_term,total";

    pub fn csv_row(&self, step: usize) -> String {
        format!("{step},{},{},{}", self.divergence_term, self.nll_term, self.total)
    }
}

/// Labeled inputs borrowed from a dataset.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub labels: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: &'a [Vec<f64>], labels: &[usize]) -> Self {
        Self {
            inputs: inputs.iter().map(Vec::as_slice).collect(),
            labels: labels.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self, net: &BayesianNetwork) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("batch is empty"));
        }
        if self.inputs.len() != self.labels.len() {
            return Err(Error::invalid("batch inputs and labels differ in length"));
        }
        let classes = net.output_dim();
        for (x, &y) in self.inputs.iter().zip(&self.labels) {
            net.check_input(x)?;
            if y >= classes {
                return Err(Error::invalid(format!("label {y} out of range for {classes} classes")));
            }
        }
        Ok(())
    }
}

/// Fixed noise for one loss evaluation: posterior draws shared by the
/// likelihood and the posterior-side divergence expectation, and
/// standard-normal draws mapped through the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct LossNoise {
    pub posterior: Vec<NetworkNoise>,
    pub prior: Vec<NetworkNoise>,
}

impl LossNoise {
    /// `samples` posterior draws from sub-stream 0 of `seed`; for sampled
    /// divergences, as many prior draws from sub-stream 1.
    pub fn draw(net: &BayesianNetwork, kind: LossKind, samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::invalid("sample count must be >= 1"));
        }
        let mut q_rng = seeded(derive_seed(seed, 0));
        let posterior = (0..samples).map(|_| net.draw_noise(&mut q_rng)).collect();
        let prior = if kind.samples_prior() {
            let mut p_rng = seeded(derive_seed(seed, 1));
            (0..samples).map(|_| net.draw_noise(&mut p_rng)).collect()
        } else {
            Vec::new()
        };
        Ok(Self { posterior, prior })
    }
}

/// `dF/dmu` and `dF/drho` for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrad {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

/// Gradients in the canonical tensor order of [`BayesianNetwork::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<TensorGrad>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.mu.iter().chain(&t.rho))
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }

    /// Flattened as `[mu..., rho...]` per tensor, in tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.mu.iter().chain(&t.rho).copied())
            .collect()
    }
}

fn tensor_name(index: usize) -> String {
    let part = if index.is_multiple_of(2) { "weights" } else { "biases" };
    format!("layer {} {part}", index / 2)
}

fn noise_tensors(noise: &NetworkNoise) -> impl Iterator<Item = &[f64]> {
    noise
        .iter()
        .flat_map(|l| [l.weights.as_slice(), l.biases.as_slice()])
}

/// Evaluates a loss with explicit noise, optionally with its gradient.
pub fn evaluate(
    net: &BayesianNetwork,
    batch: &Batch<'_>,
    kind: LossKind,
    cfg: &DivergenceConfig,
    minibatch_scale: f64,
    noise: &LossNoise,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    cfg.validate()?;
    batch.validate(net)?;
    if !(minibatch_scale > 0.0 && minibatch_scale <= 1.0) {
        return Err(Error::invalid(format!("minibatch scale {minibatch_scale} outside (0, 1]")));
    }
    if noise.posterior.is_empty() {
        return Err(Error::invalid("at least one posterior draw is required"));
    }
    if kind.samples_prior() && noise.prior.is_empty() {
        return Err(Error::invalid(format!("{kind} needs prior draws")));
    }
    for n in noise.posterior.iter().chain(&noise.prior) {
        net.check_noise(n)?;
    }

    let (alpha, lambda) = match kind {
        LossKind::Kl => (0.0, 1.0),
        _ => (cfg.alpha, cfg.lambda),
    };
    let tensors: Vec<_> = net.tensors().collect();
    let sigmas: Vec<Vec<f64>> = tensors.iter().map(|t| t.sigma()).collect();
    // accumulate in (mu, sigma); the softplus chain is applied at the end
    let mut d_mu: Vec<Vec<f64>> = tensors.iter().map(|t| vec![0.0; t.len()]).collect();
    let mut d_sigma = d_mu.clone();

    // Negative log-likelihood over shared posterior draws.
    let n_q = noise.posterior.len() as f64;
    let mut nll = 0.0;
    for draw in &noise.posterior {
        let sampled = net.sample(draw)?;
        let mut dense = sampled.zero_grads();
        for (x, &y) in batch.inputs.iter().zip(&batch.labels) {
            if with_grad {
                let (logits, trace) = sampled.forward_traced(x);
                nll -= log_softmax_at(&logits, y);
                let mut d_out = softmax(&logits);
                d_out[y] -= 1.0;
                sampled.backward(&trace, &d_out, 1.0, &mut dense);
            } else {
                nll -= log_softmax_at(&sampled.forward(x), y);
            }
        }
        if with_grad {
            let dense_tensors = dense.iter().flat_map(|g| [&g.weights, &g.biases]);
            for (t, (g, eps)) in dense_tensors.zip(noise_tensors(draw)).enumerate() {
                for i in 0..g.len() {
                    d_mu[t][i] += g[i] / n_q;
                    d_sigma[t][i] += g[i] * eps[i] / n_q;
                }
            }
        }
    }
    let nll = nll / n_q;

    // Divergence D(q || P), without lambda; gradients scaled afterwards.
    let (pm, ps) = (net.prior.mu, net.prior.sigma);
    let mut div_mu: Vec<Vec<f64>> = tensors.iter().map(|t| vec![0.0; t.len()]).collect();
    let mut div_sigma = div_mu.clone();
    let mut divergence = 0.0;
    match kind {
        LossKind::Kl | LossKind::JsgClosed => {
            for (t, p) in tensors.iter().enumerate() {
                for i in 0..p.len() {
                    let (v, gm, gs) = if kind == LossKind::Kl {
                        kl_1d_grad(p.mu[i], sigmas[t][i], pm, ps)
                    } else {
                        jsg_1d_grad(p.mu[i], sigmas[t][i], pm, ps, alpha)
                    };
                    divergence += v;
                    div_mu[t][i] = gm;
                    div_sigma[t][i] = gs;
                }
            }
        }
        LossKind::JsgMc | LossKind::JsaMc => {
            let vp = ps * ps;
            let n_p = noise.prior.len() as f64;
            let (c_q, c_p) = if kind == LossKind::JsgMc {
                ((1.0 - alpha).powi(2), alpha * alpha)
            } else {
                (1.0 - alpha, alpha)
            };
            let (ln_a, ln_b) = (alpha.ln(), (1.0 - alpha).ln());
            for draw in &noise.posterior {
                for (t, (p, eps)) in tensors.iter().zip(noise_tensors(draw)).enumerate() {
                    for i in 0..p.len() {
                        let (m, s, e) = (p.mu[i], sigmas[t][i], eps[i]);
                        let w = m + s * e;
                        let lq = -HALF_LN_2PI - s.ln() - 0.5 * e * e;
                        let lp = log_normal_pdf(w, pm, ps);
                        let g_p = -(w - pm) / vp;
                        // (1 - r) is the prior's responsibility in the mixture
                        let (value, keep) = if kind == LossKind::JsgMc {
                            (lq - lp, 1.0)
                        } else {
                            let la = log_add_exp(ln_a + lq, ln_b + lp);
                            (lq - la, 1.0 - (ln_a + lq - la).exp())
                        };
                        divergence += c_q * value / n_q;
                        div_mu[t][i] += c_q * keep * (-g_p) / n_q;
                        div_sigma[t][i] += c_q * keep * (-1.0 / s - g_p * e) / n_q;
                    }
                }
            }
            for draw in &noise.prior {
                for (t, (p, xi)) in tensors.iter().zip(noise_tensors(draw)).enumerate() {
                    for i in 0..p.len() {
                        let (m, s) = (p.mu[i], sigmas[t][i]);
                        let w = pm + ps * xi[i];
                        let lp = -HALF_LN_2PI - ps.ln() - 0.5 * xi[i] * xi[i];
                        let lq = log_normal_pdf(w, m, s);
                        let z = (w - m) / s;
                        let dlq_dm = z / s;
                        let dlq_ds = (z * z - 1.0) / s;
                        let (value, weight) = if kind == LossKind::JsgMc {
                            (lp - lq, 1.0)
                        } else {
                            let la = log_add_exp(ln_a + lq, ln_b + lp);
                            (lp - la, (ln_a + lq - la).exp())
                        };
                        divergence += c_p * value / n_p;
                        div_mu[t][i] -= c_p * weight * dlq_dm / n_p;
                        div_sigma[t][i] -= c_p * weight * dlq_ds / n_p;
                    }
                }
            }
        }
    }
    if !divergence.is_finite() {
        return Err(Error::NonFinite {
            context: format!("{kind} divergence"),
            index: 0,
        });
    }
    let breakdown = LossBreakdown::new(lambda * divergence, nll, minibatch_scale);
    if !with_grad {
        return Ok((breakdown, None));
    }

    let coef = lambda * minibatch_scale;
    let mut out = Vec::with_capacity(tensors.len());
    for (t, p) in tensors.iter().enumerate() {
        let mu: Vec<f64> = (0..p.len()).map(|i| d_mu[t][i] + coef * div_mu[t][i]).collect();
        let rho: Vec<f64> = (0..p.len())
            .map(|i| (d_sigma[t][i] + coef * div_sigma[t][i]) * sigmoid(p.rho[i]))
            .collect();
        if mu.iter().chain(&rho).any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { tensor: tensor_name(t) });
        }
        out.push(TensorGrad { mu, rho });
    }
    Ok((breakdown, Some(Gradients { tensors: out })))
}

/// Loss of the given kind with noise drawn from `cfg.seed`.
pub fn loss(
    net: &BayesianNetwork,
    batch: &Batch<'_>,
    kind: LossKind,
    cfg: &DivergenceConfig,
    minibatch_scale: f64,
) -> Result<LossBreakdown> {
    let noise = LossNoise::draw(net, kind, cfg.mc_samples, cfg.seed)?;
    Ok(evaluate(net, batch, kind, cfg, minibatch_scale, &noise, false)?.0)
}

/// Monte-Carlo negative log-likelihood of a batch.
pub fn nll_mc(net: &BayesianNetwork, batch: &Batch<'_>, n_samples: usize, seed: u64) -> Result<f64> {
    let cfg = DivergenceConfig {
        mc_samples: n_samples,
        seed,
        ..DivergenceConfig::default()
    };
    Ok(loss(net, batch, LossKind::Kl, &cfg, 1.0)?.nll_term)
}

/// ELBO: closed-form `KL(q || P)` plus the sampled likelihood. `alpha` and
/// `lambda` in `cfg` are ignored.
pub fn kl_loss(net: &BayesianNetwork, batch: &Batch<'_>, cfg: &DivergenceConfig) -> Result<LossBreakdown> {
    loss(net, batch, LossKind::Kl, cfg, 1.0)
}

pub fn jsg_loss_closed(net: &BayesianNetwork, batch: &Batch<'_>, cfg: &DivergenceConfig) -> Result<LossBreakdown> {
    loss(net, batch, LossKind::JsgClosed, cfg, 1.0)
}

pub fn jsg_loss_mc(net: &BayesianNetwork, batch: &Batch<'_>, cfg: &DivergenceConfig) -> Result<LossBreakdown> {
    loss(net, batch, LossKind::JsgMc, cfg, 1.0)
}

pub fn jsa_loss_mc(net: &BayesianNetwork, batch: &Batch<'_>, cfg: &DivergenceConfig) -> Result<LossBreakdown> {
    loss(net, batch, LossKind::JsaMc, cfg, 1.0)
}
