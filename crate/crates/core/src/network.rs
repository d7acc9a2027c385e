//! Fully-connected networks whose weights and biases are factorized Gaussians.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{softplus, DiagonalGaussian, VariationalParams};
use crate::rng::{seeded, standard_normals, Rng};

/// Initial posterior scale pre-activation (`softplus(-4) ~ 0.018`).
pub const DEFAULT_INIT_RHO: f64 = -4.0;
/// Standard deviation of the initial posterior means.
pub const DEFAULT_INIT_MU_STD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Prior `N(mu, sigma^2)` applied independently to every scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub mu: f64,
    pub sigma: f64,
}

impl Prior {
    pub fn from_variance(mu: f64, variance: f64) -> Result<Self> {
        let prior = Self {
            mu,
            sigma: variance.sqrt(),
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid(format!(
                "prior N({}, {}^2) must have finite mean and positive sigma",
                self.mu, self.sigma
            )));
        }
        Ok(())
    }

    /// The prior broadcast to `n` coordinates.
    pub fn broadcast(&self, n: usize) -> Result<DiagonalGaussian> {
        DiagonalGaussian::splat(n, self.mu, self.sigma)
    }
}

impl Default for Prior {
    /// `N(0, 0.1)`.
    fn default() -> Self {
        Self {
            mu: 0.0,
            sigma: 0.1f64.sqrt(),
        }
    }
}

/// Dense layer with variational weights (row-major `fan_in x fan_out`: entry
/// `i * fan_out + j` connects input `i` to output `j`) and variational biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalDenseLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: VariationalParams,
    pub biases: VariationalParams,
    pub activation: Activation,
}

impl VariationalDenseLayer {
    pub fn new(
        fan_in: usize,
        fan_out: usize,
        weights: VariationalParams,
        biases: VariationalParams,
        activation: Activation,
    ) -> Result<Self> {
        let layer = Self {
            fan_in,
            fan_out,
            weights,
            biases,
            activation,
        };
        layer.validate()?;
        Ok(layer)
    }

    fn validate(&self) -> Result<()> {
        if self.fan_in == 0 || self.fan_out == 0 {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        if self.weights.len() != self.fan_in * self.fan_out {
            return Err(Error::invalid(format!(
                "layer {}x{} needs {} weights, got {}",
                self.fan_in,
                self.fan_out,
                self.fan_in * self.fan_out,
                self.weights.len()
            )));
        }
        if self.biases.len() != self.fan_out {
            return Err(Error::invalid(format!(
                "layer with {} outputs needs {} biases, got {}",
                self.fan_out,
                self.fan_out,
                self.biases.len()
            )));
        }
        Ok(())
    }

    fn initialized(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut Rng) -> Self {
        let init = |n: usize, rng: &mut Rng| VariationalParams {
            mu: standard_normals(rng, n)
                .into_iter()
                .map(|z| DEFAULT_INIT_MU_STD * z)
                .collect(),
            rho: vec![DEFAULT_INIT_RHO; n],
        };
        let weights = init(fan_in * fan_out, rng);
        let biases = init(fan_out, rng);
        Self {
            fan_in,
            fan_out,
            weights,
            biases,
            activation,
        }
    }
}

/// Standard-normal noise for one layer, shaped like its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNoise {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

pub type NetworkNoise = Vec<LayerNoise>;

/// A concrete draw of one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseWeights {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

/// Per-layer gradient buffers for a concrete network.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// A network with every parameter fixed to one sampled value.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledNetwork {
    pub layers: Vec<DenseWeights>,
}

/// Cached layer inputs and pre-activations from one forward pass.
pub(crate) struct ForwardTrace {
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl SampledNetwork {
    fn layer_forward(layer: &DenseWeights, x: &[f64]) -> Vec<f64> {
        let mut z = layer.biases.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &layer.weights[i * layer.fan_out..(i + 1) * layer.fan_out];
            for (zj, wij) in z.iter_mut().zip(row) {
                *zj += xi * wij;
            }
        }
        z
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    /// Logits for one input. The caller guarantees the input dimension.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        for layer in &self.layers {
            let z = Self::layer_forward(layer, &x);
            x = z.into_iter().map(|v| layer.activation.apply(v)).collect();
        }
        x
    }

    pub(crate) fn forward_traced(&self, input: &[f64]) -> (Vec<f64>, ForwardTrace) {
        let mut trace = ForwardTrace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.to_vec();
        for layer in &self.layers {
            let z = Self::layer_forward(layer, &x);
            let next = z.iter().map(|&v| layer.activation.apply(v)).collect();
            trace.inputs.push(std::mem::replace(&mut x, next));
            trace.pre_activations.push(z);
        }
        (x, trace)
    }

    pub fn zero_grads(&self) -> Vec<DenseGrad> {
        self.layers
            .iter()
            .map(|l| DenseGrad {
                weights: vec![0.0; l.weights.len()],
                biases: vec![0.0; l.biases.len()],
            })
            .collect()
    }

    /// Accumulates `scale * d(output)/d(params)` contracted with `d_out`.
    pub(crate) fn backward(&self, trace: &ForwardTrace, d_out: &[f64], scale: f64, grads: &mut [DenseGrad]) {
        let mut delta = d_out.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            for (d, &z) in delta.iter_mut().zip(&trace.pre_activations[k]) {
                *d *= layer.activation.derivative(z);
            }
            let x = &trace.inputs[k];
            let g = &mut grads[k];
            for (gb, d) in g.biases.iter_mut().zip(&delta) {
                *gb += scale * d;
            }
            let mut d_in = vec![0.0; layer.fan_in];
            for (i, &xi) in x.iter().enumerate() {
                let row = i * layer.fan_out..(i + 1) * layer.fan_out;
                let w_row = &layer.weights[row.clone()];
                let g_row = &mut g.weights[row];
                let mut acc = 0.0;
                for j in 0..layer.fan_out {
                    g_row[j] += scale * xi * delta[j];
                    acc += w_row[j] * delta[j];
                }
                d_in[i] = acc;
            }
            delta = d_in;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log softmax(logits)[class]`.
pub fn log_softmax_at(logits: &[f64], class: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    logits[class] - lse
}

/// Ordered stack of variational dense layers sharing one scalar prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesianNetwork {
    pub layers: Vec<VariationalDenseLayer>,
    pub prior: Prior,
}

impl BayesianNetwork {
    /// ReLU hidden layers and an identity (logit) head with the default
    /// initialization: means `N(0, 0.05^2)`, `rho = -4`.
    pub fn new(sizes: &[usize], prior: Prior, init_seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!(
                "network needs at least two positive layer sizes, got {sizes:?}"
            )));
        }
        prior.validate()?;
        let mut rng = seeded(init_seed);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                VariationalDenseLayer::initialized(w[0], w[1], act, &mut rng)
            })
            .collect();
        Ok(Self { layers, prior })
    }

    pub fn from_layers(layers: Vec<VariationalDenseLayer>, prior: Prior) -> Result<Self> {
        let net = Self { layers, prior };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if self.layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].fan_out != pair[1].fan_in {
                return Err(Error::invalid(format!(
                    "layer {k} emits {} values but layer {} expects {}",
                    pair[0].fan_out,
                    k + 1,
                    pair[1].fan_in
                )));
            }
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].fan_in];
        sizes.extend(self.layers.iter().map(|l| l.fan_out));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    /// Number of scalar stochastic parameters (weights and biases).
    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameter tensors in canonical order (per layer: weights, biases).
    pub fn tensors(&self) -> impl Iterator<Item = &VariationalParams> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.biases])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut VariationalParams> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.biases])
    }

    /// Draws standard-normal noise for every parameter, layer by layer,
    /// weights before biases.
    pub fn draw_noise(&self, rng: &mut Rng) -> NetworkNoise {
        self.layers
            .iter()
            .map(|l| LayerNoise {
                weights: standard_normals(rng, l.weights.len()),
                biases: standard_normals(rng, l.biases.len()),
            })
            .collect()
    }

    pub fn zero_noise(&self) -> NetworkNoise {
        self.layers
            .iter()
            .map(|l| LayerNoise {
                weights: vec![0.0; l.weights.len()],
                biases: vec![0.0; l.biases.len()],
            })
            .collect()
    }

    pub fn check_noise(&self, noise: &[LayerNoise]) -> Result<()> {
        if noise.len() != self.layers.len() {
            return Err(Error::invalid(format!(
                "noise has {} layers, network has {}",
                noise.len(),
                self.layers.len()
            )));
        }
        for (k, (l, n)) in self.layers.iter().zip(noise).enumerate() {
            if n.weights.len() != l.weights.len() || n.biases.len() != l.biases.len() {
                return Err(Error::invalid(format!("noise for layer {k} has the wrong shape")));
            }
        }
        Ok(())
    }

    /// `w = mu + softplus(rho) * eps` for every parameter.
    pub fn sample(&self, noise: &[LayerNoise]) -> Result<SampledNetwork> {
        self.check_noise(noise)?;
        let draw = |p: &VariationalParams, eps: &[f64]| -> Vec<f64> {
            p.mu.iter()
                .zip(&p.rho)
                .zip(eps)
                .map(|((m, &r), e)| m + softplus(r) * e)
                .collect()
        };
        Ok(SampledNetwork {
            layers: self
                .layers
                .iter()
                .zip(noise)
                .map(|(l, n)| DenseWeights {
                    fan_in: l.fan_in,
                    fan_out: l.fan_out,
                    weights: draw(&l.weights, &n.weights),
                    biases: draw(&l.biases, &n.biases),
                    activation: l.activation,
                })
                .collect(),
        })
    }

    pub(crate) fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has {} features, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits of one forward pass with the given weight noise.
    pub fn forward(&self, input: &[f64], noise: &[LayerNoise]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.sample(noise)?.forward(input))
    }

    /// Monte-Carlo predictive class probabilities for a batch of inputs. The
    /// same `n_samples` weight draws are shared across the batch.
    pub fn predictive_batch(&self, inputs: &[Vec<f64>], n_samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if n_samples == 0 {
            return Err(Error::invalid("n_samples must be >= 1"));
        }
        for x in inputs {
            self.check_input(x)?;
        }
        let mut rng = seeded(seed);
        let mut probs = vec![vec![0.0; self.output_dim()]; inputs.len()];
        for _ in 0..n_samples {
            let sampled = self.sample(&self.draw_noise(&mut rng))?;
            for (x, acc) in inputs.iter().zip(probs.iter_mut()) {
                for (a, p) in acc.iter_mut().zip(softmax(&sampled.forward(x))) {
                    *a += p;
                }
            }
        }
        let inv = 1.0 / n_samples as f64;
        for row in &mut probs {
            row.iter_mut().for_each(|p| *p *= inv);
        }
        Ok(probs)
    }

    /// Monte-Carlo predictive class probabilities for one input.
    pub fn predictive(&self, input: &[f64], n_samples: usize, seed: u64) -> Result<Vec<f64>> {
        Ok(self
            .predictive_batch(std::slice::from_ref(&input.to_vec()), n_samples, seed)?
            .remove(0))
    }

    pub fn to_checkpoint(&self, seed_lineage: Vec<u64>) -> Checkpoint {
        Checkpoint {
            layer_sizes: self.sizes(),
            activations: self.layers.iter().map(|l| l.activation).collect(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    weights_mu: l.weights.mu.clone(),
                    weights_rho: l.weights.rho.clone(),
                    bias_mu: l.biases.mu.clone(),
                    bias_rho: l.biases.rho.clone(),
                })
                .collect(),
            prior: self.prior,
            seed_lineage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub weights_mu: Vec<f64>,
    pub weights_rho: Vec<f64>,
    pub bias_mu: Vec<f64>,
    pub bias_rho: Vec<f64>,
}

/// Flat JSON network checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub layers: Vec<LayerRecord>,
    pub prior: Prior,
    /// Seeds that produced this network, outermost first.
    pub seed_lineage: Vec<u64>,
}

impl Checkpoint {
    pub fn into_network(self) -> Result<BayesianNetwork> {
        let n = self.layer_sizes.len();
        if n < 2 || self.layers.len() != n - 1 || self.activations.len() != n - 1 {
            return Err(Error::Schema(format!(
                "checkpoint lists {} sizes, {} layers and {} activations",
                n,
                self.layers.len(),
                self.activations.len()
            )));
        }
        let layers = self
            .layers
            .into_iter()
            .zip(self.activations)
            .enumerate()
            .map(|(k, (rec, act))| {
                VariationalDenseLayer::new(
                    self.layer_sizes[k],
                    self.layer_sizes[k + 1],
                    VariationalParams::new(rec.weights_mu, rec.weights_rho)?,
                    VariationalParams::new(rec.bias_mu, rec.bias_rho)?,
                    act,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        BayesianNetwork::from_layers(layers, self.prior)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_layer(n: usize, rho: f64) -> VariationalDenseLayer {
        let mut mu = vec![0.0; n * n];
        for i in 0..n {
            mu[i * n + i] = 1.0;
        }
        VariationalDenseLayer::new(
            n,
            n,
            VariationalParams::new(mu, vec![rho; n * n]).unwrap(),
            VariationalParams::new(vec![0.0; n], vec![rho; n]).unwrap(),
            Activation::Identity,
        )
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = BayesianNetwork::from_layers(vec![identity_layer(3, -3.0)], Prior::default()).unwrap();
        let out = net.forward(&[0.3, -1.0, 2.5], &net.zero_noise()).unwrap();
        assert_eq!(out, vec![0.3, -1.0, 2.5]);
    }

    #[test]
    fn zero_means_give_zero_logits() {
        let mut net = BayesianNetwork::new(&[2, 4, 3], Prior::default(), 1).unwrap();
        for t in net.tensors_mut() {
            t.mu.iter_mut().for_each(|m| *m = 0.0);
        }
        let out = net.forward(&[0.4, 0.9], &net.zero_noise()).unwrap();
        assert_eq!(out, vec![0.0; 3]);
        let p = net.predictive(&[0.4, 0.9], 1, 0).unwrap();
        // with noise the logits are no longer zero, but probabilities stay normalized
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let net = BayesianNetwork::new(&[2, 3, 2], Prior::default(), 1).unwrap();
        assert!(net.forward(&[1.0], &net.zero_noise()).is_err());
        let mut noise = net.zero_noise();
        noise[1].biases.pop();
        assert!(net.forward(&[1.0, 2.0], &noise).is_err());
        assert!(net.predictive(&[1.0, 2.0], 0, 0).is_err());
        assert!(BayesianNetwork::new(&[2], Prior::default(), 0).is_err());
        let bad = VariationalDenseLayer::new(
            2,
            2,
            VariationalParams::new(vec![0.0; 3], vec![0.0; 3]).unwrap(),
            VariationalParams::new(vec![0.0; 2], vec![0.0; 2]).unwrap(),
            Activation::Relu,
        );
        assert!(bad.is_err());
        let l1 = identity_layer(2, 0.0);
        let l2 = identity_layer(3, 0.0);
        assert!(BayesianNetwork::from_layers(vec![l1, l2], Prior::default()).is_err());
    }

    #[test]
    fn forward_is_linear_in_noise_for_identity_layers() {
        let net = BayesianNetwork::from_layers(
            vec![identity_layer(2, -1.0), identity_layer(2, 0.5)],
            Prior::default(),
        )
        .unwrap();
        // single layer: output affine in eps
        let single = BayesianNetwork::from_layers(vec![identity_layer(2, -1.0)], Prior::default()).unwrap();
        let mut rng = seeded(3);
        let eps = single.draw_noise(&mut rng);
        let doubled: NetworkNoise = eps
            .iter()
            .map(|n| LayerNoise {
                weights: n.weights.iter().map(|e| 2.0 * e).collect(),
                biases: n.biases.iter().map(|e| 2.0 * e).collect(),
            })
            .collect();
        let x = [0.7, -0.2];
        let base = single.forward(&x, &single.zero_noise()).unwrap();
        let one = single.forward(&x, &eps).unwrap();
        let two = single.forward(&x, &doubled).unwrap();
        for i in 0..2 {
            let d1 = one[i] - base[i];
            let d2 = two[i] - base[i];
            assert!((d2 - 2.0 * d1).abs() < 1e-12);
        }
        assert_eq!(net.output_dim(), 2);
    }

    #[test]
    fn predictive_is_a_distribution() {
        let net = BayesianNetwork::new(&[2, 8, 3], Prior::default(), 5).unwrap();
        for seed in 0..5 {
            let p = net.predictive(&[seed as f64 * 0.3, -1.0], 7, seed).unwrap();
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_predictive_is_one_softmax() {
        let net = BayesianNetwork::new(&[2, 4, 2], Prior::default(), 8).unwrap();
        let x = [0.1, -0.6];
        let mut rng = seeded(21);
        let expected = softmax(&net.forward(&x, &net.draw_noise(&mut rng)).unwrap());
        assert_eq!(net.predictive(&x, 1, 21).unwrap(), expected);
    }

    #[test]
    fn predictive_seeds_agree_within_standard_error() {
        let mut net = BayesianNetwork::new(&[2, 6, 2], Prior::default(), 12).unwrap();
        for t in net.tensors_mut() {
            t.rho.iter_mut().for_each(|r| *r = 0.0);
        }
        let x = [0.5, -0.3];
        let n = 1000;
        let a = net.predictive(&x, n, 100).unwrap();
        let b = net.predictive(&x, n, 200).unwrap();
        let p = 0.5 * (a[0] + b[0]);
        // Bernoulli variance bounds the variance of a probability in [0, 1]
        let se = (2.0 * p * (1.0 - p) / n as f64).sqrt();
        assert!(a[0] != b[0]);
        assert!((a[0] - b[0]).abs() < 3.0 * se, "{} vs {} (se {se})", a[0], b[0]);
    }

    #[test]
    fn collapsed_posterior_is_deterministic() {
        let mut net = BayesianNetwork::new(&[2, 5, 2], Prior::default(), 9).unwrap();
        for t in net.tensors_mut() {
            t.rho.iter_mut().for_each(|r| *r = -60.0);
        }
        let x = [0.25, 0.75];
        let det = softmax(&net.forward(&x, &net.zero_noise()).unwrap());
        for n in [1, 10, 50] {
            let p = net.predictive(&x, n, 2).unwrap();
            for (a, b) in p.iter().zip(&det) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn uniform_head_gives_uniform_predictive() {
        let mut net = BayesianNetwork::new(&[3, 2], Prior::default(), 0).unwrap();
        for t in net.tensors_mut() {
            t.mu.iter_mut().for_each(|m| *m = 0.0);
            t.rho.iter_mut().for_each(|r| *r = -80.0);
        }
        let p = net.predictive(&[1.0, 2.0, 3.0], 4, 1).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = BayesianNetwork::new(&[2, 3, 2], Prior::from_variance(0.0, 0.1).unwrap(), 4).unwrap();
        let ck = net.to_checkpoint(vec![4, 17]);
        let text = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back.seed_lineage, vec![4, 17]);
        assert_eq!(back.into_network().unwrap(), net);

        let mut broken = ck.clone();
        broken.layer_sizes = vec![2, 3];
        assert!(broken.into_network().is_err());
    }

    #[test]
    fn softmax_helpers() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        assert!((log_softmax_at(&[0.0, 0.0], 1) + std::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_softmax_at(&[50.0, -50.0], 0).abs() < 1e-40);
    }
}
