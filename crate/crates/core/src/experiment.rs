//! JSON experiment configuration and the end-to-end runner: build the
//! dataset, train, then score the best network on the test split.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    add_noise, load_csv, minmax_normalize, split, synth_clusters, CsvSchema, Dataset, DatasetManifest, NoiseSpec,
    Split, SynthSpec,
};
use crate::divergence::DivergenceConfig;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::metrics::MetricsReport;
use crate::network::{BayesianNetwork, Prior};
use crate::rng::derive_seed;
use crate::train::{train, OptimizerState, SearchOutcome, SearchSpace, TrainConfig, TrainReport, random_search};

// sub-streams of the experiment seed
const DATA_STREAM: u64 = 10;
const NOISE_STREAM: u64 = 11;
const SPLIT_STREAM: u64 = 12;
const INIT_STREAM: u64 = 13;
const TRAIN_STREAM: u64 = 14;
const EVAL_STREAM: u64 = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Gaussian clusters, one per class; class 0 is `bias_ratio` times the
    /// size of each other class.
    Synthetic {
        total: usize,
        centers: Vec<Vec<f64>>,
        spread: f64,
        bias_ratio: f64,
    },
    /// CSV with header `f0,...,fk,label`.
    Csv {
        path: PathBuf,
        #[serde(default)]
        num_classes: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecipe {
    pub source: DataSource,
    /// Min-max scale every feature column to [0, 1] before adding noise.
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub noise_mean: f64,
    /// `[train, validation, test]`.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

fn yes() -> bool {
    true
}

fn default_split() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub schedule: Vec<(usize, f64)>,
    #[serde(default)]
    pub momentum: f64,
}

impl OptimizerConfig {
    pub fn state(&self) -> OptimizerState {
        OptimizerState::sgd(self.learning_rate)
            .with_schedule(self.schedule.clone())
            .with_momentum(self.momentum)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Hidden layer widths; input and output sizes come from the data.
    pub hidden: Vec<usize>,
    #[serde(default = "default_prior_variance")]
    pub prior_variance: f64,
    pub loss: LossKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Posterior draws per training step.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// `null` disables early stopping.
    #[serde(default = "default_patience")]
    pub patience: Option<usize>,
    /// Factor on the divergence term; `null` uses 1 / minibatches per epoch.
    #[serde(default)]
    pub minibatch_scale: Option<f64>,
    /// Posterior draws for the final test predictive.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default = "default_positive")]
    pub positive_class: usize,
    pub dataset: DatasetRecipe,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_prior_variance() -> f64 {
    0.1
}
fn default_alpha() -> f64 {
    0.5
}
fn default_lambda() -> f64 {
    1.0
}
fn default_mc_samples() -> usize {
    1
}
fn default_batch_size() -> usize {
    crate::train::DEFAULT_BATCH_SIZE
}
fn default_patience() -> Option<usize> {
    Some(crate::train::DEFAULT_PATIENCE)
}
fn default_eval_samples() -> usize {
    100
}
fn default_positive() -> usize {
    1
}

impl ExperimentConfig {
    /// Parses and validates; parse errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema(format!("{}: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Schema(format!("{field}: {why}")));
        if self.hidden.contains(&0) {
            return bad("hidden", "layer widths must be >= 1".into());
        }
        if !(self.prior_variance > 0.0 && self.prior_variance.is_finite()) {
            return bad("prior_variance", format!("{} must be > 0", self.prior_variance));
        }
        if let Err(e) = self.divergence().validate() {
            return bad("alpha/lambda/mc_samples", e.to_string());
        }
        if let Err(e) = self.optimizer.state().validate() {
            return bad("optimizer", e.to_string());
        }
        if let Err(e) = self.train_config().validate() {
            return bad("epochs/batch_size/patience", e.to_string());
        }
        if let Some(s) = self.minibatch_scale {
            if !(s > 0.0 && s <= 1.0) {
                return bad("minibatch_scale", format!("{s} outside (0, 1]"));
            }
        }
        if self.eval_samples == 0 {
            return bad("eval_samples", "must be >= 1".into());
        }
        let d = &self.dataset;
        if !(d.noise_sigma >= 0.0 && d.noise_sigma.is_finite()) || !d.noise_mean.is_finite() {
            return bad("dataset.noise_sigma", format!("{} must be >= 0", d.noise_sigma));
        }
        let sum: f64 = d.split.iter().sum();
        if d.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
            return bad("dataset.split", format!("{:?} must be fractions summing to 1", d.split));
        }
        if d.split[0] == 0.0 || d.split[1] == 0.0 {
            return bad("dataset.split", "train and validation fractions must be positive".into());
        }
        match &d.source {
            DataSource::Synthetic { total, centers, bias_ratio, spread } => {
                if *total == 0 {
                    return bad("dataset.source.total", "must be >= 1".into());
                }
                if centers.len() < 2 {
                    return bad("dataset.source.centers", "need at least two classes".into());
                }
                if !(*bias_ratio > 0.0) || !(*spread >= 0.0) {
                    return bad("dataset.source", "bias_ratio must be > 0 and spread >= 0".into());
                }
                if self.positive_class >= centers.len() {
                    return bad("positive_class", format!("{} out of range", self.positive_class));
                }
            }
            DataSource::Csv { path, .. } => {
                if !path.exists() {
                    return bad("dataset.source.path", format!("{} does not exist", path.display()));
                }
            }
        }
        Ok(())
    }

    pub fn divergence(&self) -> DivergenceConfig {
        DivergenceConfig {
            alpha: self.alpha,
            lambda: self.lambda,
            mc_samples: self.mc_samples,
            seed: derive_seed(self.seed, TRAIN_STREAM),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            eval_samples: crate::train::DEFAULT_EVAL_SAMPLES,
            minibatch_scale: self.minibatch_scale,
            seed: derive_seed(self.seed, TRAIN_STREAM),
        }
    }

    pub fn prior(&self) -> Result<Prior> {
        Prior::from_variance(0.0, self.prior_variance)
    }
}

/// Loads or generates the data, normalizes, adds noise and tags splits.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, DatasetManifest)> {
    let recipe = &cfg.dataset;
    let (mut ds, bias_ratio) = match &recipe.source {
        DataSource::Synthetic {
            total,
            centers,
            spread,
            bias_ratio,
        } => {
            let spec = SynthSpec {
                total: *total,
                centers: centers.clone(),
                spread: *spread,
                bias_ratio: *bias_ratio,
                seed: derive_seed(cfg.seed, DATA_STREAM),
            };
            (synth_clusters(&spec)?, Some(*bias_ratio))
        }
        DataSource::Csv { path, num_classes } => (
            load_csv(
                path,
                CsvSchema {
                    num_classes: *num_classes,
                },
            )?,
            None,
        ),
    };
    if cfg.positive_class >= ds.num_classes {
        return Err(Error::Schema(format!(
            "positive_class: {} out of range for {} classes",
            cfg.positive_class, ds.num_classes
        )));
    }
    if recipe.normalize {
        ds.features = minmax_normalize(&ds.features);
    }
    let mut ds = split(&ds, &recipe.split, derive_seed(cfg.seed, SPLIT_STREAM))?;
    let noise = (recipe.noise_sigma > 0.0 || recipe.noise_mean != 0.0).then(|| NoiseSpec {
        mean: recipe.noise_mean,
        sigma: recipe.noise_sigma,
        seed: derive_seed(cfg.seed, NOISE_STREAM),
    });
    if let Some(spec) = &noise {
        ds = add_noise(&ds, spec)?;
    }
    let manifest = DatasetManifest {
        seed: cfg.seed,
        noise,
        bias_ratio,
        split_fractions: recipe.split,
        class_counts: ds.class_counts(),
    };
    Ok((ds, manifest))
}

pub fn build_network(cfg: &ExperimentConfig, ds: &Dataset) -> Result<BayesianNetwork> {
    let mut sizes = vec![ds.num_features()];
    sizes.extend(&cfg.hidden);
    sizes.push(ds.num_classes);
    BayesianNetwork::new(&sizes, cfg.prior()?, derive_seed(cfg.seed, INIT_STREAM))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub manifest: DatasetManifest,
    pub report: TrainReport,
    /// Best-by-validation network scored on the test split; `None` when the
    /// test split is empty.
    pub test: Option<MetricsReport>,
}

/// Predictive metrics of `net` on one split.
pub fn evaluate_split(
    net: &BayesianNetwork,
    ds: &Dataset,
    which: Split,
    samples: usize,
    seed: u64,
    positive: usize,
) -> Result<Option<MetricsReport>> {
    let (xs, ys) = ds.subset(which);
    if xs.is_empty() {
        return Ok(None);
    }
    let probs = net.predictive_batch(&xs, samples, seed)?;
    MetricsReport::compute(&probs, &ys, ds.num_classes, positive).map(Some)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let (ds, manifest) = build_dataset(cfg)?;
    let net = build_network(cfg, &ds)?;
    let report = train(&net, &ds, cfg.loss, &cfg.divergence(), &cfg.optimizer.state(), &cfg.train_config())?;
    let test = if report.diverged() {
        None
    } else {
        evaluate_split(
            &report.best,
            &ds,
            Split::Test,
            cfg.eval_samples,
            derive_seed(cfg.seed, EVAL_STREAM),
            cfg.positive_class,
        )?
    };
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        manifest,
        report,
        test,
    })
}

/// Random search over alpha, lambda and learning rate, scoring each trial
/// by its best validation accuracy.
pub fn search_experiment(cfg: &ExperimentConfig, space: &SearchSpace, seed: u64) -> Result<SearchOutcome> {
    cfg.validate()?;
    let (ds, _) = build_dataset(cfg)?;
    let net = build_network(cfg, &ds)?;
    random_search(space, seed, |trial| {
        let mut trial_cfg = cfg.clone();
        trial_cfg.alpha = trial.alpha;
        trial_cfg.lambda = trial.lambda;
        trial_cfg.optimizer.learning_rate = trial.learning_rate;
        let mut tc = trial_cfg.train_config();
        tc.seed = trial.seed;
        let report = train(&net, &ds, cfg.loss, &trial_cfg.divergence(), &trial_cfg.optimizer.state(), &tc)?;
        if report.diverged() {
            return Err(Error::NonFinite {
                context: "search trial".into(),
                index: trial.index,
            });
        }
        Ok(report.trace.iter().map(|r| r.val_acc).fold(f64::NEG_INFINITY, f64::max))
    })
}

/// Two noisy 16-dimensional Gaussian clusters with the histopathology
/// class imbalance (2520 negatives, 1000 positives), small enough to train
/// in about a second. Features are min-max scaled before the
/// noise is added.
pub fn desk_scale_config(loss: LossKind, noise_sigma: f64, seed: u64) -> ExperimentConfig {
    let dim = 16;
    ExperimentConfig {
        seed,
        hidden: vec![16],
        prior_variance: 0.1,
        loss,
        alpha: 0.5,
        lambda: 1.0,
        mc_samples: 1,
        optimizer: OptimizerConfig {
            learning_rate: 0.01,
            schedule: Vec::new(),
            momentum: 0.0,
        },
        epochs: 60,
        batch_size: 32,
        patience: Some(10),
        minibatch_scale: None,
        eval_samples: 100,
        positive_class: 1,
        dataset: DatasetRecipe {
            source: DataSource::Synthetic {
                total: 3520,
                centers: vec![vec![0.0; dim], vec![1.0; dim]],
                spread: 0.5,
                bias_ratio: crate::data::HISTOPATHOLOGY_BIAS_RATIO,
            },
            normalize: true,
            noise_sigma,
            noise_mean: 0.0,
            split: [0.6, 0.2, 0.2],
        },
        output_dir: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = desk_scale_config(LossKind::Kl, 0.0, 1);
        cfg.epochs = 3;
        cfg.optimizer.learning_rate = 0.05;
        cfg.batch_size = 8;
        cfg.dataset.source = DataSource::Synthetic {
            total: 200,
            centers: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            spread: 0.2,
            bias_ratio: 1.0,
        };
        cfg
    }

    #[test]
    fn config_round_trips() {
        let cfg = small();
        let text = cfg.to_json().unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn config_defaults_and_errors() {
        let minimal = r#"{
            "seed": 3, "hidden": [4], "loss": "kl", "epochs": 2,
            "optimizer": {"learning_rate": 0.01},
            "dataset": {"source": {"kind": "synthetic", "total": 50,
                "centers": [[0.0], [1.0]], "spread": 0.1, "bias_ratio": 1.0}}
        }"#;
        let cfg = ExperimentConfig::from_json(minimal).unwrap();
        assert_eq!(cfg.prior_variance, 0.1);
        assert_eq!(cfg.patience, Some(5));
        assert_eq!(cfg.dataset.split, [0.6, 0.2, 0.2]);

        let bad_type = minimal.replace("\"learning_rate\": 0.01", "\"learning_rate\": \"fast\"");
        let err = ExperimentConfig::from_json(&bad_type).unwrap_err().to_string();
        assert!(err.contains("optimizer.learning_rate"), "{err}");

        let bad_range = minimal.replace("\"epochs\": 2", "\"epochs\": 0");
        assert!(ExperimentConfig::from_json(&bad_range).is_err());

        let missing = minimal.replace(
            r#"{"kind": "synthetic", "total": 50,
                "centers": [[0.0], [1.0]], "spread": 0.1, "bias_ratio": 1.0}"#,
            r#"{"kind": "csv", "path": "/nonexistent/data.csv"}"#,
        );
        let err = ExperimentConfig::from_json(&missing).unwrap_err().to_string();
        assert!(err.contains("dataset.source.path"), "{err}");
    }

    #[test]
    fn runs_end_to_end_deterministically() {
        let cfg = small();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.report.trace.len(), 3);
        assert_eq!(a.report.trace_csv(), b.report.trace_csv());
        assert_eq!(a.test, b.test);
        let acc = a.test.unwrap().accuracy;
        assert!(acc > 0.9, "{acc} {}", a.report.trace_csv());
    }

    #[test]
    fn noise_is_applied_to_every_split() {
        let mut cfg = small();
        let (clean, _) = build_dataset(&cfg).unwrap();
        cfg.dataset.noise_sigma = 0.5;
        let (noisy, manifest) = build_dataset(&cfg).unwrap();
        assert!(manifest.noise.is_some());
        for s in Split::ALL {
            let changed = noisy.indices(s).iter().all(|&i| noisy.features[i] != clean.features[i]);
            assert!(changed, "{s}");
        }
    }

    #[test]
    fn more_eval_samples_steady_accuracy_across_seeds() {
        use crate::gaussian::VariationalParams;
        use crate::network::{Activation, VariationalDenseLayer};
        let mut cfg = small();
        if let DataSource::Synthetic { spread, .. } = &mut cfg.dataset.source {
            *spread = 0.8;
        }
        let (ds, _) = build_dataset(&cfg).unwrap();
        // linear boundary x0 + x1 = 1 with a wide posterior
        let layer = VariationalDenseLayer::new(
            2,
            2,
            VariationalParams::new(vec![-1.0, 1.0, -1.0, 1.0], vec![-1.0; 4]).unwrap(),
            VariationalParams::new(vec![0.5, -0.5], vec![-1.0; 2]).unwrap(),
            Activation::Identity,
        )
        .unwrap();
        let net = BayesianNetwork::from_layers(vec![layer], cfg.prior().unwrap()).unwrap();
        let spread = |samples: usize| {
            let accs: Vec<f64> = (0..20)
                .map(|seed| {
                    let report = evaluate_split(&net, &ds, Split::Test, samples, seed, 1).unwrap().unwrap();
                    assert!(report.accuracy >= 0.0 && report.accuracy <= 1.0);
                    report.accuracy
                })
                .collect();
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len() - 1) as f64
        };
        let (one, hundred) = (spread(1), spread(100));
        assert!(hundred < one, "{hundred} vs {one}");
    }
}
