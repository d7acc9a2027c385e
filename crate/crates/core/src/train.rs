//! Stochastic gradient training, learning-rate schedules and seeded random
//! hyperparameter search.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::divergence::DivergenceConfig;
use crate::error::{Error, Result};
use crate::loss::{evaluate, Batch, Gradients, LossBreakdown, LossKind, LossNoise, TensorGrad};
use crate::metrics::accuracy;
use crate::network::{BayesianNetwork, Checkpoint};
use crate::rng::{derive_seed, seeded};

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_PATIENCE: usize = 5;
pub const DEFAULT_EVAL_SAMPLES: usize = 10;

// sub-streams of the training seed
const SHUFFLE_STREAM: u64 = 1;
const STEP_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    /// `(epoch, multiplier)`; epochs count from 1.
    pub schedule: Vec<(usize, f64)>,
    pub step_count: usize,
    /// Heavy-ball coefficient; 0 gives plain SGD.
    pub momentum: f64,
    velocity: Option<Vec<TensorGrad>>,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            schedule: Vec::new(),
            step_count: 0,
            momentum: 0.0,
            velocity: None,
        }
    }

    pub fn with_schedule(mut self, schedule: Vec<(usize, f64)>) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn validate(&self) -> Result<()> {
        // a zero rate is allowed so that frozen runs can be traced
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if let Some((e, m)) = self.schedule.iter().find(|(_, m)| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::invalid(format!("schedule multiplier {m} at epoch {e} must be > 0")));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }

    /// Scales the rate by every multiplier scheduled for `epoch`.
    pub fn apply_schedule(&self, epoch: usize) -> OptimizerState {
        let factor: f64 = self
            .schedule
            .iter()
            .filter(|(e, _)| *e == epoch)
            .map(|(_, m)| m)
            .product();
        OptimizerState {
            learning_rate: self.learning_rate * factor,
            ..self.clone()
        }
    }

    /// One update `theta <- theta - lr * v`, where `v` is the gradient or its
    /// momentum average. Nothing is written unless every new value is finite.
    pub fn step(&mut self, net: &mut BayesianNetwork, grads: &Gradients) -> Result<()> {
        let velocity = match (&mut self.velocity, self.momentum) {
            (_, 0.0) => grads.tensors.clone(),
            (Some(v), m) => {
                for (vt, gt) in v.iter_mut().zip(&grads.tensors) {
                    for (a, b) in vt.mu.iter_mut().zip(&gt.mu).chain(vt.rho.iter_mut().zip(&gt.rho)) {
                        *a = m * *a + b;
                    }
                }
                v.clone()
            }
            (None, _) => grads.tensors.clone(),
        };
        let lr = self.learning_rate;
        let updated: Vec<(Vec<f64>, Vec<f64>)> = net
            .tensors()
            .zip(&velocity)
            .map(|(p, v)| {
                let mu = p.mu.iter().zip(&v.mu).map(|(x, g)| x - lr * g).collect();
                let rho = p.rho.iter().zip(&v.rho).map(|(x, g)| x - lr * g).collect();
                (mu, rho)
            })
            .collect();
        for (t, (mu, rho)) in updated.iter().enumerate() {
            if mu.iter().chain(rho).any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    tensor: format!("update of tensor {t}"),
                });
            }
        }
        for (p, (mu, rho)) in net.tensors_mut().zip(updated) {
            p.mu = mu;
            p.rho = rho;
        }
        if self.momentum > 0.0 {
            self.velocity = Some(velocity);
        }
        self.step_count += 1;
        Ok(())
    }
}

/// Loss and exact gradients with noise drawn from `cfg.seed`.
pub fn gradients(
    net: &BayesianNetwork,
    batch: &Batch<'_>,
    kind: LossKind,
    cfg: &DivergenceConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let noise = LossNoise::draw(net, kind, cfg.mc_samples, cfg.seed)?;
    let (breakdown, grads) = evaluate(net, batch, kind, cfg, 1.0, &noise, true)?;
    Ok((breakdown, grads.expect("gradients requested")))
}

/// Parameters flattened in the same order as [`Gradients::flatten`].
pub fn flatten_params(net: &BayesianNetwork) -> Vec<f64> {
    net.tensors().flat_map(|t| t.mu.iter().chain(&t.rho).copied()).collect()
}

pub fn set_flat_params(net: &mut BayesianNetwork, flat: &[f64]) -> Result<()> {
    let total: usize = net.tensors().map(|t| 2 * t.len()).sum();
    if flat.len() != total {
        return Err(Error::invalid(format!("{} values for {total} parameters", flat.len())));
    }
    let mut rest = flat;
    for t in net.tensors_mut() {
        let n = t.len();
        t.mu.copy_from_slice(&rest[..n]);
        t.rho.copy_from_slice(&rest[n..2 * n]);
        rest = &rest[2 * n..];
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without a new best validation accuracy before stopping;
    /// `None` always runs the full budget.
    pub patience: Option<usize>,
    /// Posterior draws for the per-epoch accuracies.
    pub eval_samples: usize,
    /// Factor on the divergence term; `None` uses 1 / minibatches per epoch.
    pub minibatch_scale: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: DEFAULT_BATCH_SIZE,
            patience: Some(DEFAULT_PATIENCE),
            eval_samples: DEFAULT_EVAL_SAMPLES,
            minibatch_scale: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 || self.eval_samples == 0 {
            return Err(Error::invalid("batch size and evaluation samples must be >= 1"));
        }
        if self.patience == Some(0) {
            return Err(Error::invalid("patience must be >= 1"));
        }
        Ok(())
    }
}

/// One row per epoch; loss columns are means over that epoch's steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub divergence_term: f64,
    pub nll_term: f64,
    pub total: f64,
    pub lr: f64,
}

impl TraceRow {
    pub const CSV_HEADER: &'static str = "epoch,train_acc,val_acc,divergence_term,nll_term,total,lr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.train_acc, self.val_acc, self.divergence_term, self.nll_term, self.total, self.lr
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    Completed,
    EarlyStopped { epoch: usize },
    /// A loss, gradient or update went non-finite; the returned network is
    /// the last finite state.
    Diverged { epoch: usize, step: usize, error: String },
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    /// Network at the epoch with the highest validation accuracy (first wins).
    pub best: BayesianNetwork,
    pub best_epoch: usize,
    /// Network after the last completed update.
    pub last: BayesianNetwork,
    pub stop: StopReason,
    pub optimizer: OptimizerState,
}

impl TrainReport {
    pub fn diverged(&self) -> bool {
        matches!(self.stop, StopReason::Diverged { .. })
    }

    pub fn last_good_checkpoint(&self, seed_lineage: Vec<u64>) -> Checkpoint {
        self.last.to_checkpoint(seed_lineage)
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from(TraceRow::CSV_HEADER);
        out.push('\n');
        for row in &self.trace {
            out.push_str(&row.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Predictive accuracy with `samples` shared posterior draws.
pub fn predictive_accuracy(net: &BayesianNetwork, features: &[Vec<f64>], labels: &[usize], samples: usize, seed: u64) -> Result<f64> {
    let probs = net.predictive_batch(features, samples, seed)?;
    accuracy(&probs, labels)
}

/// Minibatch SGD on the train split, tracking accuracy on the validation
/// split after every epoch. `cfg.seed` is ignored: each step draws its loss
/// noise from a seed derived from `train.seed` and the step index.
pub fn train(
    net: &BayesianNetwork,
    dataset: &Dataset,
    kind: LossKind,
    cfg: &DivergenceConfig,
    optimizer: &OptimizerState,
    train_cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    optimizer.validate()?;
    train_cfg.validate()?;
    dataset.validate()?;
    let (train_x, train_y) = dataset.subset(Split::Train);
    let (val_x, val_y) = dataset.subset(Split::Validation);
    if train_x.is_empty() {
        return Err(Error::EmptyDataset("train split is empty".into()));
    }
    if val_x.is_empty() {
        return Err(Error::EmptyDataset("validation split is empty".into()));
    }
    let probe = Batch::new(&train_x[..1], &train_y[..1]);
    probe.validate(net)?;

    let batches = train_x.len().div_ceil(train_cfg.batch_size);
    let scale = train_cfg.minibatch_scale.unwrap_or(1.0 / batches as f64);
    let mut net = net.clone();
    let mut opt = optimizer.clone();
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut trace = Vec::with_capacity(train_cfg.epochs);
    let mut best = (f64::NEG_INFINITY, 0usize, net.clone());
    let mut stop = StopReason::Completed;

    'epochs: for epoch in 1..=train_cfg.epochs {
        opt = opt.apply_schedule(epoch);
        let mut shuffle = seeded(derive_seed(derive_seed(train_cfg.seed, SHUFFLE_STREAM), epoch as u64));
        order.shuffle(&mut shuffle);
        let mut sums = [0.0; 3];
        for chunk in order.chunks(train_cfg.batch_size) {
            let inputs: Vec<&[f64]> = chunk.iter().map(|&i| train_x[i].as_slice()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let batch = Batch { inputs, labels };
            let step = opt.step_count;
            let step_cfg = DivergenceConfig {
                seed: derive_seed(derive_seed(train_cfg.seed, STEP_STREAM), step as u64),
                ..*cfg
            };
            let outcome = LossNoise::draw(&net, kind, step_cfg.mc_samples, step_cfg.seed)
                .and_then(|noise| evaluate(&net, &batch, kind, &step_cfg, scale, &noise, true))
                .and_then(|(b, g)| {
                    if !b.total.is_finite() {
                        return Err(Error::NonFinite {
                            context: "loss".into(),
                            index: step,
                        });
                    }
                    opt.step(&mut net, g.as_ref().expect("gradients requested"))?;
                    Ok(b)
                });
            match outcome {
                Ok(b) => {
                    sums[0] += b.divergence_term;
                    sums[1] += b.nll_term;
                    sums[2] += b.total;
                }
                Err(e @ (Error::NonFinite { .. } | Error::NonFiniteGradient { .. })) => {
                    stop = StopReason::Diverged {
                        epoch,
                        step,
                        error: e.to_string(),
                    };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }

        let eval_seed = derive_seed(derive_seed(train_cfg.seed, EVAL_STREAM), epoch as u64);
        let train_acc = predictive_accuracy(&net, &train_x, &train_y, train_cfg.eval_samples, eval_seed)?;
        let val_acc = predictive_accuracy(&net, &val_x, &val_y, train_cfg.eval_samples, eval_seed)?;
        let n = batches as f64;
        trace.push(TraceRow {
            epoch,
            train_acc,
            val_acc,
            divergence_term: sums[0] / n,
            nll_term: sums[1] / n,
            total: sums[2] / n,
            lr: opt.learning_rate,
        });
        if val_acc > best.0 {
            best = (val_acc, epoch, net.clone());
        }
        if let Some(p) = train_cfg.patience {
            if epoch - best.1 >= p {
                stop = StopReason::EarlyStopped { epoch };
                break;
            }
        }
    }

    let (_, best_epoch, best_net) = best;
    Ok(TrainReport {
        trace,
        best: if best_epoch == 0 { net.clone() } else { best_net },
        best_epoch,
        last: net,
        stop,
        optimizer: opt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub alpha_range: (f64, f64),
    pub lambda_choices: Vec<f64>,
    pub lr_choices: Vec<f64>,
    pub trials: usize,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.alpha_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!("alpha range ({lo}, {hi}) must lie in [0, 1]")));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        if self.lambda_choices.is_empty() || self.lr_choices.is_empty() {
            return Err(Error::invalid("lambda and learning-rate choices must be non-empty"));
        }
        if self.lambda_choices.iter().chain(&self.lr_choices).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("lambda and learning-rate choices must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: Trial,
    /// Validation accuracy; `None` when the trial failed or diverged.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: Trial,
    pub best_score: f64,
    pub results: Vec<TrialResult>,
}

/// Draws `space.trials` configurations from `seed`, scores them in parallel
/// with `objective` and keeps the highest score. Ties go to lower lambda,
/// then lower alpha, then the earlier trial. Failed or non-finite trials
/// are skipped.
pub fn random_search<F>(space: &SearchSpace, seed: u64, objective: F) -> Result<SearchOutcome>
where
    F: Fn(&Trial) -> Result<f64> + Sync,
{
    space.validate()?;
    let mut rng = seeded(seed);
    let (lo, hi) = space.alpha_range;
    let trials: Vec<Trial> = (0..space.trials)
        .map(|index| Trial {
            index,
            alpha: if hi > lo { rng.random_range(lo..=hi) } else { lo },
            lambda: *space.lambda_choices.choose(&mut rng).expect("non-empty"),
            learning_rate: *space.lr_choices.choose(&mut rng).expect("non-empty"),
            seed: derive_seed(seed, index as u64),
        })
        .collect();
    let results: Vec<TrialResult> = trials
        .par_iter()
        .map(|t| TrialResult {
            trial: *t,
            score: objective(t).ok().filter(|s| s.is_finite()),
        })
        .collect();
    let best = results
        .iter()
        .filter_map(|r| r.score.map(|s| (s, &r.trial)))
        .reduce(|a, b| if better(b, a) { b } else { a });
    match best {
        Some((score, trial)) => Ok(SearchOutcome {
            best: *trial,
            best_score: score,
            results,
        }),
        None => Err(Error::AllTrialsFailed(space.trials)),
    }
}

fn better((sa, a): (f64, &Trial), (sb, b): (f64, &Trial)) -> bool {
    if sa != sb {
        return sa > sb;
    }
    if a.lambda != b.lambda {
        return a.lambda < b.lambda;
    }
    if a.alpha != b.alpha {
        return a.alpha < b.alpha;
    }
    a.index < b.index
}
