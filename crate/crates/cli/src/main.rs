//! `jsbnn` command-line interface.
//!
//! Exit codes: 0 success, 1 file error, 2 configuration or input error,
//! 3 numeric abort (training diverged), 4 theorem verification failure.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use jsbnn::analysis::{divergence_curve, linspace, mc_convergence, verify_theorems, ConvergenceRow, CurveRow, CurveSpec};
use jsbnn::data::{load_csv, CsvSchema, Split};
use jsbnn::experiment::{build_dataset, run_experiment, search_experiment, ExperimentConfig};
use jsbnn::gaussian::DiagonalGaussian;
use jsbnn::loss::LossKind;
use jsbnn::metrics::{roc_curve, write_roc_csv, MetricsReport};
use jsbnn::network::Checkpoint;
use jsbnn::train::{SearchSpace, StopReason, TraceRow};

use crate::output::{config_hash, csv, provenance, write_text};

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(1, format!("{}: {e}", path.display()))
    }
}

impl From<jsbnn::Error> for Failure {
    fn from(e: jsbnn::Error) -> Self {
        use jsbnn::Error as E;
        let code = match &e {
            E::Io { .. } => 1,
            E::NonFinite { .. } | E::NonFiniteGradient { .. } | E::AllTrialsFailed(_) => 3,
            _ => 2,
        };
        Self::new(code, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::new(2, e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "jsbnn", version, about = "Train and analyse Bayesian networks regularized by KL or Jensen-Shannon divergences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network from a JSON experiment config.
    ///
    /// Writes into the output directory:
    ///   trace.csv        epoch,train_acc,val_acc,divergence_term,nll_term,total,lr
    ///   checkpoint.json  best-by-validation network (last finite state on divergence)
    ///   config.json      the resolved config
    ///   metrics.json     test-split metrics of the checkpoint
    ///   dataset.json     dataset manifest
    #[command(verbatim_doc_comment)]
    Train(TrainArgs),
    /// Score a checkpoint on a CSV dataset or on the test split of a config.
    ///
    /// Prints the metrics report as JSON. With --roc, writes
    ///   threshold,fpr,tpr
    #[command(verbatim_doc_comment)]
    Eval(EvalArgs),
    /// Divergences of q = N(mu, q_var) from p along a grid of means.
    ///
    /// CSV columns: mu,kl,jsg_closed,lambda_jsa_mc
    #[command(verbatim_doc_comment)]
    DivergenceCurve(CurveArgs),
    /// Sampled JS-G against its closed form for increasing sample counts.
    ///
    /// CSV columns: n,closed_form,mean_estimate,mean_relative_error,std_error
    #[command(verbatim_doc_comment)]
    McConvergence(ConvergenceArgs),
    /// Randomized checks of JS-A boundedness and JS-G dominance.
    ///
    /// Exits with code 4 if any check fails.
    #[command(verbatim_doc_comment)]
    VerifyTheorems(TheoremArgs),
    /// Seeded random search over alpha, lambda and learning rate.
    ///
    /// Prints the search outcome as JSON; best trial by validation accuracy.
    #[command(verbatim_doc_comment)]
    Search(SearchArgs),
}

#[derive(Args, Serialize)]
struct Overrides {
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Noise standard deviation added to every feature.
    #[arg(long)]
    noise: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig, seed: u64) -> Result<(), Failure> {
        cfg.seed = seed;
        if let Some(v) = self.loss {
            cfg.loss = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.lr {
            cfg.optimizer.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.noise {
            cfg.dataset.noise_sigma = v;
        }
        cfg.validate().map_err(Failure::from)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Experiment seed; overrides the config's.
    #[arg(long)]
    seed: u64,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV with header f0,...,fk,label.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    data: Option<PathBuf>,
    /// Experiment config whose test split is scored; use the config.json
    /// written by `train` so the seed matches.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    positive_class: usize,
    #[arg(long)]
    roc: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CurveArgs {
    #[arg(long, default_value_t = 0.01)]
    q_var: f64,
    #[arg(long, default_value_t = 0.0)]
    p_mu: f64,
    #[arg(long, default_value_t = 0.1)]
    p_var: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    mu_min: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    mu_max: f64,
    #[arg(long, default_value_t = 201)]
    points: usize,
    /// Samples per JS-A estimate.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ConvergenceArgs {
    #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
    q_mu: f64,
    #[arg(long, default_value_t = 1.0)]
    q_var: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    p_mu: f64,
    #[arg(long, default_value_t = 1.0)]
    p_var: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Ascending sample counts.
    #[arg(long, value_delimiter = ',', default_value = "10,50,100,300,600,1000,10000")]
    grid: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TheoremArgs {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Negate the variance condition to check that failures are reported.
    #[arg(long)]
    inject_bug: bool,
    /// Also write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0.0)]
    alpha_min: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha_max: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.005,0.01")]
    lrs: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn train_cmd(args: &TrainArgs) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    args.overrides.apply(&mut cfg, args.seed)?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Failure::new(2, "no output directory: pass --out or set output_dir"))?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Failure::io(&out_dir, e))?;

    let outcome = run_experiment(&cfg)?;
    let report = &outcome.report;
    let header = provenance("train", cfg.seed, &cfg);
    let trace = csv(TraceRow::CSV_HEADER, report.trace.iter().map(TraceRow::csv_row));
    write_text(Some(&out_dir.join("trace.csv")), &format!("{header}{trace}"))?;
    write_text(Some(&out_dir.join("config.json")), &cfg.to_json()?)?;
    write_text(Some(&out_dir.join("dataset.json")), &serde_json::to_string_pretty(&outcome.manifest)?)?;

    let lineage = vec![cfg.seed];
    if let StopReason::Diverged { epoch, step, error } = &report.stop {
        report.last_good_checkpoint(lineage).save(&out_dir.join("checkpoint.json"))?;
        return Err(Failure::new(
            3,
            format!("training diverged at epoch {epoch}, step {step}: {error}; last finite state saved"),
        ));
    }
    report.best.to_checkpoint(lineage).save(&out_dir.join("checkpoint.json"))?;
    if let Some(m) = &outcome.test {
        write_text(Some(&out_dir.join("metrics.json")), &m.to_json()?)?;
    }
    eprintln!(
        "trained {} epochs ({:?}); best validation accuracy at epoch {}; config {}",
        report.trace.len(),
        report.stop,
        report.best_epoch,
        &config_hash(&cfg)[..12]
    );
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<(), Failure> {
    let net = Checkpoint::load(&args.checkpoint)?.into_network()?;
    let (xs, ys, classes) = match (&args.data, &args.config) {
        (Some(path), _) => {
            let ds = load_csv(path, CsvSchema::default())?;
            (ds.features, ds.labels, ds.num_classes)
        }
        (None, Some(path)) => {
            let cfg = ExperimentConfig::load(path)?;
            let (ds, _) = build_dataset(&cfg)?;
            let (xs, ys) = ds.subset(Split::Test);
            (xs, ys, ds.num_classes)
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let classes = classes.max(net.output_dim());
    if xs.first().map(Vec::len) != Some(net.input_dim()) {
        return Err(Failure::new(
            2,
            format!("dataset has {} features, network expects {}", xs.first().map_or(0, Vec::len), net.input_dim()),
        ));
    }
    if args.positive_class >= classes {
        return Err(Failure::new(2, format!("positive class {} out of range", args.positive_class)));
    }
    let probs = net.predictive_batch(&xs, args.samples, args.seed)?;
    let report = MetricsReport::compute(&probs, &ys, classes, args.positive_class)?;
    if let Some(path) = &args.roc {
        let scores: Vec<f64> = probs.iter().map(|p| p[args.positive_class]).collect();
        let truth: Vec<bool> = ys.iter().map(|&y| y == args.positive_class).collect();
        write_roc_csv(&roc_curve(&scores, &truth)?, path)?;
    }
    write_text(args.out.as_deref(), &format!("{}\n", report.to_json()?))
}

fn curve_cmd(args: &CurveArgs) -> Result<(), Failure> {
    let spec = CurveSpec {
        q_variance: args.q_var,
        p_mu: args.p_mu,
        p_variance: args.p_var,
        alpha: args.alpha,
        lambda: args.lambda,
        mu_grid: linspace(args.mu_min, args.mu_max, args.points),
        mc_samples: args.samples,
        seed: args.seed,
    };
    let rows = divergence_curve(&spec)?;
    let text = csv(CurveRow::CSV_HEADER, rows.iter().map(CurveRow::csv_row));
    write_text(args.out.as_deref(), &format!("{}{text}", provenance("divergence-curve", args.seed, args)))
}

fn convergence_cmd(args: &ConvergenceArgs) -> Result<(), Failure> {
    let q = DiagonalGaussian::univariate(args.q_mu, args.q_var)?;
    let p = DiagonalGaussian::univariate(args.p_mu, args.p_var)?;
    let rows = mc_convergence(&q, &p, args.alpha, &args.grid, args.seeds, args.seed)?;
    let text = csv(ConvergenceRow::CSV_HEADER, rows.iter().map(ConvergenceRow::csv_row));
    write_text(args.out.as_deref(), &format!("{}{text}", provenance("mc-convergence", args.seed, args)))
}

fn theorems_cmd(args: &TheoremArgs) -> Result<(), Failure> {
    let report = verify_theorems(args.trials, args.seed, args.inject_bug)?;
    print!("{}", report.summary());
    if let Some(path) = &args.json {
        write_text(Some(path), &serde_json::to_string_pretty(&report)?)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::new(4, "theorem verification failed"))
    }
}

fn search_cmd(args: &SearchArgs) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.seed = args.seed;
    let space = SearchSpace {
        alpha_range: (args.alpha_min, args.alpha_max),
        lambda_choices: args.lambdas.clone(),
        lr_choices: args.lrs.clone(),
        trials: args.trials,
    };
    let outcome = search_experiment(&cfg, &space, args.seed)?;
    write_text(args.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&outcome)?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::DivergenceCurve(a) => curve_cmd(a),
        Command::McConvergence(a) => convergence_cmd(a),
        Command::VerifyTheorems(a) => theorems_cmd(a),
        Command::Search(a) => search_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
