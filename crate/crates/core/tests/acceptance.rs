//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Tolerances are fixed here, not tuned per run.

use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;

use jsbnn::analysis::{divergence_curve, linspace, mc_convergence, quadratic_fit, verify_theorems, CurveSpec};
use jsbnn::divergence::{jsg_gaussian_closed, kl_gaussian, DivergenceConfig};
use jsbnn::experiment::{desk_scale_config, run_experiment};
use jsbnn::fixtures::finite_diff;
use jsbnn::gaussian::DiagonalGaussian;
use jsbnn::loss::{evaluate, jsa_loss_mc, jsg_loss_closed, jsg_loss_mc, kl_loss, Batch, LossKind, LossNoise};
use jsbnn::metrics::roc_auc;
use jsbnn::network::{BayesianNetwork, Prior};
use jsbnn::rng::seeded;
use jsbnn::train::{flatten_params, set_flat_params};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn random_net(rng: &mut impl Rng, seed: u64) -> BayesianNetwork {
    let hidden = rng.random_range(2..6);
    let prior = Prior::from_variance(rng.random_range(-0.2..0.2), 10f64.powf(rng.random_range(-2.0..0.5))).unwrap();
    let mut net = BayesianNetwork::new(&[3, hidden, 2], prior, seed).unwrap();
    for t in net.tensors_mut() {
        for (m, r) in t.mu.iter_mut().zip(t.rho.iter_mut()) {
            *m = rng.random_range(-1.0..1.0);
            *r = rng.random_range(-4.0..0.5);
        }
    }
    net
}

fn random_batch(rng: &mut impl Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = rng.random_range(1..8);
    let xs = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ys = (0..n).map(|_| rng.random_range(0..2)).collect();
    (xs, ys)
}

/// Two-sided tail `P(|T| > 3)` of Student's t with 19 degrees of freedom.
const T19_TAIL_AT_3: f64 = 0.00734;

fn elbo_recovery() -> Outcome {
    let mut rng = seeded(101);
    let mut worst_closed = 0.0f64;
    let mut z_scores = Vec::new();
    for k in 0..100u64 {
        let net = random_net(&mut rng, k);
        let (xs, ys) = random_batch(&mut rng);
        let batch = Batch::new(&xs, &ys);
        let cfg = DivergenceConfig::new(0.0, 1.0, 1, k).unwrap();
        let kl = kl_loss(&net, &batch, &cfg).unwrap().total;
        worst_closed = worst_closed.max(rel(jsg_loss_closed(&net, &batch, &cfg).unwrap().total, kl));

        // the nll draw is shared, so the gap is pure divergence sampling noise
        for sampled in [jsg_loss_mc, jsa_loss_mc] {
            let diffs: Vec<f64> = (0..20u64)
                .map(|s| {
                    let c = DivergenceConfig { seed: 1000 * k + s, ..cfg };
                    sampled(&net, &batch, &c).unwrap().total - kl_loss(&net, &batch, &c).unwrap().total
                })
                .collect();
            let n = diffs.len() as f64;
            let mean = diffs.iter().sum::<f64>() / n;
            let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            z_scores.push(mean / (sd / n.sqrt()));
        }
    }
    let worst_z = z_scores.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    let over = z_scores.iter().filter(|z| z.abs() > 3.0).count();
    let mean_z = z_scores.iter().sum::<f64>() / z_scores.len() as f64;
    outcome(
        worst_closed <= 1e-12 && worst_z <= 3.0,
        format!(
            "closed-form max rel diff {worst_closed:.1e} (<= 1e-12); sampled max |mean gap| / SE {worst_z:.2} (<= 3), \
             {over} of {} comparisons above 3 SE ({:.1} expected for unbiased estimators), mean t {mean_z:.3}",
            z_scores.len(),
            T19_TAIL_AT_3 * z_scores.len() as f64
        ),
    )
}

fn closed_form_jsg() -> Outcome {
    let q = DiagonalGaussian::univariate(5.0, 1.0).unwrap();
    let p = DiagonalGaussian::univariate(0.0, 1.0).unwrap();
    let mid = jsg_gaussian_closed(&q, &p, 0.5).unwrap();
    let mut worst = (mid - 3.125).abs();
    let mut rng = seeded(2);
    for _ in 0..100 {
        let q = DiagonalGaussian::univariate(rng.random_range(-3.0..3.0), rng.random_range(0.05..5.0)).unwrap();
        let p = DiagonalGaussian::univariate(rng.random_range(-3.0..3.0), rng.random_range(0.05..5.0)).unwrap();
        worst = worst.max(rel(jsg_gaussian_closed(&q, &p, 0.0).unwrap(), kl_gaussian(&q, &p).unwrap()));
        worst = worst.max(rel(jsg_gaussian_closed(&q, &p, 1.0).unwrap(), kl_gaussian(&p, &q).unwrap()));
    }
    outcome(worst <= 1e-12, format!("JS-G(N(5,1), N(0,1), 0.5) = {mid}; worst limit error {worst:.1e} (<= 1e-12)"))
}

fn mc_convergence_criterion() -> Outcome {
    let q = DiagonalGaussian::univariate(5.0, 1.0).unwrap();
    let p = DiagonalGaussian::univariate(0.0, 1.0).unwrap();
    let grid = [10, 50, 100, 300, 600, 1000, 10_000];
    let rows = mc_convergence(&q, &p, 0.5, &grid, 20, 0).unwrap();
    let at600 = rows.iter().find(|r| r.n == 600).unwrap().mean_relative_error;
    let monotone = rows.windows(2).all(|w| w[1].mean_relative_error < w[0].mean_relative_error);
    let errs: Vec<String> = rows.iter().map(|r| format!("{}:{:.4}", r.n, r.mean_relative_error)).collect();
    outcome(
        at600 <= 0.05 && monotone,
        format!("error at n=600 {at600:.4} (<= 0.05), monotone {monotone} [{}]", errs.join(" ")),
    )
}

fn suite_line(name: &str, trials: usize, seed: u64) -> Outcome {
    let report = verify_theorems(trials, seed, false).unwrap();
    let picked: Vec<_> = report
        .suites
        .iter()
        .filter(|s| match name {
            "bound" => s.name == "jsa boundedness",
            _ => s.name != "jsa boundedness",
        })
        .collect();
    let violations: usize = picked.iter().map(|s| s.violations.len()).sum();
    let checks: usize = picked.iter().map(|s| s.checks).sum();
    outcome(violations == 0, format!("{violations} violations in {checks} checks"))
}

fn growth_criterion() -> Outcome {
    let spec = CurveSpec {
        mc_samples: 2000,
        ..CurveSpec::growth_pair(linspace(-1.0, 1.0, 201))
    };
    let rows = divergence_curve(&spec).unwrap();
    let mus: Vec<f64> = rows.iter().map(|r| r.mu).collect();
    let kl = quadratic_fit(&mus, &rows.iter().map(|r| r.kl).collect::<Vec<_>>()).unwrap()[2];
    let jsg = quadratic_fit(&mus, &rows.iter().map(|r| r.jsg).collect::<Vec<_>>()).unwrap()[2];
    let pointwise = rows.iter().filter(|r| r.mu.abs() >= 0.2 - 1e-12).all(|r| r.jsg >= r.kl);
    outcome(
        rel(jsg, 11.477) <= 0.01 && rel(kl, 5.0) <= 0.01 && jsg > kl && pointwise,
        format!("JS-G coefficient {jsg:.4} (11.477 +-1%), KL {kl:.4} (5.0 +-1%), JS-G >= KL for |mu| >= 0.2: {pointwise}"),
    )
}

fn gradient_criterion() -> Outcome {
    let mut net = BayesianNetwork::new(&[2, 3, 2], Prior::from_variance(0.0, 0.5).unwrap(), 1).unwrap();
    for (k, t) in net.tensors_mut().enumerate() {
        for (i, (m, r)) in t.mu.iter_mut().zip(t.rho.iter_mut()).enumerate() {
            *m = 0.4 * ((3 * i + k) as f64).sin();
            *r = -1.5 + 0.3 * ((i * k) as f64).cos();
        }
    }
    let xs = vec![vec![0.7, -0.2], vec![-0.4, 0.6], vec![0.1, 0.9]];
    let batch = Batch::new(&xs, &[1, 0, 1]);
    let cfg = DivergenceConfig::new(0.4, 0.8, 4, 77).unwrap();
    let mut parts = Vec::new();
    let mut all = true;
    for kind in LossKind::ALL {
        let noise = LossNoise::draw(&net, kind, cfg.mc_samples, cfg.seed).unwrap();
        let analytic = evaluate(&net, &batch, kind, &cfg, 0.25, &noise, true).unwrap().1.unwrap().flatten();
        let mut probe = net.clone();
        let numeric = finite_diff(
            |theta| {
                set_flat_params(&mut probe, theta).unwrap();
                evaluate(&probe, &batch, kind, &cfg, 0.25, &noise, false).unwrap().0.total
            },
            &flatten_params(&net),
            1e-5,
        );
        // relative error, floored so that near-zero components compare absolutely
        let worst = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-3))
            .fold(0.0, f64::max);
        all &= worst < 1e-6;
        parts.push(format!("{kind} {worst:.1e}"));
    }
    outcome(all, format!("max relative error (< 1e-6): {}", parts.join(", ")))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn desk_scale_criterion() -> Outcome {
    let losses = [LossKind::Kl, LossKind::JsgClosed, LossKind::JsaMc];
    let mut pass = true;
    let mut parts = Vec::new();
    for (level, noise) in [0.3, 0.6, 0.9].into_iter().enumerate() {
        let mut acc = Vec::new();
        let mut fns = Vec::new();
        for kind in losses {
            let (mut a, mut f) = (Vec::new(), Vec::new());
            for seed in 0..5 {
                let out = run_experiment(&desk_scale_config(kind, noise, seed)).unwrap();
                match out.test {
                    Some(m) => {
                        a.push(m.accuracy);
                        f.push(m.false_negatives as f64);
                    }
                    None => {
                        a.push(0.0);
                        f.push(f64::INFINITY);
                    }
                }
            }
            acc.push(median(a));
            fns.push(median(f));
        }
        if level >= 1 {
            pass &= acc[1] >= acc[0] && acc[2] >= acc[0];
        }
        pass &= fns[1] <= fns[0] && fns[2] <= fns[0];
        parts.push(format!(
            "sigma {noise}: acc kl {:.3} jsg {:.3} jsa {:.3}, fn kl {} jsg {} jsa {}",
            acc[0], acc[1], acc[2], fns[0], fns[1], fns[2]
        ));
    }
    outcome(pass, parts.join("; "))
}

fn auc_criterion() -> Outcome {
    let mut rng = seeded(9);
    let mut worst = 0.0f64;
    let mut scored = 0;
    for _ in 0..500 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(2..50);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..levels)) / levels as f64).collect();
        let positive: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let Ok(auc) = roc_auc(&scores, &positive) else {
            continue;
        };
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if positive[i] && !positive[j] {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        worst = worst.max((auc - wins / pairs).abs());
        scored += 1;
    }
    outcome(worst <= 1e-12, format!("max |AUC - concordance| {worst:.1e} over {scored} fixtures (<= 1e-12)"))
}

type Criterion = (&'static str, fn() -> Outcome, bool);

fn main() -> ExitCode {
    // the desk-scale comparison is qualitative: printed, never gating
    let criteria: [Criterion; 9] = [
        ("1 elbo recovery", elbo_recovery, true),
        ("2 closed-form js-g", closed_form_jsg, true),
        ("3 mc convergence", mc_convergence_criterion, true),
        ("4 js-a boundedness", || suite_line("bound", 1000, 4), true),
        ("5 dominance theorems", || suite_line("dominance", 1000, 5), true),
        ("6 regularization growth", growth_criterion, true),
        ("7 gradient verification", gradient_criterion, true),
        ("8 desk-scale generalization", desk_scale_criterion, false),
        ("9 auc correctness", auc_criterion, true),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run, gating) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        let note = if gating { "" } else { " (reported only)" };
        println!("{status} criterion {name}{note} [{:.1}s]: {}", start.elapsed().as_secs_f64(), o.detail);
        failed += usize::from(!o.pass && gating);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
