//! Studies over univariate Gaussian pairs: divergence curves against the
//! posterior mean, Monte-Carlo convergence, and randomized checks of the
//! boundedness and regularization-dominance theorems.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{
    alpha_threshold, jsa_bound, jsa_mc, jsg_dominates_kl, jsg_gaussian_closed, jsg_mc, kl_gaussian,
    variance_condition_holds, variance_ratio_expression,
};
use crate::error::{Error, Result};
use crate::fixtures::quadrature_jsa;
use crate::gaussian::DiagonalGaussian;
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub mu: f64,
    pub kl: f64,
    pub jsg: f64,
    /// `lambda * JS-A`, estimated by sampling.
    pub jsa_scaled: f64,
}

impl CurveRow {
    pub const CSV_HEADER: &'static str = "mu,kl,jsg_closed,lambda_jsa_mc";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.mu, self.kl, self.jsg, self.jsa_scaled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub q_variance: f64,
    pub p_mu: f64,
    pub p_variance: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub mu_grid: Vec<f64>,
    pub mc_samples: usize,
    pub seed: u64,
}

impl CurveSpec {
    /// The posterior/prior pair of the regularization-growth figure.
    pub fn growth_pair(mu_grid: Vec<f64>) -> Self {
        Self {
            q_variance: 0.01,
            p_mu: 0.0,
            p_variance: 0.1,
            alpha: 0.5,
            lambda: 1.0,
            mu_grid,
            mc_samples: 10_000,
            seed: 0,
        }
    }
}

/// Evenly spaced grid with `points` values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        n => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Divergences of `q = N(mu, q_variance)` from the fixed `p` along the grid.
pub fn divergence_curve(spec: &CurveSpec) -> Result<Vec<CurveRow>> {
    let p = DiagonalGaussian::univariate(spec.p_mu, spec.p_variance)?;
    spec.mu_grid
        .iter()
        .enumerate()
        .map(|(i, &mu)| {
            let q = DiagonalGaussian::univariate(mu, spec.q_variance)?;
            Ok(CurveRow {
                mu,
                kl: kl_gaussian(&q, &p)?,
                jsg: jsg_gaussian_closed(&q, &p, spec.alpha)?,
                jsa_scaled: spec.lambda * jsa_mc(&q, &p, spec.alpha, spec.mc_samples, derive_seed(spec.seed, i as u64))?,
            })
        })
        .collect()
}

/// Least-squares `c0 + c1 x + c2 x^2`, returned as `[c0, c1, c2]`.
pub fn quadratic_fit(xs: &[f64], ys: &[f64]) -> Result<[f64; 3]> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::invalid("quadratic fit needs at least three paired points"));
    }
    // normal equations, solved by Cramer's rule
    let mut s = [0.0; 5];
    let mut t = [0.0; 3];
    for (&x, &y) in xs.iter().zip(ys) {
        let mut xp = 1.0;
        for (k, sk) in s.iter_mut().enumerate() {
            *sk += xp;
            if k < 3 {
                t[k] += xp * y;
            }
            xp *= x;
        }
    }
    let m = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
    let det = det3(&m);
    if det.abs() < 1e-12 * s[4].abs().max(1.0) {
        return Err(Error::invalid("grid has fewer than three distinct points"));
    }
    let mut out = [0.0; 3];
    for (col, c) in out.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = t[row];
        }
        *c = det3(&mc) / det;
    }
    Ok(out)
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub closed_form: f64,
    pub mean_estimate: f64,
    /// Mean over seeds of `|estimate - closed_form| / closed_form`.
    pub mean_relative_error: f64,
    /// Standard error of the estimates across seeds.
    pub std_error: f64,
}

impl ConvergenceRow {
    pub const CSV_HEADER: &'static str = "n,closed_form,mean_estimate,mean_relative_error,std_error";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.n, self.closed_form, self.mean_estimate, self.mean_relative_error, self.std_error
        )
    }
}

/// Sampled JS-G against its closed form for each sample count, averaged
/// over seeds `0..seeds` derived from `seed`.
pub fn mc_convergence(
    q: &DiagonalGaussian,
    p: &DiagonalGaussian,
    alpha: f64,
    sample_grid: &[usize],
    seeds: usize,
    seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    if seeds == 0 {
        return Err(Error::invalid("need at least one seed"));
    }
    if sample_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("sample grid must be strictly ascending"));
    }
    let closed = jsg_gaussian_closed(q, p, alpha)?;
    sample_grid
        .iter()
        .map(|&n| {
            let estimates: Vec<f64> = (0..seeds as u64)
                .into_par_iter()
                .map(|s| jsg_mc(q, p, alpha, n, derive_seed(seed, s)))
                .collect::<Result<_>>()?;
            let k = estimates.len() as f64;
            let mean = estimates.iter().sum::<f64>() / k;
            let var = if estimates.len() > 1 {
                estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            let rel = estimates.iter().map(|e| (e - closed).abs() / closed.abs()).sum::<f64>() / k;
            Ok(ConvergenceRow {
                n,
                closed_form: closed,
                mean_estimate: mean,
                mean_relative_error: rel,
                std_error: (var / k).sqrt(),
            })
        })
        .collect()
}

/// One failed check, with the pair that triggered it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub trial: usize,
    /// `(mean, variance)` of the posterior-side Gaussian.
    pub q: (f64, f64),
    pub p: (f64, f64),
    pub alpha: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub checks: usize,
    pub violations: Vec<Violation>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub trials: usize,
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
}

impl TheoremReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for s in &self.suites {
            let status = if s.passed() { "PASS" } else { "FAIL" };
            out.push_str(&format!("{status} {} ({} checks, {} violations)\n", s.name, s.checks, s.violations.len()));
            for v in s.violations.iter().take(5) {
                out.push_str(&format!(
                    "  trial {}: q=N({}, {}) p=N({}, {}){} {}\n",
                    v.trial,
                    v.q.0,
                    v.q.1,
                    v.p.0,
                    v.p.1,
                    v.alpha.map(|a| format!(" alpha={a}")).unwrap_or_default(),
                    v.detail
                ));
            }
        }
        out
    }
}

pub const THEOREM_ALPHAS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
/// Slack allowed on the JS-A bound for quadrature error.
pub const BOUND_SLACK: f64 = 1e-9;

/// Random univariate pair: means in [-3, 3], variances log-uniform in
/// [0.01, 10].
pub fn random_pair(seed: u64) -> Result<(DiagonalGaussian, DiagonalGaussian)> {
    let mut rng = seeded(seed);
    let mut draw = || -> Result<DiagonalGaussian> {
        let mu = rng.random_range(-3.0..3.0);
        let var = 10f64.powf(rng.random_range(-2.0..1.0));
        DiagonalGaussian::univariate(mu, var)
    };
    Ok((draw()?, draw()?))
}

fn moments(g: &DiagonalGaussian) -> (f64, f64) {
    (g.mu()[0], g.sigma()[0].powi(2))
}

/// Randomized checks of the three theorems over `trials` pairs.
/// `inject_bug` negates the variance condition to exercise the failure path.
pub fn verify_theorems(trials: usize, seed: u64, inject_bug: bool) -> Result<TheoremReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let pairs: Vec<_> = (0..trials as u64).map(|t| random_pair(derive_seed(seed, t))).collect::<Result<_>>()?;
    let violation = |trial: usize, q: &DiagonalGaussian, p: &DiagonalGaussian, alpha: Option<f64>, detail: String| Violation {
        trial,
        q: moments(q),
        p: moments(p),
        alpha,
        detail,
    };

    let bounded: Vec<Vec<Violation>> = pairs
        .par_iter()
        .enumerate()
        .map(|(t, (q, p))| {
            let mut out = Vec::new();
            for &a in &THEOREM_ALPHAS {
                let value = quadrature_jsa(q, p, a)?;
                if !(value <= jsa_bound(a) + BOUND_SLACK) {
                    out.push(violation(t, q, p, Some(a), format!("JS-A {value} exceeds bound {}", jsa_bound(a))));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut threshold = Vec::new();
    let mut variance = Vec::new();
    let mut expression = Vec::new();
    for (t, (q, p)) in pairs.iter().enumerate() {
        let thr = alpha_threshold(q, p)?;
        if !(thr >= 0.0) {
            threshold.push(violation(t, q, p, None, format!("threshold {thr} is negative")));
        }
        // just above the threshold the weighted divergence must dominate
        let above = thr + 1e-6 * thr.max(1e-3);
        if above <= 1.0 && !jsg_dominates_kl(q, p, above, 1.0)? {
            threshold.push(violation(t, q, p, Some(above), "no dominance just above the threshold".into()));
        }

        let mut holds = variance_condition_holds(q, p)?;
        if inject_bug {
            holds = !holds;
        }
        if (thr < 1.0) != holds {
            variance.push(violation(t, q, p, None, format!("threshold {thr} but variance condition {holds}")));
        }

        let expr = variance_ratio_expression(q, p)?;
        let reverse_larger = kl_gaussian(p, q)? > kl_gaussian(q, p)?;
        if (expr > 0.0) != reverse_larger {
            expression.push(violation(t, q, p, None, format!("expression {expr} but KL(p||q) > KL(q||p) is {reverse_larger}")));
        }
    }

    Ok(TheoremReport {
        trials,
        seed,
        suites: vec![
            SuiteResult {
                name: "jsa boundedness".into(),
                checks: trials * THEOREM_ALPHAS.len(),
                violations: bounded.into_iter().flatten().collect(),
            },
            SuiteResult {
                name: "dominance threshold".into(),
                checks: trials,
                violations: threshold,
            },
            SuiteResult {
                name: "variance condition".into(),
                checks: trials,
                violations: variance,
            },
            SuiteResult {
                name: "variance ratio expression".into(),
                checks: trials,
                violations: expression,
            },
        ],
    })
}
