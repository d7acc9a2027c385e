//! Independent oracles and golden test cases.
//!
//! Nothing here calls into the divergence or loss code it is used to check:
//! densities are re-derived locally and integrals are evaluated by adaptive
//! quadrature.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::DiagonalGaussian;

/// Absolute tolerance for [`quadrature_jsa`].
pub const QUADRATURE_TOL: f64 = 1e-10;
const MAX_DEPTH: u32 = 60;

fn ln_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - sigma.ln() - 0.5 * z * z
}

/// Adaptive Simpson integration of `f` over `[lo, hi]` to absolute `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            return Err(Error::Quadrature { lo: a, hi: b });
        }
        Ok(recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?)
    }

    let (fa, fb, fm) = (f(lo), f(hi), f(0.5 * (lo + hi)));
    let whole = simpson(fa, fm, fb, lo, hi);
    recurse(f, lo, hi, fa, fm, fb, whole, tol, MAX_DEPTH)
}

/// Integrates `f` over the union of `mu +- 10 sigma` windows of the given
/// components, split at every integer-sigma breakpoint so no narrow peak is
/// skipped.
fn integrate_over_supports<F: Fn(f64) -> f64>(f: &F, comps: &[(f64, f64)], tol: f64) -> Result<f64> {
    let mut points: Vec<f64> = comps
        .iter()
        .flat_map(|&(m, s)| (-10..=10).map(move |k| m + k as f64 * s))
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let pieces = (points.len() - 1) as f64;
    let mut total = 0.0;
    for w in points.windows(2) {
        if w[1] > w[0] {
            total += adaptive_simpson(f, w[0], w[1], tol / pieces)?;
        }
    }
    Ok(total)
}

/// JS-A between univariate `q` and `p` by quadrature:
/// `(1-a) KL(q || M) + a KL(p || M)` with `M = a q + (1-a) p`.
/// `alpha = 0` gives `KL(q || p)`.
pub fn quadrature_jsa(q: &DiagonalGaussian, p: &DiagonalGaussian, alpha: f64) -> Result<f64> {
    if q.dim() != 1 || p.dim() != 1 {
        return Err(Error::invalid("quadrature oracle is univariate"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha = {alpha} outside [0, 1]")));
    }
    let (mq, sq, mp, sp) = (q.mu()[0], q.sigma()[0], p.mu()[0], p.sigma()[0]);
    let integrand = |x: f64| {
        let lq = ln_pdf(x, mq, sq);
        let lp = ln_pdf(x, mp, sp);
        let a = alpha * lq.exp();
        let b = (1.0 - alpha) * lp.exp();
        let mix = a + b;
        let lm = if mix > 0.0 {
            mix.ln()
        } else {
            // both densities underflow: recombine in log space
            let (u, v) = (alpha.ln() + lq, (1.0 - alpha).ln() + lp);
            let m = u.max(v);
            m + ((u - m).exp() + (v - m).exp()).ln()
        };
        let mut acc = 0.0;
        if alpha < 1.0 {
            acc += (1.0 - alpha) * lq.exp() * (lq - lm);
        }
        if alpha > 0.0 {
            acc += alpha * lp.exp() * (lp - lm);
        }
        acc
    };
    integrate_over_supports(&integrand, &[(mq, sq), (mp, sp)], QUADRATURE_TOL)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`. `f` must hold
/// any randomness fixed between calls.
pub fn finite_diff<F: FnMut(&[f64]) -> f64>(mut f: F, params: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "step must be positive");
    let mut x = params.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Paper,
    Trivial,
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenCase {
    pub id: String,
    pub inputs: serde_json::Value,
    pub expected: serde_json::Value,
    pub provenance: Provenance,
    /// How the expected value was obtained (or where it is reported).
    pub oracle: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenFile {
    pub version: u32,
    pub cases: Vec<GoldenCase>,
}

impl GoldenFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: GoldenFile = serde_json::from_str(&text)?;
        for case in &file.cases {
            if case.provenance != Provenance::Trivial && case.oracle.trim().is_empty() {
                return Err(Error::Schema(format!("golden case {} does not name its oracle", case.id)));
            }
        }
        Ok(file)
    }

    pub fn case(&self, id: &str) -> Option<&GoldenCase> {
        self.cases.iter().find(|c| c.id == id)
    }
}
