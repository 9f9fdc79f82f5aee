//! The differentiability functional `φ` and the box-dimension root `s`.
//!
//! Both consume [`RatioMoments`] only, so closed-form and Monte Carlo moments
//! are interchangeable here.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::heightlaw::{Provenance, RatioMoments};
use crate::serde_ext::extended_f64;
use crate::symbolic::Partition;

pub const DEFAULT_TOLERANCE: f64 = 1e-12;
pub const MAX_BISECTION_ITERATIONS: usize = 200;
pub const DEFAULT_CONFIDENCE_LEVEL: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiffClass {
    #[serde(rename = "differentiable-a.e.")]
    Differentiable,
    #[serde(rename = "non-differentiable-a.e.")]
    NonDifferentiable,
    #[serde(rename = "inconclusive-statistical")]
    InconclusiveStatistical,
}

impl DiffClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            DiffClass::Differentiable => "differentiable-a.e.",
            DiffClass::NonDifferentiable => "non-differentiable-a.e.",
            DiffClass::InconclusiveStatistical => "inconclusive-statistical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerdictConfidence {
    Exact,
    Statistical { level: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    #[serde(with = "extended_f64")]
    pub phi: f64,
    pub classification: DiffClass,
    /// Two-sided interval for `φ` when any `E log a_i` is a Monte Carlo estimate.
    pub ci: Option<(f64, f64)>,
    pub std_error: f64,
    pub verdict_confidence: VerdictConfidence,
    /// Indices with `E log a_i = -∞`.
    pub degenerate_indices: Vec<usize>,
}

/// `φ = Σ l_i (E log a_i - log l_i)` with the classification at the
/// default 99% level.
pub fn compute_phi(moments: &RatioMoments, p: &Partition) -> Result<DiffReport> {
    compute_phi_at(moments, p, DEFAULT_CONFIDENCE_LEVEL)
}

pub fn compute_phi_at(moments: &RatioMoments, p: &Partition, level: f64) -> Result<DiffReport> {
    check_shape(moments, p)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level must lie in (0, 1), got {level}")));
    }
    if let Some(i) = moments.mean_log_a.iter().position(|m| m.value.is_nan() || m.value == f64::INFINITY) {
        return Err(Error::Contract(format!("E log a_{i} is missing or invalid")));
    }
    let degenerate = moments.degenerate_indices();
    if !degenerate.is_empty() {
        return Ok(DiffReport {
            phi: f64::NEG_INFINITY,
            classification: DiffClass::Differentiable,
            ci: None,
            std_error: 0.0,
            verdict_confidence: VerdictConfidence::Exact,
            degenerate_indices: degenerate,
        });
    }
    let mut phi = 0.0;
    let mut se = 0.0;
    for (i, l) in p.lengths().iter().enumerate() {
        phi += l * (moments.mean_log_a[i].value - l.ln());
        // The entries share samples, so errors add linearly (a conservative bound).
        se += l * moments.mean_log_a[i].std_error();
    }
    let statistical = moments.mean_log_a.iter().any(|m| matches!(m.provenance, Provenance::MonteCarlo { .. }));
    if !statistical {
        let classification = if phi < 0.0 { DiffClass::Differentiable } else { DiffClass::NonDifferentiable };
        return Ok(DiffReport {
            phi,
            classification,
            ci: None,
            std_error: 0.0,
            verdict_confidence: VerdictConfidence::Exact,
            degenerate_indices: Vec::new(),
        });
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + level / 2.0);
    let ci = (phi - z * se, phi + z * se);
    let classification = if ci.1 < 0.0 {
        DiffClass::Differentiable
    } else if ci.0 >= 0.0 {
        DiffClass::NonDifferentiable
    } else {
        DiffClass::InconclusiveStatistical
    };
    Ok(DiffReport {
        phi,
        classification,
        ci: Some(ci),
        std_error: se,
        verdict_confidence: VerdictConfidence::Statistical { level },
        degenerate_indices: Vec::new(),
    })
}

fn check_shape(moments: &RatioMoments, p: &Partition) -> Result<()> {
    let m = p.m();
    if moments.m() != m || moments.mean_log_a.len() != m || moments.mean_a_sq.len() != m {
        return Err(Error::Contract(format!(
            "moments cover {} indices but the partition has m = {m}",
            moments.m()
        )));
    }
    Ok(())
}

/// `g(s) = Σ E(a_i) l_i^{s-1} - 1`.
pub fn dimension_function(mean_a: &[f64], lengths: &[f64], s: f64) -> f64 {
    mean_a.iter().zip(lengths).map(|(a, l)| a * l.powf(s - 1.0)).sum::<f64>() - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub s: f64,
    pub residual: f64,
    pub bracket: (f64, f64),
    pub iterations: usize,
    /// Interval from re-solving at perturbed moments, when they are Monte Carlo.
    pub ci: Option<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// Root of `g` on `[1, 2]` by bisection.
pub fn solve_dimension(moments: &RatioMoments, p: &Partition, tol: f64) -> Result<DimensionReport> {
    check_shape(moments, p)?;
    let (s, residual, iterations) = solve_root(&moments.mean_a_values(), p.lengths(), tol)?;
    Ok(DimensionReport { s, residual, bracket: (1.0, 2.0), iterations, ci: None, warnings: Vec::new() })
}

/// Bisection on `[1, 2]` for explicit means; returns `(s, |g(s)|, iterations)`.
pub fn solve_root(mean_a: &[f64], lengths: &[f64], tol: f64) -> Result<(f64, f64, usize)> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("solver tolerance must be positive, got {tol}")));
    }
    if mean_a.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::Contract(format!("E a_i must be finite and non-negative, got {mean_a:?}")));
    }
    if mean_a.iter().all(|a| *a == 0.0) {
        return Err(Error::Contract("all E a_i vanish; g has no root".into()));
    }
    let g = |s: f64| dimension_function(mean_a, lengths, s);
    let (g_lo, g_hi) = (g(1.0), g(2.0));
    if g_lo.abs() < tol {
        return Ok((1.0, g_lo.abs(), 0));
    }
    if g_hi.abs() < tol {
        return Ok((2.0, g_hi.abs(), 0));
    }
    if g_lo < 0.0 {
        return Err(Error::Solver(format!(
            "bracket violated: g(1) = {g_lo:.3e} < 0 (sum of E a_i = {} is below 1)",
            g_lo + 1.0
        )));
    }
    if g_hi > 0.0 {
        return Err(Error::Solver(format!(
            "bracket violated: g(2) = {g_hi:.3e} > 0 (sum of E a_i l_i = {} exceeds 1)",
            g_hi + 1.0
        )));
    }
    let (mut lo, mut hi) = (1.0_f64, 2.0_f64);
    let mut best = (1.5, f64::INFINITY);
    for it in 1..=MAX_BISECTION_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let v = g(mid);
        if v.abs() < best.1 {
            best = (mid, v.abs());
        }
        if v == 0.0 || (hi - lo) <= 4.0 * f64::EPSILON {
            return finish(best, it, tol);
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    finish(best, MAX_BISECTION_ITERATIONS, tol)
}

fn finish(best: (f64, f64), iterations: usize, tol: f64) -> Result<(f64, f64, usize)> {
    if best.1 < tol {
        Ok((best.0, best.1, iterations))
    } else {
        Err(Error::Solver(format!(
            "bisection stopped at s = {} with |g| = {:.3e} above tolerance {tol:.1e}",
            best.0, best.1
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub s: f64,
    /// `None` when the perturbed moments break the bracket at that end.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub k: f64,
    pub warnings: Vec<String>,
}

impl SensitivityReport {
    /// The interval, with a broken end replaced by the bracket edge.
    pub fn interval(&self) -> (f64, f64) {
        (self.lower.unwrap_or(1.0), self.upper.unwrap_or(2.0))
    }

    pub fn is_one_sided(&self) -> bool {
        self.lower.is_none() || self.upper.is_none()
    }
}

/// Re-solves at `E a_i ∓ k·se_i`. `s` is increasing in every `E a_i`, so the
/// two extreme perturbations bound `s`.
pub fn dimension_sensitivity(moments: &RatioMoments, p: &Partition, k: f64, tol: f64) -> Result<SensitivityReport> {
    let base = solve_dimension(moments, p, tol)?;
    let perturbed = |sign: f64| -> Vec<f64> {
        moments
            .mean_a
            .iter()
            .map(|m| (m.value + sign * k * m.std_error()).clamp(0.0, 1.0))
            .collect()
    };
    let mut warnings = Vec::new();
    let mut end = |sign: f64, label: &str| match solve_root(&perturbed(sign), p.lengths(), tol) {
        Ok((s, _, _)) => Some(s),
        Err(e) => {
            warnings.push(format!("{label} end of the sensitivity interval is unbounded: {e}"));
            None
        }
    };
    let lower = end(-1.0, "lower");
    let upper = end(1.0, "upper");
    Ok(SensitivityReport { s: base.s, lower, upper, k, warnings })
}

/// `p_k = E(a_k) l_k^{s-1}`; a probability vector at the root.
pub fn p_weights(moments: &RatioMoments, p: &Partition, s: f64) -> Vec<f64> {
    moments.mean_a.iter().zip(p.lengths()).map(|(a, l)| a.value * l.powf(s - 1.0)).collect()
}

/// `α = Σ E(a_i²) l_i^{2(s-1)}`.
pub fn alpha(moments: &RatioMoments, p: &Partition, s: f64) -> f64 {
    moments.mean_a_sq.iter().zip(p.lengths()).map(|(a2, l)| a2.value * l.powf(2.0 * (s - 1.0))).sum()
}

/// `C = E[(Σ a_i l_i^{s-1})²]`.
pub fn second_moment_constant(moments: &RatioMoments, p: &Partition, s: f64) -> f64 {
    let w: Vec<f64> = p.lengths().iter().map(|l| l.powf(s - 1.0)).collect();
    let mut c = 0.0;
    for i in 0..w.len() {
        for j in 0..w.len() {
            c += moments.cross_value(i, j) * w[i] * w[j];
        }
    }
    c
}
