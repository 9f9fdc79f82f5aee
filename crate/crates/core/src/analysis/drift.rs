//! Random walk `S_n = Σ_{k≤n} log(a_{ω|k} / l_{ω_k})` along a path whose
//! digits are drawn with probabilities `l_i`. Its drift is `φ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::mean_se;
use crate::error::{Error, Result};
use crate::heightlaw::HeightLaw;
use crate::realization::{expand, Node};
use crate::rng::{mix64, substream, StreamRng};
use crate::serde_ext::extended_f64;
use crate::symbolic::{Partition, Word};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub paths: usize,
    /// Steps per path.
    pub n: usize,
    pub seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self { paths: 200, n: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftProbe {
    pub paths: usize,
    pub n: usize,
    /// Mean of `S_n / n` over paths.
    #[serde(with = "extended_f64")]
    pub mean_drift: f64,
    pub std_error: f64,
    /// Fraction of steps that took each digit.
    pub digit_frequencies: Vec<f64>,
    pub digit_std_errors: Vec<f64>,
}

/// Digit stream independent of the realization keys.
fn digit_key(seed: u64, path: usize) -> u64 {
    mix64(substream(seed, path as u64) ^ 0x6a09_e667_f3bc_c909)
}

fn pick(cumulative: &[f64], u: f64) -> usize {
    cumulative.iter().position(|c| u < *c).unwrap_or(cumulative.len() - 1)
}

/// Per-path `(S_n, digit counts)`.
fn walk_path(p: &Partition, law: &HeightLaw, seed: u64, n: usize, digits: &mut dyn FnMut(usize) -> usize) -> Result<(f64, Vec<usize>)> {
    let m = p.m();
    let mut node = Node::root(seed);
    let mut y = vec![0.0; m - 1];
    let mut children = vec![node; m];
    let mut sum = 0.0;
    let mut counts = vec![0usize; m];
    for k in 0..n {
        expand(law, &node, &mut y, &mut children)?;
        let i = digits(k);
        counts[i] += 1;
        node = children[i];
        sum += (node.a / p.length(i)).ln();
    }
    Ok((sum, counts))
}

/// Partial sums `S_1..S_n` along a fixed word in the realization of `seed`.
pub fn drift_along(p: &Partition, law: &HeightLaw, seed: u64, word: &Word) -> Result<Vec<f64>> {
    if law.m() != p.m() {
        return Err(Error::Contract("law and partition disagree on m".into()));
    }
    if let Some(d) = word.digits().iter().find(|d| **d as usize >= p.m()) {
        return Err(Error::Domain(format!("digit {d} out of range for m = {}", p.m())));
    }
    let m = p.m();
    let mut node = Node::root(seed);
    let mut y = vec![0.0; m - 1];
    let mut children = vec![node; m];
    let mut sum = 0.0;
    let mut out = Vec::with_capacity(word.len());
    for &d in word.digits() {
        expand(law, &node, &mut y, &mut children)?;
        node = children[d as usize];
        sum += (node.a / p.length(d as usize)).ln();
        out.push(sum);
    }
    Ok(out)
}

/// Estimates the drift of `S_n / n` over `cfg.paths` independent
/// realizations, each followed along its own random path.
pub fn drift_probe(p: &Partition, law: &HeightLaw, cfg: &DriftConfig) -> Result<DriftProbe> {
    if law.m() != p.m() {
        return Err(Error::Contract("law and partition disagree on m".into()));
    }
    if cfg.paths < 2 || cfg.n == 0 {
        return Err(Error::Config("drift probe needs at least two paths and one step".into()));
    }
    let mut cumulative: Vec<f64> = p
        .lengths()
        .iter()
        .scan(0.0, |acc, l| {
            *acc += l;
            Some(*acc)
        })
        .collect();
    *cumulative.last_mut().expect("m ≥ 2") = 1.0;
    let runs: Vec<(f64, Vec<usize>)> = (0..cfg.paths)
        .into_par_iter()
        .map(|t| {
            let mut rng = StreamRng::new(digit_key(cfg.seed, t));
            let mut digits = |_k: usize| pick(&cumulative, rng.uniform());
            walk_path(p, law, substream(cfg.seed, t as u64), cfg.n, &mut digits)
        })
        .collect::<Result<_>>()?;
    let drifts: Vec<f64> = runs.iter().map(|(s, _)| s / cfg.n as f64).collect();
    let (mean_drift, std_error) = if drifts.iter().any(|d| d.is_infinite()) {
        (f64::NEG_INFINITY, 0.0)
    } else {
        mean_se(&drifts)
    };
    let mut digit_frequencies = Vec::with_capacity(p.m());
    let mut digit_std_errors = Vec::with_capacity(p.m());
    for i in 0..p.m() {
        let f: Vec<f64> = runs.iter().map(|(_, c)| c[i] as f64 / cfg.n as f64).collect();
        let (mean, se) = mean_se(&f);
        digit_frequencies.push(mean);
        digit_std_errors.push(se);
    }
    Ok(DriftProbe { paths: cfg.paths, n: cfg.n, mean_drift, std_error, digit_frequencies, digit_std_errors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heightlaw::{moments, McConfig};
    use crate::theory::compute_phi;

    #[test]
    fn deterministic_balanced_word_hits_phi() {
        let p = Partition::uniform(3).unwrap();
        let law = HeightLaw::okamoto(0.4).unwrap();
        let phi = compute_phi(&moments(&law, &p, &McConfig::default()).unwrap(), &p).unwrap().phi;
        let word = Word::new((0..300).map(|k| (k % 3) as u32).collect());
        let s = drift_along(&p, &law, 0, &word).unwrap();
        assert!((s[299] / 300.0 - phi).abs() < 1e-12);
    }

    #[test]
    fn probe_matches_phi_for_uniform_law() {
        let p = Partition::new(vec![0.0, 0.4, 0.6, 1.0]).unwrap();
        let law = HeightLaw::iid_uniform(3).unwrap();
        let phi = compute_phi(&moments(&law, &p, &McConfig::default()).unwrap(), &p).unwrap().phi;
        let r = drift_probe(&p, &law, &DriftConfig { paths: 200, n: 500, seed: 9 }).unwrap();
        assert!((r.mean_drift - phi).abs() < 4.0 * r.std_error + 1e-9, "{} vs {phi} ± {}", r.mean_drift, r.std_error);
        for (i, f) in r.digit_frequencies.iter().enumerate() {
            assert!((f - p.length(i)).abs() < 4.0 * r.digit_std_errors[i] + 1e-9);
        }
    }

    #[test]
    fn bad_inputs() {
        let p = Partition::uniform(3).unwrap();
        let law = HeightLaw::iid_uniform(3).unwrap();
        assert!(matches!(drift_along(&p, &law, 0, &Word::new(vec![3])), Err(Error::Domain(_))));
        assert!(matches!(drift_probe(&p, &law, &DriftConfig { paths: 1, n: 1, seed: 0 }), Err(Error::Config(_))));
    }
}
