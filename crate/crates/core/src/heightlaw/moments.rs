use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::poly::{self, Poly};
use super::{ordinate, HeightLaw, LawFamily, ZERO_RATIO};
use crate::error::{Error, Result};
use crate::rng::{substream, StreamRng};
use crate::serde_ext::extended_f64;
use crate::symbolic::Partition;

/// Below this, Monte Carlo moments are refused as a configuration error.
pub const MIN_MC_SAMPLES: usize = 1000;

/// Largest integer Beta shape handled by the polynomial closed forms.
const MAX_CLOSED_FORM_SHAPE: f64 = 8.0;

const CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { samples: 1_000_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    MonteCarlo { samples: usize, std_error: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    #[serde(with = "extended_f64")]
    pub value: f64,
    pub provenance: Provenance,
}

impl Moment {
    pub fn exact(value: f64) -> Self {
        Self { value, provenance: Provenance::ClosedForm }
    }

    pub fn std_error(&self) -> f64 {
        match self.provenance {
            Provenance::ClosedForm => 0.0,
            Provenance::MonteCarlo { std_error, .. } => std_error,
        }
    }
}

/// Per-index moments of the ratios `a_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioMoments {
    pub mean_a: Vec<Moment>,
    /// `E log a_i`; `-∞` when `a_i` has an atom at zero.
    pub mean_log_a: Vec<Moment>,
    pub mean_a_sq: Vec<Moment>,
    /// `E(a_i a_j)` for all pairs.
    pub cross: Vec<Vec<Moment>>,
}

impl RatioMoments {
    /// Closed-form moments from plain values.
    pub fn exact(mean_a: &[f64], mean_log_a: &[f64], mean_a_sq: &[f64], cross: &[Vec<f64>]) -> Result<Self> {
        let m = mean_a.len();
        if mean_log_a.len() != m || mean_a_sq.len() != m || cross.len() != m || cross.iter().any(|r| r.len() != m) {
            return Err(Error::Contract("moment vectors have inconsistent lengths".into()));
        }
        let wrap = |v: &[f64]| v.iter().copied().map(Moment::exact).collect::<Vec<_>>();
        Ok(Self {
            mean_a: wrap(mean_a),
            mean_log_a: wrap(mean_log_a),
            mean_a_sq: wrap(mean_a_sq),
            cross: cross.iter().map(|r| wrap(r)).collect(),
        })
    }

    /// Same values, with the given standard errors attached to `E a_i`.
    pub fn with_mean_a_std_errors(mut self, std_errors: &[f64], samples: usize) -> Self {
        for (m, se) in self.mean_a.iter_mut().zip(std_errors) {
            m.provenance = Provenance::MonteCarlo { samples, std_error: *se };
        }
        self
    }

    pub fn m(&self) -> usize {
        self.mean_a.len()
    }

    pub fn mean_a_values(&self) -> Vec<f64> {
        self.mean_a.iter().map(|m| m.value).collect()
    }

    pub fn mean_log_a_values(&self) -> Vec<f64> {
        self.mean_log_a.iter().map(|m| m.value).collect()
    }

    pub fn mean_a_sq_values(&self) -> Vec<f64> {
        self.mean_a_sq.iter().map(|m| m.value).collect()
    }

    pub fn cross_value(&self, i: usize, j: usize) -> f64 {
        self.cross[i][j].value
    }

    pub fn sum_mean_a(&self) -> f64 {
        self.mean_a.iter().map(|m| m.value).sum()
    }

    pub fn is_monte_carlo(&self) -> bool {
        self.mean_a
            .iter()
            .chain(&self.mean_log_a)
            .any(|m| matches!(m.provenance, Provenance::MonteCarlo { .. }))
    }

    /// Indices with `E log a_i = -∞`.
    pub fn degenerate_indices(&self) -> Vec<usize> {
        (0..self.m()).filter(|&i| self.mean_log_a[i].value == f64::NEG_INFINITY).collect()
    }

    /// Violated structural inequalities, each allowed `slack` plus four
    /// standard errors of the entries involved.
    pub fn invariant_violations(&self, slack: f64) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.m() {
            let a = &self.mean_a[i];
            let a2 = &self.mean_a_sq[i];
            let lg = &self.mean_log_a[i];
            let band = |ms: &[&Moment]| slack + 4.0 * ms.iter().map(|m| m.std_error()).sum::<f64>();
            if a.value < -band(&[a]) || a.value > 1.0 + band(&[a]) {
                out.push(format!("E a_{i} = {} outside [0, 1]", a.value));
            }
            if a2.value > a.value + band(&[a, a2]) {
                out.push(format!("E a_{i}^2 = {} exceeds E a_{i} = {}", a2.value, a.value));
            }
            if lg.value > a.value.ln() + band(&[a, lg]) / a.value.max(1e-300) {
                out.push(format!("Jensen fails at {i}: E log a = {} > log E a = {}", lg.value, a.value.ln()));
            }
        }
        let se: f64 = self.mean_a.iter().map(|m| m.std_error()).sum();
        if self.sum_mean_a() < 1.0 - slack - 4.0 * se {
            out.push(format!("sum of E a_i = {} is below 1", self.sum_mean_a()));
        }
        out
    }
}

/// Moments of the ratios under `law`: closed forms where available,
/// otherwise Monte Carlo with standard errors.
pub fn moments(law: &HeightLaw, p: &Partition, mc: &McConfig) -> Result<RatioMoments> {
    if law.m() != p.m() {
        return Err(Error::Contract(format!(
            "law has m = {} but the partition has m = {}",
            law.m(),
            p.m()
        )));
    }
    if mc.samples < MIN_MC_SAMPLES {
        return Err(Error::Config(format!(
            "Monte Carlo sample count {} is below the minimum of {MIN_MC_SAMPLES}",
            mc.samples
        )));
    }
    match law.family() {
        LawFamily::Deterministic(y) => Ok(deterministic(y)),
        LawFamily::IidUniform => Ok(iid_beta_closed(law.m(), 1, 1)),
        LawFamily::IidBeta { alpha, beta } => match (small_integer(*alpha), small_integer(*beta)) {
            (Some(a), Some(b)) => Ok(iid_beta_closed(law.m(), a, b)),
            _ => monte_carlo(law, mc),
        },
        LawFamily::MirroredBeta { alpha, beta } => match (small_integer(*alpha), small_integer(*beta)) {
            (Some(a), Some(b)) => Ok(mirrored_beta_closed(a, b)),
            _ => monte_carlo(law, mc),
        },
        LawFamily::Custom(_) => monte_carlo(law, mc),
    }
}

fn small_integer(v: f64) -> Option<u32> {
    (v.fract() == 0.0 && (1.0..=MAX_CLOSED_FORM_SHAPE).contains(&v)).then_some(v as u32)
}

fn safe_ln(a: f64) -> f64 {
    if a < ZERO_RATIO {
        f64::NEG_INFINITY
    } else {
        a.ln()
    }
}

fn deterministic(y: &[f64]) -> RatioMoments {
    let m = y.len() + 1;
    let a: Vec<f64> = (0..m).map(|i| (ordinate(y, i + 1) - ordinate(y, i)).abs()).collect();
    let logs: Vec<f64> = a.iter().map(|&v| safe_ln(v)).collect();
    let sq: Vec<f64> = a.iter().map(|v| v * v).collect();
    let cross: Vec<Vec<f64>> = a.iter().map(|ai| a.iter().map(|aj| ai * aj).collect()).collect();
    RatioMoments::exact(&a, &logs, &sq, &cross).expect("consistent lengths")
}

fn beta_mean(a: f64, b: f64) -> f64 {
    a / (a + b)
}

fn beta_second(a: f64, b: f64) -> f64 {
    a * (a + 1.0) / ((a + b) * (a + b + 1.0))
}

fn iid_beta_closed(m: usize, a: u32, b: u32) -> RatioMoments {
    let dens = poly::beta_density(a, b);
    let refl = poly::beta_density(b, a);
    let (fa, fb) = (f64::from(a), f64::from(b));
    let ey = beta_mean(fa, fb);
    let ey2 = beta_second(fa, fb);

    let mut mean = vec![poly::abs_diff_mean(&dens); m];
    let mut logs = vec![poly::abs_diff_log_mean(&dens); m];
    let mut sq = vec![2.0 * (ey2 - ey * ey); m];
    // a_0 = y_1 and a_{m-1} = 1 - y_{m-1}
    mean[0] = ey;
    logs[0] = dens.log_moment();
    sq[0] = ey2;
    mean[m - 1] = beta_mean(fb, fa);
    logs[m - 1] = refl.log_moment();
    sq[m - 1] = beta_second(fb, fa);

    let kernel = poly::abs_diff_kernel(&dens);
    let identity = Poly::linear(0.0, 1.0);
    let complement = Poly::linear(1.0, -1.0);
    let mut cross = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            cross[i][j] = if i == j {
                sq[i]
            } else if i.abs_diff(j) >= 2 {
                mean[i] * mean[j]
            } else {
                // a_lo and a_lo+1 share the ordinate y_{lo+1}
                let lo = i.min(j);
                let left = if lo == 0 { &identity } else { &kernel };
                let right = if lo + 2 == m { &complement } else { &kernel };
                dens.mul(left).mul(right).integral(0.0, 1.0)
            };
        }
    }
    RatioMoments::exact(&mean, &logs, &sq, &cross).expect("consistent lengths")
}

fn mirrored_beta_closed(a: u32, b: u32) -> RatioMoments {
    let dens = poly::beta_density(a, b);
    let (fa, fb) = (f64::from(a), f64::from(b));
    let ey = beta_mean(fa, fb);
    let ey2 = beta_second(fa, fb);
    let fold_mean = poly::fold_abs_integral(&dens);
    let fold_sq = dens.mul(&Poly(vec![1.0, -4.0, 4.0])).integral(0.0, 1.0);
    let fold_log = poly::fold_log_integral(&dens);
    let edge_fold = poly::fold_abs_integral(&dens.mul(&Poly::linear(0.0, 1.0)));

    let mean = [ey, fold_mean, ey];
    let logs = [dens.log_moment(), fold_log, dens.log_moment()];
    let sq = [ey2, fold_sq, ey2];
    let cross = vec![
        vec![ey2, edge_fold, ey2],
        vec![edge_fold, fold_sq, edge_fold],
        vec![ey2, edge_fold, ey2],
    ];
    RatioMoments::exact(&mean, &logs, &sq, &cross).expect("consistent lengths")
}

#[derive(Clone)]
struct Accumulator {
    n: usize,
    a: Vec<f64>,
    a2: Vec<f64>,
    a4: Vec<f64>,
    log: Vec<f64>,
    log2: Vec<f64>,
    log_zero: Vec<bool>,
    cross: Vec<f64>,
    cross2: Vec<f64>,
}

impl Accumulator {
    fn new(m: usize) -> Self {
        Self {
            n: 0,
            a: vec![0.0; m],
            a2: vec![0.0; m],
            a4: vec![0.0; m],
            log: vec![0.0; m],
            log2: vec![0.0; m],
            log_zero: vec![false; m],
            cross: vec![0.0; m * m],
            cross2: vec![0.0; m * m],
        }
    }

    fn merge(&mut self, o: &Accumulator) {
        self.n += o.n;
        let add = |x: &mut Vec<f64>, y: &Vec<f64>| x.iter_mut().zip(y).for_each(|(u, v)| *u += v);
        add(&mut self.a, &o.a);
        add(&mut self.a2, &o.a2);
        add(&mut self.a4, &o.a4);
        add(&mut self.log, &o.log);
        add(&mut self.log2, &o.log2);
        add(&mut self.cross, &o.cross);
        add(&mut self.cross2, &o.cross2);
        self.log_zero.iter_mut().zip(&o.log_zero).for_each(|(u, v)| *u |= v);
    }
}

fn mean_and_se(sum: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - sum * sum / nf) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

fn monte_carlo(law: &HeightLaw, mc: &McConfig) -> Result<RatioMoments> {
    let m = law.m();
    let chunks = mc.samples.div_ceil(CHUNK);
    // Fixed chunking and ordered reduction: results do not depend on the
    // number of worker threads.
    let parts: Vec<Result<Accumulator>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(mc.samples - c * CHUNK);
            let mut rng = StreamRng::new(substream(mc.seed, c as u64));
            let mut acc = Accumulator::new(m);
            let mut y = vec![0.0; m - 1];
            let mut a = vec![0.0; m];
            for _ in 0..count {
                law.fill(&mut rng, &mut y)?;
                for (i, slot) in a.iter_mut().enumerate() {
                    *slot = (ordinate(&y, i + 1) - ordinate(&y, i)).abs();
                }
                for i in 0..m {
                    let v = a[i];
                    acc.a[i] += v;
                    acc.a2[i] += v * v;
                    acc.a4[i] += v * v * v * v;
                    if v < ZERO_RATIO {
                        acc.log_zero[i] = true;
                    } else {
                        let l = v.ln();
                        acc.log[i] += l;
                        acc.log2[i] += l * l;
                    }
                    for j in 0..m {
                        let c = v * a[j];
                        acc.cross[i * m + j] += c;
                        acc.cross2[i * m + j] += c * c;
                    }
                }
            }
            acc.n = count;
            Ok(acc)
        })
        .collect();
    let mut total = Accumulator::new(m);
    for part in parts {
        total.merge(&part?);
    }
    let n = total.n;
    let mc_moment = |sum: f64, sum_sq: f64| {
        let (value, std_error) = mean_and_se(sum, sum_sq, n);
        Moment { value, provenance: Provenance::MonteCarlo { samples: n, std_error } }
    };
    let mean_a = (0..m).map(|i| mc_moment(total.a[i], total.a2[i])).collect();
    let mean_a_sq = (0..m).map(|i| mc_moment(total.a2[i], total.a4[i])).collect();
    let mean_log_a = (0..m)
        .map(|i| {
            if total.log_zero[i] {
                Moment {
                    value: f64::NEG_INFINITY,
                    provenance: Provenance::MonteCarlo { samples: n, std_error: 0.0 },
                }
            } else {
                mc_moment(total.log[i], total.log2[i])
            }
        })
        .collect();
    let cross = (0..m)
        .map(|i| (0..m).map(|j| mc_moment(total.cross[i * m + j], total.cross2[i * m + j])).collect())
        .collect();
    Ok(RatioMoments { mean_a, mean_log_a, mean_a_sq, cross })
}
