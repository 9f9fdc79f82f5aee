//! Joint laws for the random ordinates `(y₁, …, y_{m-1})` drawn at every node,
//! their validity checks, and the moments of the ratios `a_i = |y_{i+1} - y_i|`.
//!
//! [`RatioMoments`] is the only thing the theory solvers consume, so closed-form
//! and Monte Carlo moments are interchangeable downstream.

mod moments;
pub(crate) mod poly;

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, StreamRng};
use crate::symbolic::Partition;

pub use moments::{moments, McConfig, Moment, Provenance, RatioMoments};

/// Ratios below this are treated as exact zeros (degenerate heights).
pub const ZERO_RATIO: f64 = 1e-300;

/// Tolerance for deciding that a deterministic interval is exactly diagonal.
const DIAGONAL_TOL: f64 = 1e-12;

/// Draws used by the empirical spot-check of custom samplers.
pub const CUSTOM_SPOT_CHECK_DRAWS: usize = 10_000;

type SamplerFn = dyn Fn(&mut dyn RngCore) -> Vec<f64> + Send + Sync;

/// A user-supplied joint sampler for `(y₁, …, y_{m-1})`.
#[derive(Clone)]
pub struct CustomSampler {
    pub name: String,
    /// The caller's claim that the law has no boundary atoms and is not
    /// diagonal on any interval. Validation can only spot-check this.
    pub declared_admissible: bool,
    sampler: Arc<SamplerFn>,
}

impl CustomSampler {
    pub fn new<F>(name: impl Into<String>, declared_admissible: bool, f: F) -> Self
    where
        F: Fn(&mut dyn RngCore) -> Vec<f64> + Send + Sync + 'static,
    {
        Self { name: name.into(), declared_admissible, sampler: Arc::new(f) }
    }
}

impl fmt::Debug for CustomSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomSampler")
            .field("name", &self.name)
            .field("declared_admissible", &self.declared_admissible)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum LawFamily {
    /// A point mass at the given ordinates.
    Deterministic(Vec<f64>),
    IidUniform,
    IidBeta { alpha: f64, beta: f64 },
    /// `m = 3` only: `y₁ ~ Beta(α, β)` and `y₂ = 1 - y₁`.
    MirroredBeta { alpha: f64, beta: f64 },
    Custom(CustomSampler),
}

#[derive(Debug, Clone)]
enum BetaSampler {
    /// Beta(a, 1) = U^{1/a}.
    Power(f64),
    /// Beta(1, b) = 1 - U^{1/b}.
    Reflected(f64),
    General(Beta<f64>),
}

impl BetaSampler {
    fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Domain(format!(
                "Beta shapes must be positive and finite, got ({alpha}, {beta})"
            )));
        }
        Ok(if beta == 1.0 {
            BetaSampler::Power(1.0 / alpha)
        } else if alpha == 1.0 {
            BetaSampler::Reflected(1.0 / beta)
        } else {
            BetaSampler::General(
                Beta::new(alpha, beta).map_err(|e| Error::Domain(e.to_string()))?,
            )
        })
    }

    #[inline]
    fn draw(&self, rng: &mut StreamRng) -> f64 {
        match self {
            BetaSampler::Power(inv) => rng.open_uniform().powf(*inv),
            BetaSampler::Reflected(inv) => 1.0 - rng.open_uniform().powf(*inv),
            BetaSampler::General(b) => b.sample(rng),
        }
    }
}

/// The law of the ordinate vector at one node.
#[derive(Debug, Clone)]
pub struct HeightLaw {
    family: LawFamily,
    m: usize,
    beta: Option<BetaSampler>,
}

impl HeightLaw {
    pub fn deterministic(y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Domain("a deterministic law needs at least one ordinate".into()));
        }
        if let Some(v) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("ordinate {v} lies outside [0, 1]")));
        }
        let m = y.len() + 1;
        Ok(Self { family: LawFamily::Deterministic(y), m, beta: None })
    }

    /// Okamoto's function with parameter `α` on equal thirds: `y = (α, 1 - α)`.
    pub fn okamoto(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("Okamoto parameter must lie in (0, 1), got {alpha}")));
        }
        Self::deterministic(vec![alpha, 1.0 - alpha])
    }

    pub fn iid_uniform(m: usize) -> Result<Self> {
        check_m(m)?;
        Ok(Self { family: LawFamily::IidUniform, m, beta: None })
    }

    pub fn iid_beta(m: usize, alpha: f64, beta: f64) -> Result<Self> {
        check_m(m)?;
        let sampler = BetaSampler::new(alpha, beta)?;
        Ok(Self { family: LawFamily::IidBeta { alpha, beta }, m, beta: Some(sampler) })
    }

    pub fn mirrored_beta(alpha: f64, beta: f64) -> Result<Self> {
        let sampler = BetaSampler::new(alpha, beta)?;
        Ok(Self { family: LawFamily::MirroredBeta { alpha, beta }, m: 3, beta: Some(sampler) })
    }

    pub fn custom(m: usize, sampler: CustomSampler) -> Result<Self> {
        check_m(m)?;
        Ok(Self { family: LawFamily::Custom(sampler), m, beta: None })
    }

    pub fn family(&self) -> &LawFamily {
        &self.family
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.family, LawFamily::Deterministic(_))
    }

    /// Short human-readable description.
    pub fn describe(&self) -> String {
        match &self.family {
            LawFamily::Deterministic(y) => format!("deterministic{y:?}"),
            LawFamily::IidUniform => format!("iid-uniform(m={})", self.m),
            LawFamily::IidBeta { alpha, beta } => format!("iid-beta({alpha},{beta}; m={})", self.m),
            LawFamily::MirroredBeta { alpha, beta } => format!("mirrored-beta({alpha},{beta})"),
            LawFamily::Custom(c) => format!("custom({})", c.name),
        }
    }

    /// Writes one draw of `(y₁, …, y_{m-1})` into `y`.
    ///
    /// Only custom samplers can fail, when they return the wrong number of
    /// ordinates or values outside `[0, 1]`.
    #[inline]
    pub fn fill(&self, rng: &mut StreamRng, y: &mut [f64]) -> Result<()> {
        debug_assert_eq!(y.len(), self.m - 1);
        match &self.family {
            LawFamily::Deterministic(v) => y.copy_from_slice(v),
            LawFamily::IidUniform => {
                for slot in y.iter_mut() {
                    *slot = rng.open_uniform();
                }
            }
            LawFamily::IidBeta { .. } => {
                let b = self.beta.as_ref().expect("beta sampler");
                for slot in y.iter_mut() {
                    *slot = b.draw(rng);
                }
            }
            LawFamily::MirroredBeta { .. } => {
                let v = self.beta.as_ref().expect("beta sampler").draw(rng);
                y[0] = v;
                y[1] = 1.0 - v;
            }
            LawFamily::Custom(c) => {
                let v = (c.sampler)(rng);
                if v.len() != y.len() {
                    return Err(Error::Contract(format!(
                        "custom sampler '{}' returned {} ordinates, expected {}",
                        c.name,
                        v.len(),
                        y.len()
                    )));
                }
                if let Some(bad) = v.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                    return Err(Error::Contract(format!(
                        "custom sampler '{}' returned {bad}, outside [0, 1]",
                        c.name
                    )));
                }
                y.copy_from_slice(&v);
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Result<SampleVector> {
        let mut y = vec![0.0; self.m - 1];
        self.fill(rng, &mut y)?;
        Ok(SampleVector { y })
    }

    /// Validates and turns a rejection into an error.
    pub fn ensure_valid(&self, p: &Partition) -> Result<ValidationReport> {
        let report = validate(self, p);
        if report.accepted {
            Ok(report)
        } else {
            Err(Error::Contract(format!(
                "height law {} rejected: {}",
                self.describe(),
                report
                    .rejections
                    .iter()
                    .map(|r| r.to_string())
                    .collect::<Vec<_>>()
                    .join("; ")
            )))
        }
    }
}

fn check_m(m: usize) -> Result<()> {
    if m < 2 {
        Err(Error::Domain(format!("m must be at least 2, got {m}")))
    } else {
        Ok(())
    }
}

/// One draw of the ordinates, with `y₀ = 0` and `y_m = 1` implied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleVector {
    pub y: Vec<f64>,
}

impl SampleVector {
    pub fn new(y: Vec<f64>) -> Self {
        Self { y }
    }

    pub fn m(&self) -> usize {
        self.y.len() + 1
    }

    /// `y_i` with the boundary convention `y₀ = 0`, `y_m = 1`.
    #[inline]
    pub fn ordinate(&self, i: usize) -> f64 {
        ordinate(&self.y, i)
    }

    /// `ã_i = y_{i+1} - y_i`.
    pub fn signed_ratios(&self) -> Vec<f64> {
        (0..self.m()).map(|i| self.ordinate(i + 1) - self.ordinate(i)).collect()
    }

    /// `a_i = |ã_i|`.
    pub fn ratios(&self) -> Vec<f64> {
        self.signed_ratios().into_iter().map(f64::abs).collect()
    }
}

#[inline]
pub(crate) fn ordinate(y: &[f64], i: usize) -> f64 {
    if i == 0 {
        0.0
    } else if i > y.len() {
        1.0
    } else {
        y[i - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rejection {
    DimensionMismatch { law_m: usize, partition_m: usize },
    /// `P(y_i ∈ {0, 1}) > 0` for the 1-based ordinate `index`.
    BoundaryAtom { index: usize },
    /// `ã_i = l_i` almost surely on interval `index`.
    DiagonalInterval { index: usize },
    SamplerContract { message: String },
    DeclaredInadmissible,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::DimensionMismatch { law_m, partition_m } => {
                write!(f, "law has m = {law_m} but the partition has m = {partition_m}")
            }
            Rejection::BoundaryAtom { index } => write!(f, "y_{index} has an atom at 0 or 1"),
            Rejection::DiagonalInterval { index } => {
                write!(f, "interval {index} is diagonal (y_{{i+1}} - y_i = l_i almost surely)")
            }
            Rejection::SamplerContract { message } => write!(f, "{message}"),
            Rejection::DeclaredInadmissible => write!(f, "sampler declared inadmissible"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LawFlag {
    /// `P(a_i = 0) > 0`: `E log a_i = -∞` and the derivative class is forced.
    DegenerateHeight { index: usize },
    /// `m = 2`.
    TrivialRegime,
    /// Assumptions were only spot-checked on finitely many draws.
    HeuristicCheck { draws: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub accepted: bool,
    pub rejections: Vec<Rejection>,
    pub flags: Vec<LawFlag>,
}

impl ValidationReport {
    pub fn degenerate_indices(&self) -> Vec<usize> {
        self.flags
            .iter()
            .filter_map(|f| match f {
                LawFlag::DegenerateHeight { index } => Some(*index),
                _ => None,
            })
            .collect()
    }
}

/// Checks the standing assumptions of the construction.
///
/// Rejects boundary atoms and intervals that are almost surely diagonal
/// (`ã_i = l_i`, checked for intervals `1..m`), and flags ratios with an atom
/// at zero. Custom samplers are spot-checked on a fixed set of draws.
pub fn validate(law: &HeightLaw, p: &Partition) -> ValidationReport {
    let mut rejections = Vec::new();
    let mut flags = Vec::new();
    if law.m() != p.m() {
        rejections.push(Rejection::DimensionMismatch { law_m: law.m(), partition_m: p.m() });
        return ValidationReport { accepted: false, rejections, flags };
    }
    if p.is_trivial_regime() {
        flags.push(LawFlag::TrivialRegime);
    }
    let m = p.m();
    match law.family() {
        LawFamily::Deterministic(y) => {
            for (k, v) in y.iter().enumerate() {
                if *v == 0.0 || *v == 1.0 {
                    rejections.push(Rejection::BoundaryAtom { index: k + 1 });
                }
            }
            for i in 1..m {
                let signed = ordinate(y, i + 1) - ordinate(y, i);
                if (signed - p.length(i)).abs() <= DIAGONAL_TOL {
                    rejections.push(Rejection::DiagonalInterval { index: i });
                }
            }
            for i in 0..m {
                if (ordinate(y, i + 1) - ordinate(y, i)).abs() < ZERO_RATIO {
                    flags.push(LawFlag::DegenerateHeight { index: i });
                }
            }
        }
        LawFamily::IidUniform | LawFamily::IidBeta { .. } | LawFamily::MirroredBeta { .. } => {}
        LawFamily::Custom(c) => {
            if !c.declared_admissible {
                rejections.push(Rejection::DeclaredInadmissible);
            }
            flags.push(LawFlag::HeuristicCheck { draws: CUSTOM_SPOT_CHECK_DRAWS });
            spot_check(law, p, &mut rejections, &mut flags);
        }
    }
    ValidationReport { accepted: rejections.is_empty(), rejections, flags }
}

fn spot_check(law: &HeightLaw, p: &Partition, rejections: &mut Vec<Rejection>, flags: &mut Vec<LawFlag>) {
    let m = p.m();
    let mut rng = StreamRng::new(substream(0x00c0_ffee, 0));
    let mut y = vec![0.0; m - 1];
    let mut boundary = vec![false; m - 1];
    let mut off_diagonal = vec![false; m];
    let mut zero = vec![false; m];
    for _ in 0..CUSTOM_SPOT_CHECK_DRAWS {
        if let Err(e) = law.fill(&mut rng, &mut y) {
            rejections.push(Rejection::SamplerContract { message: e.to_string() });
            return;
        }
        for (k, v) in y.iter().enumerate() {
            boundary[k] |= *v == 0.0 || *v == 1.0;
        }
        for i in 0..m {
            let signed = ordinate(&y, i + 1) - ordinate(&y, i);
            off_diagonal[i] |= (signed - p.length(i)).abs() > DIAGONAL_TOL;
            zero[i] |= signed.abs() < ZERO_RATIO;
        }
    }
    for (k, hit) in boundary.iter().enumerate() {
        if *hit {
            rejections.push(Rejection::BoundaryAtom { index: k + 1 });
        }
    }
    for i in 1..m {
        if !off_diagonal[i] {
            rejections.push(Rejection::DiagonalInterval { index: i });
        }
    }
    for (i, hit) in zero.iter().enumerate() {
        if *hit {
            flags.push(LawFlag::DegenerateHeight { index: i });
        }
    }
}
