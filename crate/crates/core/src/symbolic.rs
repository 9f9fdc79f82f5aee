//! Words over the alphabet `{0, …, m-1}` and the partition geometry of `[0, 1]`.
//!
//! A word `ω = ω₁…ωₙ` addresses the basic interval `[b_ω, b_ω′]` of length
//! `l_ω = l_{ω₁}⋯l_{ωₙ}`, where `ω′` is the lexicographic successor of `ω`
//! among words of the same length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on word length used by enumeration and tree builders.
pub const DEFAULT_MAX_DEPTH: usize = 32;

/// Above this length, interval lengths are multiplied in log space.
const LOG_SPACE_THRESHOLD: usize = 64;

/// A partition `0 = b₀ < b₁ < … < b_m = 1` of the unit interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Partition {
    breakpoints: Vec<f64>,
    lengths: Vec<f64>,
}

impl Partition {
    pub fn new(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 3 {
            return Err(Error::Domain(format!(
                "a partition needs at least 2 intervals, got {} breakpoints",
                breakpoints.len()
            )));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("breakpoints must be finite".into()));
        }
        if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != 1.0 {
            return Err(Error::Domain(
                "breakpoints must start at 0 and end at 1".into(),
            ));
        }
        if let Some(k) = breakpoints.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Domain(format!(
                "breakpoints must be strictly increasing (b_{} = {} >= b_{} = {})",
                k,
                breakpoints[k],
                k + 1,
                breakpoints[k + 1]
            )));
        }
        let lengths = breakpoints.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self { breakpoints, lengths })
    }

    /// Equal pieces `b_i = i/m`.
    pub fn uniform(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::Domain(format!("m must be at least 2, got {m}")));
        }
        let mut b: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
        b[m] = 1.0;
        Self::new(b)
    }

    /// Alphabet size, i.e. the number of intervals.
    pub fn m(&self) -> usize {
        self.lengths.len()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn length(&self, i: usize) -> f64 {
        self.lengths[i]
    }

    pub fn breakpoint(&self, i: usize) -> f64 {
        self.breakpoints[i]
    }

    /// `δ = min_i l_i`, the ratio of the stopping-set scales.
    pub fn min_length(&self) -> f64 {
        self.lengths.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_length(&self) -> f64 {
        self.lengths.iter().copied().fold(0.0, f64::max)
    }

    /// All intervals have the same length.
    pub fn is_homogeneous(&self) -> bool {
        let l0 = self.lengths[0];
        self.lengths.iter().all(|&l| (l - l0).abs() <= 1e-12)
    }

    /// With two intervals the construction is a random distribution function
    /// and both questions are trivial.
    pub fn is_trivial_regime(&self) -> bool {
        self.m() == 2
    }

    fn check_digit(&self, d: u32) -> Result<usize> {
        let d = d as usize;
        if d >= self.m() {
            Err(Error::Domain(format!(
                "digit {d} out of range for alphabet of size {}",
                self.m()
            )))
        } else {
            Ok(d)
        }
    }
}

impl TryFrom<Vec<f64>> for Partition {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Partition::new(value)
    }
}

impl From<Partition> for Vec<f64> {
    fn from(p: Partition) -> Self {
        p.breakpoints
    }
}

/// A finite word; the empty word is allowed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Word(Vec<u32>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn new(digits: Vec<u32>) -> Self {
        Word(digits)
    }

    pub fn digits(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `ω|_k`, defined only for `k ≤ |ω|`.
    pub fn restrict(&self, k: usize) -> Result<Word> {
        if k > self.len() {
            return Err(Error::Domain(format!(
                "cannot restrict a word of length {} to {k}",
                self.len()
            )));
        }
        Ok(Word(self.0[..k].to_vec()))
    }

    /// The concatenation `ωi`.
    pub fn child(&self, i: u32) -> Word {
        let mut d = self.0.clone();
        d.push(i);
        Word(d)
    }

    pub fn is_prefix_of(&self, other: &Word) -> bool {
        other.0.starts_with(&self.0)
    }

    /// Position of the word among `I_n` in lexicographic order.
    pub fn index(&self, m: usize) -> usize {
        self.0.iter().fold(0usize, |acc, &d| acc * m + d as usize)
    }

    pub fn from_index(mut index: usize, m: usize, n: usize) -> Word {
        let mut d = vec![0u32; n];
        for slot in d.iter_mut().rev() {
            *slot = (index % m) as u32;
            index /= m;
        }
        Word(d)
    }

    /// All words of length `n` in lexicographic order.
    pub fn enumerate(m: usize, n: usize) -> impl Iterator<Item = Word> {
        let mut next = Some(Word(vec![0; n]));
        std::iter::from_fn(move || {
            let current = next.take()?;
            if let Successor::Word(w) = successor(&current, m) {
                next = Some(w);
            }
            Some(current)
        })
    }
}

impl From<Vec<u32>> for Word {
    fn from(d: Vec<u32>) -> Self {
        Word(d)
    }
}

impl std::fmt::Display for Word {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_empty() {
            return write!(f, "∅");
        }
        for (k, d) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

/// The next word of equal length, or `Top` past the maximal word
/// `(m-1, …, m-1)` (whose right endpoint is 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Successor {
    Word(Word),
    Top,
}

impl Successor {
    /// `b_ω′`, with the maximal word mapping to 1.
    pub fn base(&self, p: &Partition) -> Result<f64> {
        match self {
            Successor::Word(w) => word_base(w, p),
            Successor::Top => Ok(1.0),
        }
    }
}

/// `b_ω = Σ_k b_{ω_k} Π_{i<k} l_{ω_i}`.
pub fn word_base(w: &Word, p: &Partition) -> Result<f64> {
    let mut base = 0.0;
    let mut scale = 1.0;
    for &d in w.digits() {
        let d = p.check_digit(d)?;
        base += p.breakpoints[d] * scale;
        scale *= p.lengths[d];
    }
    Ok(base)
}

/// `l_ω = Π l_{ω_i}`, the Lebesgue measure of `[b_ω, b_ω′]`.
pub fn word_length_measure(w: &Word, p: &Partition) -> Result<f64> {
    if w.len() > LOG_SPACE_THRESHOLD {
        let mut log = 0.0;
        for &d in w.digits() {
            log += p.lengths[p.check_digit(d)?].ln();
        }
        return Ok(log.exp());
    }
    let mut l = 1.0;
    for &d in w.digits() {
        l *= p.lengths[p.check_digit(d)?];
    }
    Ok(l)
}

/// Odometer increment with carry.
pub fn successor(w: &Word, m: usize) -> Successor {
    let mut d = w.0.clone();
    for k in (0..d.len()).rev() {
        if (d[k] as usize) + 1 < m {
            d[k] += 1;
            return Successor::Word(Word(d));
        }
        d[k] = 0;
    }
    Successor::Top
}

/// The length-`n` prefix of the coding of `x`.
///
/// Endpoints take the all-zeros tail, and `x = 1` codes as `(m-1, …, m-1)`.
pub fn code_point(x: f64, p: &Partition, n: usize) -> Result<Word> {
    Ok(Word(Coding::new(x, p)?.take(n).collect()))
}

/// Lazily yields the digits of the coding of a point.
#[derive(Debug, Clone)]
pub struct Coding<'a> {
    x: f64,
    partition: &'a Partition,
    base: f64,
    scale: f64,
}

impl<'a> Coding<'a> {
    pub fn new(x: f64, partition: &'a Partition) -> Result<Self> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("point {x} lies outside [0, 1]")));
        }
        Ok(Self { x, partition, base: 0.0, scale: 1.0 })
    }
}

impl Iterator for Coding<'_> {
    type Item = u32;

    fn next(&mut self) -> Option<u32> {
        let p = self.partition;
        // Same accumulation order as word_base, so b_ω reproduces bit-for-bit.
        let d = (0..p.m())
            .rev()
            .find(|&i| self.base + p.breakpoints[i] * self.scale <= self.x)
            .unwrap_or(0);
        self.base += p.breakpoints[d] * self.scale;
        self.scale *= p.lengths[d];
        Some(d as u32)
    }
}
