//! Stopping sets `Q_n`: the minimal words with `δ^{n+1} < l_ω ≤ δ^n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symbolic::{Partition, Word};

/// Relative slack in `l_ω ≤ δ^n`: products of lengths and powers of `δ`
/// round differently.
pub const STOP_REL_TOL: f64 = 1e-12;

/// Default cap on the number of words materialized in one stopping set.
pub const DEFAULT_MAX_WORDS: usize = 1 << 24;

/// `δ^n`, the width threshold of `Q_n`.
#[inline]
pub fn threshold(delta: f64, n: usize) -> f64 {
    delta.powi(n as i32)
}

/// True when a word of width `l` has reached the threshold.
#[inline]
pub fn stops(l: f64, thr: f64) -> bool {
    l <= thr * (1.0 + STOP_REL_TOL)
}

/// Tree depth that is guaranteed to contain every word of `Q_n`:
/// `ceil((n+1)·log δ / log max l_i)`.
pub fn required_depth(p: &Partition, n: usize) -> usize {
    let ratio = p.min_length().ln() / p.max_length().ln();
    ((n as f64 + 1.0) * ratio - 1e-9).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingSet {
    pub n: usize,
    pub delta: f64,
    /// Words in lexicographic order.
    pub words: Vec<Word>,
    /// `l_ω` for each word.
    pub lengths: Vec<f64>,
}

impl StoppingSet {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// `Σ l_ω`, which is 1 for an exhaustive prefix-free set.
    pub fn total_length(&self) -> f64 {
        self.lengths.iter().sum()
    }
}

pub fn build_stopping_set(p: &Partition, n: usize) -> Result<StoppingSet> {
    build_stopping_set_with_budget(p, n, DEFAULT_MAX_WORDS)
}

/// Depth-first descent that stops at the first prefix with `l_ω ≤ δ^n`.
pub fn build_stopping_set_with_budget(p: &Partition, n: usize, max_words: usize) -> Result<StoppingSet> {
    if n == 0 {
        return Err(Error::Domain("stopping sets are defined for n ≥ 1".into()));
    }
    let delta = p.min_length();
    // Every word of length n has a descendant in Q_n, so #Q_n ≥ m^n.
    let floor = (p.m() as f64).powi(n as i32);
    if floor > max_words as f64 {
        return Err(Error::Resource(format!("Q_{n} holds at least {floor:.3e} words, budget is {max_words}")));
    }
    let thr = threshold(delta, n);
    let mut words = Vec::new();
    let mut lengths = Vec::new();
    // Children pushed in reverse so the stack pops them in lexicographic order.
    let mut stack: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 1.0)];
    while let Some((digits, l)) = stack.pop() {
        if stops(l, thr) {
            if words.len() == max_words {
                return Err(Error::Resource(format!("Q_{n} exceeds the budget of {max_words} words")));
            }
            words.push(Word::new(digits));
            lengths.push(l);
            continue;
        }
        for i in (0..p.m()).rev() {
            let mut child = digits.clone();
            child.push(i as u32);
            stack.push((child, l * p.length(i)));
        }
    }
    Ok(StoppingSet { n, delta, words, lengths })
}

/// `|Σ_{ω ∈ Q} Π p_{ω_i} - 1|` for a probability vector `weights`.
pub fn partition_identity_check(set: &StoppingSet, weights: &[f64]) -> Result<f64> {
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("weights {weights:?} are not a probability vector")));
    }
    let mut sum = 0.0;
    for w in &set.words {
        let mut prod = 1.0;
        for &d in w.digits() {
            prod *= *weights
                .get(d as usize)
                .ok_or_else(|| Error::Domain(format!("digit {d} has no weight")))?;
        }
        sum += prod;
    }
    Ok((sum - 1.0).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::word_length_measure;

    fn skewed() -> Partition {
        Partition::new(vec![0.0, 0.4, 0.6, 1.0]).unwrap()
    }

    #[test]
    fn enumerated_example() {
        let q = build_stopping_set(&skewed(), 1).unwrap();
        let words: Vec<Vec<u32>> = q.words.iter().map(|w| w.digits().to_vec()).collect();
        assert_eq!(words, vec![vec![0, 0], vec![0, 1], vec![0, 2], vec![1], vec![2, 0], vec![2, 1], vec![2, 2]]);
        let expect = [0.16, 0.08, 0.16, 0.2, 0.16, 0.08, 0.16];
        for (l, e) in q.lengths.iter().zip(expect) {
            assert!((l - e).abs() < 1e-15);
        }
        assert!(partition_identity_check(&q, &[0.4, 0.2, 0.4]).unwrap() < 1e-12);
    }

    #[test]
    fn homogeneous_is_full_level() {
        let p = Partition::uniform(3).unwrap();
        for n in 1..=5 {
            let q = build_stopping_set(&p, n).unwrap();
            assert_eq!(q.len(), 3usize.pow(n as u32));
            assert!(q.words.iter().all(|w| w.len() == n));
        }
    }

    #[test]
    fn double_inequality_and_minimality() {
        let p = Partition::new(vec![0.0, 0.15, 0.5, 0.55, 1.0]).unwrap();
        for n in 1..=4 {
            let q = build_stopping_set(&p, n).unwrap();
            let d = p.min_length();
            for (w, l) in q.words.iter().zip(&q.lengths) {
                assert!(w.len() >= n);
                assert!(*l <= d.powi(n as i32) * (1.0 + 1e-12) && *l > d.powi(n as i32 + 1));
                let parent = word_length_measure(&w.restrict(w.len() - 1).unwrap(), &p).unwrap();
                assert!(parent > d.powi(n as i32) * (1.0 + 1e-12));
            }
            assert!((q.total_length() - 1.0).abs() < 1e-12);
            let max_len = q.words.iter().map(Word::len).max().unwrap();
            assert!(max_len <= required_depth(&p, n));
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(build_stopping_set(&skewed(), 0), Err(Error::Domain(_))));
        assert!(matches!(build_stopping_set_with_budget(&skewed(), 6, 100), Err(Error::Resource(_))));
        let q = build_stopping_set(&skewed(), 1).unwrap();
        assert!(matches!(partition_identity_check(&q, &[0.5, 0.6, 0.1]), Err(Error::Domain(_))));
    }

    #[test]
    fn required_depth_formula() {
        assert_eq!(required_depth(&Partition::uniform(3).unwrap(), 4), 5);
        // log 0.2 / log 0.4 ≈ 1.756
        assert_eq!(required_depth(&skewed(), 8), 16);
        assert_eq!(required_depth(&skewed(), 1), 4);
    }
}
