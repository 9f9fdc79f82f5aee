//! The sums `X_n = Σ_{Q_n} t_ω` and `Y_n = Σ_{I_n} t_ω` with
//! `t_ω = h_ω l_ω^{s-1}`, per realization and across many realizations.
//!
//! A single depth-first walk visits every node whose parent is wider than
//! `δ^{n_max}`, which covers all of `Q_0..Q_{n_max}` and `I_0..I_{n_max}`. The
//! walk reads nodes from a materialized tree or expands them lazily from the
//! law, so deep stopping sets never require the full tree in memory.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::boxcount::{CellAccumulator, SandwichReport};
use super::stats::{linear_fit, mean_se};
use super::stopping::{required_depth, stops, threshold};
use super::{all_passed, boxcount, CheckKind, CheckOutcome};
use crate::error::{Error, Result};
use crate::heightlaw::{HeightLaw, RatioMoments};
use crate::realization::{expand, Node, RealizationTree, Rect};
use crate::rng::substream;
use crate::symbolic::Partition;
use crate::theory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTrace {
    pub s: f64,
    pub delta: f64,
    pub n_max: usize,
    /// `X_n` for `n = 0..=n_max`.
    pub x: Vec<f64>,
    /// `Y_n` for `n = 0..=n_max`.
    pub y: Vec<f64>,
    /// `|X_n - Y_n|`.
    pub gap: Vec<f64>,
    /// `α = Σ E(a_i²) l_i^{2(s-1)}`, when moments were supplied.
    pub alpha: Option<f64>,
}

trait ChildSource {
    fn children(&mut self, depth: usize, index: usize, parent: &Node, out: &mut [Node]) -> Result<()>;
}

struct TreeSource<'a>(&'a RealizationTree);

impl ChildSource for TreeSource<'_> {
    fn children(&mut self, depth: usize, index: usize, _parent: &Node, out: &mut [Node]) -> Result<()> {
        let m = out.len();
        if depth + 1 > self.0.depth() {
            return Err(Error::InsufficientDepth { required: depth + 1, available: self.0.depth() });
        }
        out.copy_from_slice(&self.0.level(depth + 1)[index * m..index * m + m]);
        Ok(())
    }
}

struct LawSource<'a> {
    law: &'a HeightLaw,
    y: Vec<f64>,
}

impl ChildSource for LawSource<'_> {
    fn children(&mut self, _depth: usize, _index: usize, parent: &Node, out: &mut [Node]) -> Result<()> {
        expand(self.law, parent, &mut self.y, out)
    }
}

trait Visitor {
    fn level(&mut self, depth: usize, t: f64);
    fn stop(&mut self, n: usize, base: f64, width: f64, node: &Node, t: f64);
}

#[derive(Clone, Copy)]
struct Frame {
    node: Node,
    depth: usize,
    index: usize,
    base: f64,
    l: f64,
    /// `l_ω^{s-1}`.
    lw: f64,
    parent_l: f64,
}

fn walk<S: ChildSource, V: Visitor>(p: &Partition, s: f64, n_max: usize, seed_root: Node, source: &mut S, visitor: &mut V) -> Result<()> {
    let m = p.m();
    let delta = p.min_length();
    let thr: Vec<f64> = (0..=n_max).map(|n| threshold(delta, n)).collect();
    let pow: Vec<f64> = p.lengths().iter().map(|l| l.powf(s - 1.0)).collect();
    let mut children = vec![seed_root; m];
    let mut stack = vec![Frame { node: seed_root, depth: 0, index: 0, base: 0.0, l: 1.0, lw: 1.0, parent_l: f64::INFINITY }];
    while let Some(f) = stack.pop() {
        let t = f.node.h * f.lw;
        if f.depth <= n_max {
            visitor.level(f.depth, t);
        }
        for (n, th) in thr.iter().enumerate() {
            if stops(f.l, *th) && !stops(f.parent_l, *th) {
                visitor.stop(n, f.base, f.l, &f.node, t);
            }
        }
        if f.depth >= n_max && stops(f.l, thr[n_max]) {
            continue;
        }
        source.children(f.depth, f.index, &f.node, &mut children)?;
        for i in (0..m).rev() {
            stack.push(Frame {
                node: children[i],
                depth: f.depth + 1,
                index: f.index.wrapping_mul(m).wrapping_add(i),
                base: f.base + p.breakpoint(i) * f.l,
                l: f.l * p.length(i),
                lw: f.lw * pow[i],
                parent_l: f.l,
            });
        }
    }
    Ok(())
}

struct SumVisitor {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Visitor for SumVisitor {
    fn level(&mut self, depth: usize, t: f64) {
        self.y[depth] += t;
    }

    fn stop(&mut self, n: usize, _base: f64, _width: f64, _node: &Node, t: f64) {
        self.x[n] += t;
    }
}

struct CoverVisitor {
    sums: SumVisitor,
    covers: Vec<CellAccumulator>,
}

impl Visitor for CoverVisitor {
    fn level(&mut self, depth: usize, t: f64) {
        self.sums.level(depth, t);
    }

    fn stop(&mut self, n: usize, base: f64, width: f64, node: &Node, t: f64) {
        self.sums.stop(n, base, width, node, t);
        if n >= 1 {
            self.covers[n - 1].add_rect(&Rect::from_node(base, width, node));
        }
    }
}

fn finish_trace(p: &Partition, s: f64, n_max: usize, v: SumVisitor) -> MartingaleTrace {
    let gap = v.x.iter().zip(&v.y).map(|(a, b)| (a - b).abs()).collect();
    MartingaleTrace { s, delta: p.min_length(), n_max, x: v.x, y: v.y, gap, alpha: None }
}

fn check_tree_depth(tree: &RealizationTree, n_max: usize) -> Result<()> {
    let required = required_depth(tree.partition(), n_max).max(n_max);
    if tree.depth() < required {
        return Err(Error::InsufficientDepth { required, available: tree.depth() });
    }
    Ok(())
}

fn new_sums(n_max: usize) -> SumVisitor {
    SumVisitor { x: vec![0.0; n_max + 1], y: vec![0.0; n_max + 1] }
}

/// Exact `X_n`, `Y_n` for `n ≤ n_max` on a materialized tree.
pub fn martingale_trace(tree: &RealizationTree, s: f64, n_max: usize) -> Result<MartingaleTrace> {
    check_tree_depth(tree, n_max)?;
    let p = tree.partition();
    let mut v = new_sums(n_max);
    walk(p, s, n_max, tree.level(0)[0], &mut TreeSource(tree), &mut v)?;
    Ok(finish_trace(p, s, n_max, v))
}

/// Same sums, expanding nodes on demand from `(law, seed)`. Agrees exactly
/// with [`martingale_trace`] on `sample_tree(p, law, depth, seed)`.
pub fn martingale_trace_lazy(p: &Partition, law: &HeightLaw, seed: u64, s: f64, n_max: usize) -> Result<MartingaleTrace> {
    let mut v = new_sums(n_max);
    let mut src = LawSource { law, y: vec![0.0; p.m() - 1] };
    walk(p, s, n_max, Node::root(seed), &mut src, &mut v)?;
    Ok(finish_trace(p, s, n_max, v))
}

fn cover_counts(covers: Vec<CellAccumulator>) -> Vec<(usize, u64)> {
    covers.into_iter().enumerate().map(|(k, mut c)| (k + 1, c.count())).collect()
}

fn new_covers(delta: f64, n_max: usize) -> Result<Vec<CellAccumulator>> {
    (1..=n_max).map(|n| CellAccumulator::new(threshold(delta, n))).collect()
}

/// The trace plus the box count of the closed `Q_n` rectangles at scale
/// `δ^n`, for `n = 1..=n_max`, on a materialized tree.
pub fn cover_and_trace(tree: &RealizationTree, s: f64, n_max: usize) -> Result<(MartingaleTrace, Vec<(usize, u64)>)> {
    check_tree_depth(tree, n_max)?;
    let p = tree.partition();
    let mut v = CoverVisitor { sums: new_sums(n_max), covers: new_covers(p.min_length(), n_max)? };
    walk(p, s, n_max, tree.level(0)[0], &mut TreeSource(tree), &mut v)?;
    Ok((finish_trace(p, s, n_max, v.sums), cover_counts(v.covers)))
}

/// Lazy counterpart of [`cover_and_trace`].
pub fn cover_and_trace_lazy(
    p: &Partition,
    law: &HeightLaw,
    seed: u64,
    s: f64,
    n_max: usize,
) -> Result<(MartingaleTrace, Vec<(usize, u64)>)> {
    let mut v = CoverVisitor { sums: new_sums(n_max), covers: new_covers(p.min_length(), n_max)? };
    let mut src = LawSource { law, y: vec![0.0; p.m() - 1] };
    walk(p, s, n_max, Node::root(seed), &mut src, &mut v)?;
    Ok((finish_trace(p, s, n_max, v.sums), cover_counts(v.covers)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    pub n_max: usize,
    pub n_trees: usize,
    pub seed: u64,
    /// Width of the statistical bands in standard errors.
    pub band_k: f64,
    /// Allowed excess of the fitted gap decay rate over `α`.
    pub decay_slack: f64,
    /// Realizations (the first ones) on which the sandwich is checked.
    pub sandwich_trees: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { n_max: 6, n_trees: 1000, seed: 0, band_k: 4.0, decay_slack: 0.05, sandwich_trees: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub n: usize,
    pub mean_y: f64,
    pub se_y: f64,
    /// `E Y_n = μ^n` with `μ = Σ E(a_i) l_i^{s-1}`; 1 at the root.
    pub expected_y: f64,
    pub mean_y_sq: f64,
    pub se_y_sq: f64,
    /// `E Y_n²` from the exact recurrence.
    pub expected_y_sq: f64,
    pub mean_gap_sq: f64,
    pub se_gap_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// `exp` of the fitted slope of `log E[(X_n - Y_n)²]` against `n`.
    pub rate: f64,
    pub n_range: (usize, usize),
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichSummary {
    pub pairs: usize,
    pub stated_failures: usize,
    pub rigorous_failures: usize,
    /// Largest `stated_lower / N` seen.
    pub worst_stated_lower_ratio: f64,
    pub reports: Vec<SandwichReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub s: f64,
    pub n_max: usize,
    pub n_trees: usize,
    pub alpha: f64,
    /// `C = E[(Σ a_i l_i^{s-1})²]`.
    pub c_constant: f64,
    /// `μ = Σ E(a_i) l_i^{s-1}`.
    pub mu: f64,
    /// `1 + C/(1-α)`, a bound on `sup_n E Y_n²` at the root.
    pub second_moment_bound: f64,
    pub levels: Vec<LevelStats>,
    pub decay: Option<DecayFit>,
    pub sandwich: SandwichSummary,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

/// Runs `cfg.n_trees` independent realizations and checks, at every
/// `n ≤ n_max`: the sample mean of `Y_n` against 1, the sample second moment
/// against `1 + C/(1-α)`, the decay of `E[(X_n - Y_n)²]` against `α`, and the
/// sandwich on the first `cfg.sandwich_trees` realizations.
pub fn martingale_diagnostics(
    law: &HeightLaw,
    p: &Partition,
    moments: &RatioMoments,
    s: f64,
    cfg: &DiagnosticsConfig,
) -> Result<MartingaleReport> {
    if cfg.n_trees < 2 {
        return Err(Error::Config("diagnostics need at least two realizations".into()));
    }
    if law.m() != p.m() || moments.m() != p.m() {
        return Err(Error::Contract("law, moments and partition disagree on m".into()));
    }
    let n_max = cfg.n_max;
    let runs: Vec<(MartingaleTrace, Option<Vec<(usize, u64)>>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let seed = substream(cfg.seed, t as u64);
            if t < cfg.sandwich_trees && n_max >= 1 {
                cover_and_trace_lazy(p, law, seed, s, n_max).map(|(tr, c)| (tr, Some(c)))
            } else {
                martingale_trace_lazy(p, law, seed, s, n_max).map(|tr| (tr, None))
            }
        })
        .collect::<Result<_>>()?;

    let alpha = theory::alpha(moments, p, s);
    let c_constant = theory::second_moment_constant(moments, p, s);
    let mu: f64 = theory::p_weights(moments, p, s).iter().sum();
    let second_moment_bound = 1.0 + c_constant / (1.0 - alpha);

    let mut levels = Vec::with_capacity(n_max + 1);
    let mut expected_y_sq = 1.0;
    for n in 0..=n_max {
        let ys: Vec<f64> = runs.iter().map(|(tr, _)| tr.y[n]).collect();
        let y2: Vec<f64> = ys.iter().map(|y| y * y).collect();
        let g2: Vec<f64> = runs.iter().map(|(tr, _)| tr.gap[n] * tr.gap[n]).collect();
        let (mean_y, se_y) = mean_se(&ys);
        let (mean_y_sq, se_y_sq) = mean_se(&y2);
        let (mean_gap_sq, se_gap_sq) = mean_se(&g2);
        levels.push(LevelStats {
            n,
            mean_y,
            se_y,
            expected_y: mu.powi(n as i32),
            mean_y_sq,
            se_y_sq,
            expected_y_sq,
            mean_gap_sq,
            se_gap_sq,
        });
        // E Y_{n+1}² = μ² E Y_n² + (C - μ²) α^n
        expected_y_sq = mu * mu * expected_y_sq + (c_constant - mu * mu) * alpha.powi(n as i32);
    }

    let mut checks = Vec::new();
    let kind = if law.is_deterministic() { CheckKind::Exact } else { CheckKind::Statistical };
    // Rounding in t_ω accumulates over up to m^n terms.
    let abs_tol = 1e-9;
    for l in &levels {
        let dev = (l.mean_y - 1.0).abs();
        let band = cfg.band_k * l.se_y + abs_tol;
        checks.push(CheckOutcome::new(
            format!("mean_y_{}", l.n),
            kind,
            dev <= band,
            format!("mean Y_{} = {:.6} ± {:.2e}, |dev| = {dev:.3e}, band {band:.3e}", l.n, l.mean_y, l.se_y),
        ));
    }
    let worst = levels
        .iter()
        .map(|l| l.mean_y_sq - cfg.band_k * l.se_y_sq - second_moment_bound)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(CheckOutcome::new(
        "second_moment_bounded",
        kind,
        worst <= abs_tol,
        format!("max_n (mean Y_n² - {}·se) - (1 + C/(1-α)) = {worst:.4}, bound {second_moment_bound:.4}", cfg.band_k),
    ));

    let fit_pts: Vec<(f64, f64)> = levels
        .iter()
        .filter(|l| l.n >= 1 && l.mean_gap_sq > 1e-24)
        .map(|l| (l.n as f64, l.mean_gap_sq.ln()))
        .collect();
    let threshold = alpha + cfg.decay_slack;
    let decay = if fit_pts.len() >= 3 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = fit_pts.iter().copied().unzip();
        linear_fit(&xs, &ys).map(|f| DecayFit {
            rate: f.slope.exp(),
            n_range: (xs[0] as usize, xs[xs.len() - 1] as usize),
            threshold,
        })
    } else {
        None
    };
    match &decay {
        Some(d) => checks.push(CheckOutcome::new(
            "gap_decay",
            kind,
            d.rate <= threshold,
            format!("fitted rate {:.4} over n = {}..={}, α + slack = {threshold:.4}", d.rate, d.n_range.0, d.n_range.1),
        )),
        None => {
            let max_gap = levels.iter().map(|l| l.mean_gap_sq).fold(0.0, f64::max);
            checks.push(CheckOutcome::new(
                "gap_decay",
                CheckKind::Exact,
                max_gap <= 1e-24,
                format!("X_n and Y_n coincide (max mean gap² {max_gap:.3e})"),
            ));
        }
    }

    let mut sandwich =
        SandwichSummary { pairs: 0, stated_failures: 0, rigorous_failures: 0, worst_stated_lower_ratio: 0.0, reports: Vec::new() };
    for (tr, counts) in &runs {
        let Some(counts) = counts else { continue };
        let rep = boxcount::sandwich_check(tr, counts)?;
        for r in &rep.rows {
            sandwich.pairs += 1;
            sandwich.stated_failures += usize::from(!r.stated_holds);
            sandwich.rigorous_failures += usize::from(!r.rigorous_holds);
            sandwich.worst_stated_lower_ratio = sandwich.worst_stated_lower_ratio.max(r.stated_lower / r.count as f64);
        }
        sandwich.reports.push(rep);
    }
    if sandwich.pairs > 0 {
        checks.push(CheckOutcome::new(
            "sandwich_rigorous",
            CheckKind::Exact,
            sandwich.rigorous_failures == 0,
            format!("{} of {} (realization, n) pairs violate the rigorous bounds", sandwich.rigorous_failures, sandwich.pairs),
        ));
        checks.push(CheckOutcome::new(
            "sandwich_stated",
            CheckKind::Informational,
            sandwich.stated_failures == 0,
            format!(
                "{} of {} pairs violate the stated bounds; worst lower/N = {:.3}",
                sandwich.stated_failures, sandwich.pairs, sandwich.worst_stated_lower_ratio
            ),
        ));
    }
    let passed = all_passed(&checks);
    Ok(MartingaleReport {
        s,
        n_max,
        n_trees: cfg.n_trees,
        alpha,
        c_constant,
        mu,
        second_moment_bound,
        levels,
        decay,
        sandwich,
        checks,
        passed,
    })
}
