//! Grid box counting on rectangle covers and polylines, the log-log
//! regression, and the sandwich check against `X_n`.
//!
//! The grid is anchored at the origin with half-open cells
//! `[iδ, (i+1)δ) × [jδ, (j+1)δ)`; the last row and column are closed at 1.
//! The cell boundary `iδ` is always computed as `(i as f64) * δ`, so the
//! sparse counter and the dense oracles agree bit for bit on rectangles.
//! Segments are evaluated in floating point, so a segment passing exactly
//! through a grid vertex may be assigned to either neighbouring cell. Inputs
//! are assumed to lie in the unit square.

use serde::{Deserialize, Serialize};

use super::martingale::{cover_and_trace, MartingaleTrace};
use super::stats::linear_fit;
use super::stopping::required_depth;
use crate::error::{Error, Result};
use crate::realization::{graph_points, RealizationTree, Rect};

/// Scales below this are refused.
pub const RESOLUTION_FLOOR: f64 = 1e-9;

/// A final column or row narrower than this fraction of a cell is merged
/// into its neighbour, so `δ = 0.6 - 0.4` still gives five cells.
pub const SLIVER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Grid {
    g: f64,
    inv: f64,
    k: usize,
}

impl Grid {
    /// `None` when `δ ≥ 1`, where the whole square is one cell.
    fn new(delta: f64) -> Result<Option<Grid>> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::Domain(format!("scale must be positive and finite, got {delta}")));
        }
        if delta >= 1.0 {
            return Ok(None);
        }
        if delta < RESOLUTION_FLOOR {
            return Err(Error::Domain(format!("scale {delta:e} is below the resolution floor {RESOLUTION_FLOOR:e}")));
        }
        let covers = |k: usize| (k as f64) * delta >= 1.0 - SLIVER_TOL * delta;
        let mut k = (1.0 / delta).ceil() as usize;
        while !covers(k) {
            k += 1;
        }
        while k > 1 && covers(k - 1) {
            k -= 1;
        }
        Ok(Some(Grid { g: delta, inv: 1.0 / delta, k }))
    }

    /// `k < 2^32`, so the `i64` conversion is exact and matches `i as f64`.
    #[inline]
    fn lower(&self, i: usize) -> f64 {
        i as i64 as f64 * self.g
    }

    #[inline]
    fn misplaced(&self, x: f64, i: usize) -> bool {
        (i > 0 && self.lower(i) > x) || (i + 1 < self.k && self.lower(i + 1) <= x)
    }

    /// Largest `i < k` with `i·δ ≤ x`.
    #[inline]
    fn cell(&self, x: f64) -> usize {
        let mut i = ((x * self.inv).max(0.0) as usize).min(self.k - 1);
        if i > 0 && self.lower(i) > x {
            i -= 1;
        } else if i + 1 < self.k && self.lower(i + 1) <= x {
            i += 1;
        }
        if self.misplaced(x, i) {
            return self.cell_search(x, i);
        }
        i
    }

    #[cold]
    #[inline(never)]
    fn cell_search(&self, x: f64, mut i: usize) -> usize {
        while i > 0 && self.lower(i) > x {
            i -= 1;
        }
        while i + 1 < self.k && self.lower(i + 1) <= x {
            i += 1;
        }
        i
    }

    /// Top row met by `[y_lo, y)` when `y_lo` lies in row `floor_row`: the
    /// supremum `y` is not attained, so a row starting exactly at `y` is missed.
    #[inline]
    fn cell_open_above(&self, y: f64, floor_row: usize) -> usize {
        let i = self.cell(y);
        if i > floor_row && self.lower(i) >= y {
            i - 1
        } else {
            i
        }
    }
}

/// Sparse union of grid cells, kept as per-column row intervals.
#[derive(Debug, Clone)]
pub struct CellAccumulator {
    grid: Option<Grid>,
    spans: Vec<(u32, u32, u32)>,
    touched: bool,
}

impl CellAccumulator {
    pub fn new(delta: f64) -> Result<Self> {
        let grid = Grid::new(delta)?;
        if let Some(g) = grid {
            if g.k > u32::MAX as usize {
                return Err(Error::Domain(format!("scale {delta:e} gives too many cells per axis")));
            }
        }
        Ok(Self { grid, spans: Vec::new(), touched: false })
    }

    /// Cells per axis; 1 when `δ ≥ 1`.
    pub fn cells_per_axis(&self) -> usize {
        self.grid.map_or(1, |g| g.k)
    }

    fn push(&mut self, col: usize, lo: usize, hi: usize) {
        self.spans.push((col as u32, lo as u32, hi as u32));
    }

    /// Adds a closed rectangle.
    pub fn add_rect(&mut self, r: &Rect) {
        self.touched = true;
        let Some(g) = self.grid else { return };
        let (c0, c1) = (g.cell(r.x0), g.cell(r.x1));
        let (r0, r1) = (g.cell(r.y0), g.cell(r.y1));
        for c in c0..=c1 {
            self.push(c, r0, r1);
        }
    }

    /// Adds the closed segment between two points.
    pub fn add_segment(&mut self, a: (f64, f64), b: (f64, f64)) {
        self.touched = true;
        let Some(g) = self.grid else { return };
        let ((x0, y0), (x1, y1)) = if a.0 <= b.0 { (a, b) } else { (b, a) };
        if x0 == x1 {
            let c = g.cell(x0);
            self.push(c, g.cell(y0.min(y1)), g.cell(y0.max(y1)));
            return;
        }
        let slope = (y1 - y0) / (x1 - x0);
        let y_at = |x: f64| {
            if x == x0 {
                y0
            } else if x == x1 {
                y1
            } else {
                y0 + (x - x0) * slope
            }
        };
        let (c0, c1) = (g.cell(x0), g.cell(x1));
        for c in c0..=c1 {
            let xa = x0.max(g.lower(c));
            let right_edge = g.lower(c + 1);
            // Within column c the segment covers x ∈ [xa, xb], open at xb
            // when xb is the column's right boundary.
            let (xb, open) = if c + 1 < g.k && x1 >= right_edge { (right_edge, true) } else { (x1, false) };
            if open && xa >= xb {
                continue;
            }
            let (ya, yb) = (y_at(xa), y_at(xb));
            let (lo, hi) = if !open || yb <= ya {
                (g.cell(ya.min(yb)), g.cell(ya.max(yb)))
            } else {
                let lo = g.cell(ya);
                (lo, g.cell_open_above(yb, lo))
            };
            self.push(c, lo, hi);
        }
    }

    /// Number of distinct cells met.
    pub fn count(&mut self) -> u64 {
        let Some(g) = self.grid else {
            return u64::from(self.touched);
        };
        // Bucket by column, then merge row spans within each column.
        let mut start = vec![0usize; g.k + 1];
        for &(c, _, _) in &self.spans {
            start[c as usize + 1] += 1;
        }
        for c in 0..g.k {
            start[c + 1] += start[c];
        }
        let mut next = start.clone();
        let mut rows = vec![(0u32, 0u32); self.spans.len()];
        for &(c, lo, hi) in &self.spans {
            rows[next[c as usize]] = (lo, hi);
            next[c as usize] += 1;
        }
        let mut total = 0u64;
        for c in 0..g.k {
            let col = &mut rows[start[c]..start[c + 1]];
            col.sort_unstable();
            total += union_length(col);
        }
        total
    }
}

/// Cells covered by sorted closed row spans.
fn union_length(sorted: &[(u32, u32)]) -> u64 {
    let mut total = 0u64;
    let mut cur: Option<(u32, u32)> = None;
    for &(lo, hi) in sorted {
        match cur {
            Some((clo, chi)) if lo <= chi.saturating_add(1) => cur = Some((clo, chi.max(hi))),
            _ => {
                if let Some((clo, chi)) = cur {
                    total += u64::from(chi - clo + 1);
                }
                cur = Some((lo, hi));
            }
        }
    }
    if let Some((clo, chi)) = cur {
        total += u64::from(chi - clo + 1);
    }
    total
}

#[derive(Debug, Clone, Copy)]
pub enum BoxInput<'a> {
    Rects(&'a [Rect]),
    Polyline(&'a [(f64, f64)]),
}

/// Grid cells of side `δ` meeting the input.
pub fn box_count(input: BoxInput<'_>, delta: f64) -> Result<u64> {
    match input {
        BoxInput::Rects(r) => box_count_rects(r, delta),
        BoxInput::Polyline(p) => box_count_polyline(p, delta),
    }
}

pub fn box_count_rects(rects: &[Rect], delta: f64) -> Result<u64> {
    let mut acc = CellAccumulator::new(delta)?;
    for r in rects {
        acc.add_rect(r);
    }
    Ok(acc.count())
}

pub fn box_count_polyline(points: &[(f64, f64)], delta: f64) -> Result<u64> {
    let mut acc = CellAccumulator::new(delta)?;
    if points.len() == 1 {
        acc.add_segment(points[0], points[0]);
    }
    for w in points.windows(2) {
        acc.add_segment(w[0], w[1]);
    }
    Ok(acc.count())
}

/// Half-open cell bounds `[lo, hi)`, with `hi = ∞` on the closed last cell.
fn dense_bounds(delta: f64) -> Result<Option<Vec<(f64, f64)>>> {
    let Some(grid) = Grid::new(delta)? else { return Ok(None) };
    Ok(Some(
        (0..grid.k)
            .map(|i| (i as f64 * delta, if i + 1 == grid.k { f64::INFINITY } else { (i + 1) as f64 * delta }))
            .collect(),
    ))
}

/// Brute-force oracle: tests every cell against every rectangle.
pub fn dense_grid_rects(rects: &[Rect], delta: f64) -> Result<u64> {
    let Some(cells) = dense_bounds(delta)? else { return Ok(u64::from(!rects.is_empty())) };
    let mut n = 0;
    for &(xl, xh) in &cells {
        for &(yl, yh) in &cells {
            if rects.iter().any(|r| r.x0 < xh && r.x1 >= xl && r.y0 < yh && r.y1 >= yl) {
                n += 1;
            }
        }
    }
    Ok(n)
}

/// Liang–Barsky clip of a segment to a closed box, as a parameter range.
fn clip(a: (f64, f64), b: (f64, f64), xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Option<(f64, f64)> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let mut t0 = 0.0_f64;
    let mut t1 = 1.0_f64;
    for (p, q) in [(-dx, a.0 - xmin), (dx, xmax - a.0), (-dy, a.1 - ymin), (dy, ymax - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Brute-force oracle for polylines via segment clipping per cell.
pub fn dense_grid_polyline(points: &[(f64, f64)], delta: f64) -> Result<u64> {
    let Some(cells) = dense_bounds(delta)? else { return Ok(u64::from(!points.is_empty())) };
    let segments: Vec<((f64, f64), (f64, f64))> = if points.len() == 1 {
        vec![(points[0], points[0])]
    } else {
        points.windows(2).map(|w| (w[0], w[1])).collect()
    };
    let mut n = 0;
    for &(xl, xh) in &cells {
        for &(yl, yh) in &cells {
            let inside = |p: (f64, f64)| p.0 >= xl && p.0 < xh && p.1 >= yl && p.1 < yh;
            let hit = segments.iter().any(|&(a, b)| {
                let Some((t0, t1)) = clip(a, b, xl, xh.min(1.0), yl, yh.min(1.0)) else { return false };
                let at = |t: f64| {
                    if t == 0.0 {
                        a
                    } else if t == 1.0 {
                        b
                    } else {
                        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
                    }
                };
                inside(at(t0)) || inside(at(t1)) || inside(at(0.5 * (t0 + t1)))
            });
            if hit {
                n += 1;
            }
        }
    }
    Ok(n)
}

/// Scales `ratio^k` for `k = k_min..=k_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    pub ratio: f64,
    pub k_min: usize,
    pub k_max: usize,
}

impl ScaleSchedule {
    pub fn geometric(ratio: f64, k_min: usize, k_max: usize) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) || k_min > k_max {
            return Err(Error::Config(format!("invalid scale schedule ratio {ratio}, k {k_min}..={k_max}")));
        }
        Ok(Self { ratio, k_min, k_max })
    }

    /// `1/m` on equal partitions, else `1/2`, down to the level width.
    pub fn for_tree(tree: &RealizationTree) -> Self {
        let p = tree.partition();
        let ratio = if p.is_homogeneous() { p.length(0) } else { 0.5 };
        let width = p.max_length().powi(tree.depth() as i32);
        let k_max = ((width.ln() / ratio.ln()) + 1e-9).floor().max(1.0) as usize;
        Self { ratio, k_min: 1, k_max }
    }

    pub fn scales(&self) -> Vec<f64> {
        (self.k_min..=self.k_max).map(|k| self.ratio.powi(k as i32)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPolicy {
    pub drop_coarsest: usize,
    /// Excludes scales finer than the widest level rectangle.
    pub exclude_below_level_width: bool,
    pub min_scales: usize,
}

impl Default for FitPolicy {
    fn default() -> Self {
        Self { drop_coarsest: 2, exclude_below_level_width: true, min_scales: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCountResult {
    pub scales: Vec<f64>,
    pub counts: Vec<u64>,
    /// Whether each scale entered the regression.
    pub used: Vec<bool>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub level_width: f64,
    /// Sandwich bounds at the scales `δ^n`, when requested.
    pub sandwich: Option<SandwichReport>,
}

impl BoxCountResult {
    /// `(first, last)` indices of the scales used in the fit.
    pub fn fit_range(&self) -> (usize, usize) {
        let first = self.used.iter().position(|u| *u).unwrap_or(0);
        let last = self.used.iter().rposition(|u| *u).unwrap_or(0);
        (first, last)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scale,count,used\n");
        for ((d, c), u) in self.scales.iter().zip(&self.counts).zip(&self.used) {
            s.push_str(&format!("{d},{c},{u}\n"));
        }
        s
    }
}

/// Box counts of an input over a schedule and the log-log slope.
pub fn estimate_dimension_input(
    input: BoxInput<'_>,
    level_width: f64,
    schedule: &ScaleSchedule,
    policy: &FitPolicy,
) -> Result<BoxCountResult> {
    let scales = schedule.scales();
    let counts = scales.iter().map(|d| box_count(input, *d)).collect::<Result<Vec<_>>>()?;
    let used: Vec<bool> = scales
        .iter()
        .enumerate()
        .map(|(k, d)| k >= policy.drop_coarsest && (!policy.exclude_below_level_width || *d >= level_width * (1.0 - 1e-12)))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = scales
        .iter()
        .zip(&counts)
        .zip(&used)
        .filter(|(_, u)| **u)
        .map(|((d, c), _)| (-d.ln(), (*c as f64).ln()))
        .unzip();
    if xs.len() < policy.min_scales.max(2) {
        return Err(Error::Fit(format!(
            "{} usable scales, need at least {}",
            xs.len(),
            policy.min_scales.max(2)
        )));
    }
    let fit = linear_fit(&xs, &ys).ok_or_else(|| Error::Fit("degenerate scale set".into()))?;
    Ok(BoxCountResult {
        scales,
        counts,
        used,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        level_width,
        sandwich: None,
    })
}

/// Regression on the level-`n` polyline of a realization.
pub fn estimate_dimension(tree: &RealizationTree, schedule: &ScaleSchedule, policy: &FitPolicy) -> Result<BoxCountResult> {
    let graph = graph_points(tree)?;
    let width = tree.partition().max_length().powi(tree.depth() as i32);
    estimate_dimension_input(BoxInput::Polyline(&graph.points), width, schedule, policy)
}

/// [`estimate_dimension`] plus sandwich bounds for every `n ≥ 1` whose
/// stopping set fits in the tree.
pub fn estimate_dimension_with_bounds(
    tree: &RealizationTree,
    schedule: &ScaleSchedule,
    policy: &FitPolicy,
    s: f64,
) -> Result<BoxCountResult> {
    let mut result = estimate_dimension(tree, schedule, policy)?;
    let p = tree.partition();
    let n_max = (1..).take_while(|n| required_depth(p, *n) <= tree.depth()).last();
    if let Some(n_max) = n_max {
        let (trace, counts) = cover_and_trace(tree, s, n_max)?;
        result.sandwich = Some(sandwich_check(&trace, &counts)?);
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichRow {
    pub n: usize,
    pub scale: f64,
    pub count: u64,
    pub x_n: f64,
    /// `δ^{-ns} X_n / δ`.
    pub stated_lower: f64,
    /// `δ^{-ns} X_n + 2δ^{-(n+1)}`.
    pub stated_upper: f64,
    /// `δ/(1+2δ) · δ^{-ns} X_n`.
    pub rigorous_lower: f64,
    /// `2δ^{1-s} δ^{-ns} X_n + 4δ^{-(n+1)}`.
    pub rigorous_upper: f64,
    pub stated_holds: bool,
    pub rigorous_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub s: f64,
    pub delta: f64,
    pub rows: Vec<SandwichRow>,
}

impl SandwichReport {
    pub fn stated_all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.stated_holds)
    }

    pub fn rigorous_all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.rigorous_holds)
    }
}

/// Compares Q_n-cover counts at scale `δ^n` with `X_n`.
///
/// Two pairs of bounds are evaluated. The stated pair is
/// `δ^{-ns}X_n/δ ≤ N ≤ δ^{-ns}X_n + 2δ^{-(n+1)}`. The rigorous pair follows from
/// the same counting argument with explicit constants: each rectangle meets at
/// most 2 columns and `h/δ^n + 2` rows, at least `h/δ^n` cells, each cell meets
/// fewer than `1/δ + 2` rectangles, and `δ^{n+1} < l_ω ≤ δ^n`.
pub fn sandwich_check(trace: &MartingaleTrace, counts: &[(usize, u64)]) -> Result<SandwichReport> {
    let (s, d) = (trace.s, trace.delta);
    let mut rows = Vec::with_capacity(counts.len());
    for &(n, count) in counts {
        if n == 0 || n > trace.n_max {
            return Err(Error::Contract(format!("count at n = {n} has no matching X_n (trace covers 1..={})", trace.n_max)));
        }
        let x_n = trace.x[n];
        let nf = n as f64;
        let main = d.powf(-nf * s) * x_n;
        let stated_lower = main / d;
        let stated_upper = main + 2.0 * d.powf(-(nf + 1.0));
        let rigorous_lower = d / (1.0 + 2.0 * d) * main;
        let rigorous_upper = 2.0 * d.powf(1.0 - s) * main + 4.0 * d.powf(-(nf + 1.0));
        let c = count as f64;
        // Relative slack for the rounding in X_n.
        let eps = 1e-9;
        rows.push(SandwichRow {
            n,
            scale: d.powi(n as i32),
            count,
            x_n,
            stated_lower,
            stated_upper,
            rigorous_lower,
            rigorous_upper,
            stated_holds: stated_lower <= c * (1.0 + eps) && c <= stated_upper * (1.0 + eps),
            rigorous_holds: rigorous_lower <= c * (1.0 + eps) && c <= rigorous_upper * (1.0 + eps),
        });
    }
    Ok(SandwichReport { s, delta: d, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heightlaw::HeightLaw;
    use crate::realization::sample_tree;
    use crate::symbolic::Partition;

    #[test]
    fn unit_square_and_segments() {
        assert_eq!(box_count_rects(&[Rect::unit()], 0.5).unwrap(), 4);
        assert_eq!(box_count_rects(&[Rect::unit()], 1.0).unwrap(), 1);
        assert_eq!(box_count_rects(&[Rect::unit()], 3.0).unwrap(), 1);
        assert_eq!(box_count_polyline(&[(0.0, 0.0), (1.0, 0.0)], 0.25).unwrap(), 4);
        let diag = [(0.0, 0.0), (1.0, 1.0)];
        let oracle = dense_grid_polyline(&diag, 0.25).unwrap();
        assert_eq!(oracle, 4);
        assert_eq!(box_count_polyline(&diag, 0.25).unwrap(), oracle);
        assert!(matches!(box_count_rects(&[Rect::unit()], 1e-10), Err(Error::Domain(_))));
    }

    #[test]
    fn boundary_conventions() {
        // A segment ending exactly on a grid line enters the next column.
        let pts = [(0.1, 0.1), (0.5, 0.5)];
        assert_eq!(box_count_polyline(&pts, 0.25).unwrap(), dense_grid_polyline(&pts, 0.25).unwrap());
        assert_eq!(box_count_polyline(&pts, 0.25).unwrap(), 3);
        // Touching the corner of a cell from below-left does not enter it.
        let r = Rect { x0: 0.0, x1: 0.25, y0: 0.0, y1: 0.25, rising: true };
        assert_eq!(box_count_rects(&[r], 0.25).unwrap(), 4);
        assert_eq!(dense_grid_rects(&[r], 0.25).unwrap(), 4);
        let top = Rect { x0: 0.9, x1: 1.0, y0: 0.9, y1: 1.0, rising: true };
        assert_eq!(box_count_rects(&[top], 0.25).unwrap(), 1);
    }

    #[test]
    fn polyline_matches_oracle_on_sampled_graph() {
        let p = Partition::uniform(3).unwrap();
        let law = HeightLaw::iid_uniform(3).unwrap();
        let g = graph_points(&sample_tree(&p, &law, 3, 4).unwrap()).unwrap();
        for d in [0.5, 0.3, 0.1, 1.0 / 27.0, 0.02] {
            assert_eq!(box_count_polyline(&g.points, d).unwrap(), dense_grid_polyline(&g.points, d).unwrap(), "δ = {d}");
        }
    }

    #[test]
    fn unit_square_slope_is_two() {
        let sched = ScaleSchedule::geometric(0.5, 3, 8).unwrap();
        let policy = FitPolicy { drop_coarsest: 0, exclude_below_level_width: false, min_scales: 3 };
        let r = estimate_dimension_input(BoxInput::Rects(&[Rect::unit()]), 1.0, &sched, &policy).unwrap();
        assert!((r.slope - 2.0).abs() < 0.02);
        assert_eq!(r.counts, vec![64, 256, 1024, 4096, 16384, 65536]);
    }

    #[test]
    fn okamoto_slopes() {
        let p = Partition::uniform(3).unwrap();
        for (alpha, target) in [(0.2, 1.0), (5.0 / 6.0, 1.0 + (7.0f64 / 3.0).ln() / 3f64.ln())] {
            let t = sample_tree(&p, &HeightLaw::okamoto(alpha).unwrap(), 10, 0).unwrap();
            let r = estimate_dimension(&t, &ScaleSchedule::for_tree(&t), &FitPolicy::default()).unwrap();
            assert!((r.slope - target).abs() < 0.05, "alpha {alpha}: slope {}", r.slope);
            assert_eq!(r.fit_range(), (2, 9));
        }
    }

    #[test]
    fn too_few_scales_is_a_fit_error() {
        let sched = ScaleSchedule::geometric(0.5, 1, 3).unwrap();
        let err = estimate_dimension_input(BoxInput::Rects(&[Rect::unit()]), 1.0, &sched, &FitPolicy::default());
        assert!(matches!(err, Err(Error::Fit(_))));
    }
}
