//! One sampled realization `θ`: the rectangle tree to a fixed depth, the
//! level-`n` graph approximant, and its CSV/JSON/SVG export.
//!
//! Nodes carry the signed endpoint values `(u_ω, w_ω) = (F(b_ω), F(b_ω′))`.
//! Sibling endpoints are shared values, so continuity of the approximant is
//! exact rather than approximate.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heightlaw::HeightLaw;
use crate::rng::{child_key, root_key, StreamRng};
use crate::symbolic::{Partition, Word, DEFAULT_MAX_DEPTH};

/// Continuity defects above this are reported as consistency errors.
pub const CONTINUITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// `F(b_ω)`.
    pub u: f64,
    /// `F(b_ω′)`.
    pub w: f64,
    /// `ã_ω = y_{parent,(i+1)} - y_{parent,i}` from the parent's draw.
    pub signed_ratio: f64,
    /// `a_ω = |ã_ω|`.
    pub a: f64,
    /// `h_ω = Π_k a_{ω|k}`.
    pub h: f64,
    /// Stream key of this node; its draw defines the children.
    pub key: u64,
}

impl Node {
    pub fn root(seed: u64) -> Self {
        Node { u: 0.0, w: 1.0, signed_ratio: 1.0, a: 1.0, h: 1.0, key: root_key(seed) }
    }
}

/// Writes the `m` children of `parent` into `out`, using `y` as scratch for
/// the parent's ordinate draw.
#[inline]
pub fn expand(law: &HeightLaw, parent: &Node, y: &mut [f64], out: &mut [Node]) -> Result<()> {
    let m = out.len();
    let mut rng = StreamRng::new(parent.key);
    law.fill(&mut rng, y)?;
    let span = parent.w - parent.u;
    let mut prev_y = 0.0;
    let mut prev_v = parent.u;
    for (i, child) in out.iter_mut().enumerate() {
        let (next_y, next_v) = if i + 1 == m {
            (1.0, parent.w)
        } else {
            (y[i], parent.u + y[i] * span)
        };
        let signed = next_y - prev_y;
        let a = signed.abs();
        *child = Node {
            u: prev_v,
            w: next_v,
            signed_ratio: signed,
            a,
            h: parent.h * a,
            key: child_key(parent.key, i as u32),
        };
        prev_y = next_y;
        prev_v = next_v;
    }
    Ok(())
}

/// Limits checked before any allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceBudget {
    pub max_depth: usize,
    pub max_bytes: usize,
}

impl Default for ResourceBudget {
    fn default() -> Self {
        Self { max_depth: DEFAULT_MAX_DEPTH, max_bytes: 1 << 30 }
    }
}

impl ResourceBudget {
    fn check(&self, m: usize, depth: usize, keep_ancestors: bool) -> Result<()> {
        if depth > self.max_depth {
            return Err(Error::Resource(format!("depth {depth} exceeds the maximum {}", self.max_depth)));
        }
        let node = std::mem::size_of::<Node>() as f64;
        let last = (m as f64).powi(depth as i32);
        let nodes = if keep_ancestors { (0..=depth).map(|k| (m as f64).powi(k as i32)).sum() } else { last * (1.0 + 1.0 / m as f64) };
        let bytes = nodes * node;
        if bytes > self.max_bytes as f64 {
            return Err(Error::Resource(format!(
                "a depth-{depth} tree with m = {m} needs about {:.0} MiB, budget is {} MiB",
                bytes / (1 << 20) as f64,
                self.max_bytes >> 20
            )));
        }
        Ok(())
    }
}

fn next_level(law: &HeightLaw, m: usize, parents: &[Node]) -> Result<Vec<Node>> {
    let mut out = vec![Node::root(0); parents.len() * m];
    out.par_chunks_mut(m).zip(parents.par_iter()).try_for_each_init(
        || vec![0.0; m - 1],
        |y, (children, parent)| expand(law, parent, y, children),
    )?;
    Ok(out)
}

/// `b_ω` and `l_ω` for every word of length `k`, in lexicographic order.
///
/// Uses the same accumulation as [`crate::symbolic::word_base`], so the values
/// agree bit for bit.
pub fn level_geometry(p: &Partition, k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut bases = vec![0.0];
    let mut widths = vec![1.0];
    for _ in 0..k {
        let mut nb = Vec::with_capacity(bases.len() * p.m());
        let mut nw = Vec::with_capacity(bases.len() * p.m());
        for (b, w) in bases.iter().zip(&widths) {
            for i in 0..p.m() {
                nb.push(b + p.breakpoint(i) * w);
                nw.push(w * p.length(i));
            }
        }
        bases = nb;
        widths = nw;
    }
    (bases, widths)
}

/// One realization, materialized breadth-first to a fixed depth.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationTree {
    partition: Partition,
    seed: u64,
    levels: Vec<Vec<Node>>,
}

pub fn sample_tree(p: &Partition, law: &HeightLaw, depth: usize, seed: u64) -> Result<RealizationTree> {
    sample_tree_with_budget(p, law, depth, seed, &ResourceBudget::default())
}

pub fn sample_tree_with_budget(
    p: &Partition,
    law: &HeightLaw,
    depth: usize,
    seed: u64,
    budget: &ResourceBudget,
) -> Result<RealizationTree> {
    check_law(p, law)?;
    budget.check(p.m(), depth, true)?;
    let mut levels = Vec::with_capacity(depth + 1);
    levels.push(vec![Node::root(seed)]);
    for k in 0..depth {
        let next = next_level(law, p.m(), &levels[k])?;
        levels.push(next);
    }
    Ok(RealizationTree { partition: p.clone(), seed, levels })
}

fn check_law(p: &Partition, law: &HeightLaw) -> Result<()> {
    if law.m() != p.m() {
        return Err(Error::Contract(format!("law has m = {} but the partition has m = {}", law.m(), p.m())));
    }
    Ok(())
}

impl RealizationTree {
    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// Nodes of level `k` in lexicographic word order.
    pub fn level(&self, k: usize) -> &[Node] {
        &self.levels[k]
    }

    pub fn node(&self, w: &Word) -> Result<&Node> {
        if w.len() > self.depth() {
            return Err(Error::InsufficientDepth { required: w.len(), available: self.depth() });
        }
        if w.digits().iter().any(|&d| d as usize >= self.partition.m()) {
            return Err(Error::Domain(format!("word {w} has a digit outside 0..{}", self.partition.m())));
        }
        Ok(&self.levels[w.len()][w.index(self.partition.m())])
    }

    /// The same realization cut at depth `k`.
    pub fn restrict(&self, k: usize) -> Result<RealizationTree> {
        if k > self.depth() {
            return Err(Error::InsufficientDepth { required: k, available: self.depth() });
        }
        Ok(RealizationTree { partition: self.partition.clone(), seed: self.seed, levels: self.levels[..=k].to_vec() })
    }

    /// `max_{ω ∈ I_k} h_ω`.
    pub fn max_height(&self, k: usize) -> f64 {
        self.levels[k].iter().map(|n| n.h).fold(0.0, f64::max)
    }

    /// Rectangles of level `k`.
    pub fn rectangles(&self, k: usize) -> Vec<Rect> {
        let (bases, widths) = level_geometry(&self.partition, k);
        self.levels[k]
            .iter()
            .zip(bases.iter().zip(&widths))
            .map(|(n, (b, l))| Rect::from_node(*b, *l, n))
            .collect()
    }
}

/// Breadth-first stream that keeps only the current frontier.
pub struct LevelStream<'a> {
    law: &'a HeightLaw,
    m: usize,
    depth: usize,
    frontier: Vec<Node>,
}

impl<'a> LevelStream<'a> {
    pub fn new(p: &Partition, law: &'a HeightLaw, seed: u64, max_depth: usize, budget: &ResourceBudget) -> Result<Self> {
        check_law(p, law)?;
        budget.check(p.m(), max_depth, false)?;
        Ok(Self { law, m: p.m(), depth: 0, frontier: vec![Node::root(seed)] })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn frontier(&self) -> &[Node] {
        &self.frontier
    }

    /// Replaces the frontier by the next level.
    pub fn advance(&mut self) -> Result<&[Node]> {
        self.frontier = next_level(self.law, self.m, &self.frontier)?;
        self.depth += 1;
        Ok(&self.frontier)
    }
}

/// Axis-parallel rectangle of one node with the orientation of its diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    /// The graph crosses from `(x0, y0)` to `(x1, y1)` when true, else from
    /// `(x0, y1)` to `(x1, y0)`.
    pub rising: bool,
}

impl Rect {
    pub fn from_node(base: f64, width: f64, n: &Node) -> Self {
        Rect { x0: base, x1: base + width, y0: n.u.min(n.w), y1: n.u.max(n.w), rising: n.w >= n.u }
    }

    pub fn unit() -> Self {
        Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0, rising: true }
    }
}

/// The level-`n` approximant: points `(b_ω, u_ω)` for `ω ∈ I_n` and `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphApprox {
    pub points: Vec<(f64, f64)>,
}

pub fn graph_points(tree: &RealizationTree) -> Result<GraphApprox> {
    let n = tree.depth();
    let nodes = tree.level(n);
    let (bases, _) = level_geometry(tree.partition(), n);
    let mut points = Vec::with_capacity(nodes.len() + 1);
    for (j, node) in nodes.iter().enumerate() {
        if j > 0 {
            let gap = (nodes[j - 1].w - node.u).abs();
            if gap > CONTINUITY_TOL {
                return Err(Error::Consistency(format!(
                    "siblings {} and {j} at level {n} disagree by {gap:.3e}",
                    j - 1
                )));
            }
        }
        points.push((bases[j], node.u));
    }
    let last = nodes.last().expect("non-empty level").w;
    if (last - 1.0).abs() > CONTINUITY_TOL {
        return Err(Error::Consistency(format!("graph ends at height {last}, expected 1")));
    }
    points.push((1.0, 1.0));
    Ok(GraphApprox { points })
}

impl GraphApprox {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for (x, y) in &self.points {
            let _ = writeln!(s, "{x},{y}");
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.points).expect("finite coordinates serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvgOptions {
    pub width: u32,
    pub height: u32,
    pub margin: u32,
    pub stroke_width: f64,
    pub show_rectangles: bool,
}

impl Default for SvgOptions {
    fn default() -> Self {
        Self { width: 600, height: 600, margin: 20, stroke_width: 1.0, show_rectangles: true }
    }
}

/// SVG of the approximant, with rectangle outlines and diagonals when
/// `options.show_rectangles` is set. Fixed-precision coordinates make the
/// output byte-stable.
pub fn render_svg(graph: &GraphApprox, rects: &[Rect], options: &SvgOptions) -> String {
    let (w, h, mg) = (options.width as f64, options.height as f64, options.margin as f64);
    let sx = |x: f64| mg + x * (w - 2.0 * mg);
    let sy = |y: f64| h - mg - y * (h - 2.0 * mg);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        options.width, options.height, options.width, options.height
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#, options.width, options.height);
    if options.show_rectangles {
        let _ = writeln!(s, r##"<g fill="none" stroke="#4a7ebb" stroke-width="{:.3}">"##, options.stroke_width * 0.6);
        for r in rects {
            let _ = writeln!(
                s,
                r#"<rect x="{:.4}" y="{:.4}" width="{:.4}" height="{:.4}"/>"#,
                sx(r.x0),
                sy(r.y1),
                sx(r.x1) - sx(r.x0),
                sy(r.y0) - sy(r.y1)
            );
            let (ya, yb) = if r.rising { (r.y0, r.y1) } else { (r.y1, r.y0) };
            let _ = writeln!(
                s,
                r#"<line x1="{:.4}" y1="{:.4}" x2="{:.4}" y2="{:.4}" stroke-dasharray="3 2"/>"#,
                sx(r.x0),
                sy(ya),
                sx(r.x1),
                sy(yb)
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str(r##"<polyline fill="none" stroke="#202020" stroke-width=""##);
    let _ = write!(s, "{:.3}\" points=\"", options.stroke_width);
    for (k, (x, y)) in graph.points.iter().enumerate() {
        if k > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{:.4},{:.4}", sx(*x), sy(*y));
    }
    s.push_str("\"/>\n</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heightlaw::{moments, McConfig};

    fn thirds() -> Partition {
        Partition::uniform(3).unwrap()
    }

    #[test]
    fn devils_staircase_first_step() {
        let law = HeightLaw::deterministic(vec![0.5, 0.5]).unwrap();
        let t = sample_tree(&thirds(), &law, 1, 0).unwrap();
        let uw: Vec<(f64, f64)> = t.level(1).iter().map(|n| (n.u, n.w)).collect();
        assert_eq!(uw, vec![(0.0, 0.5), (0.5, 0.5), (0.5, 1.0)]);
        let h: Vec<f64> = t.level(1).iter().map(|n| n.h).collect();
        assert_eq!(h, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn perkins_heights_and_graph() {
        let law = HeightLaw::okamoto(5.0 / 6.0).unwrap();
        let t = sample_tree(&thirds(), &law, 2, 0).unwrap();
        let n = t.node(&Word::new(vec![1, 1])).unwrap();
        assert!((n.h - 4.0 / 9.0).abs() < 1e-15);
        let g = graph_points(&t.restrict(1).unwrap()).unwrap();
        let expect = [(0.0, 0.0), (1.0 / 3.0, 5.0 / 6.0), (2.0 / 3.0, 1.0 / 6.0), (1.0, 1.0)];
        for (p, e) in g.points.iter().zip(expect) {
            assert!((p.0 - e.0).abs() < 1e-15 && (p.1 - e.1).abs() < 1e-15);
        }
    }

    #[test]
    fn depth_zero_is_a_segment() {
        let law = HeightLaw::iid_uniform(3).unwrap();
        let t = sample_tree(&thirds(), &law, 0, 42).unwrap();
        assert_eq!(graph_points(&t).unwrap().points, vec![(0.0, 0.0), (1.0, 1.0)]);
        let svg = render_svg(&graph_points(&t).unwrap(), &[], &SvgOptions { show_rectangles: false, ..Default::default() });
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("20.0000,580.0000 580.0000,20.0000"));
    }

    #[test]
    fn tree_invariants() {
        let p = Partition::new(vec![0.0, 0.3, 0.45, 0.8, 1.0]).unwrap();
        let law = HeightLaw::iid_beta(4, 0.7, 1.8).unwrap();
        let t = sample_tree(&p, &law, 6, 123).unwrap();
        for k in 1..=6 {
            let level = t.level(k);
            for (j, n) in level.iter().enumerate() {
                assert!((n.h - (n.w - n.u).abs()).abs() < 1e-12);
                if j + 1 < level.len() {
                    assert_eq!(n.w, level[j + 1].u);
                }
            }
            for family in level.chunks(4) {
                let sum: f64 = family.iter().map(|n| n.signed_ratio).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        // h is the product of ratios along the path
        let w = Word::new(vec![2, 0, 3, 1, 1, 2]);
        let prod: f64 = (1..=6).map(|k| t.node(&w.restrict(k).unwrap()).unwrap().a).product();
        assert!((t.node(&w).unwrap().h - prod).abs() < 1e-15);
        let g = graph_points(&t).unwrap();
        assert_eq!(g.points.len(), 4usize.pow(6) + 1);
        assert!(g.points.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(g.points.iter().all(|(_, y)| (0.0..=1.0).contains(y)));
    }

    #[test]
    fn restriction_matches_shallower_sample() {
        let law = HeightLaw::iid_uniform(3).unwrap();
        let deep = sample_tree(&thirds(), &law, 7, 5).unwrap();
        for k in 0..=7 {
            let shallow = sample_tree(&thirds(), &law, k, 5).unwrap();
            for j in 0..=k {
                assert_eq!(deep.level(j), shallow.level(j));
            }
        }
        let mut stream = LevelStream::new(&thirds(), &law, 5, 7, &ResourceBudget::default()).unwrap();
        for k in 1..=7 {
            assert_eq!(stream.advance().unwrap(), deep.level(k));
        }
    }

    #[test]
    fn budget_refuses_before_allocating() {
        let law = HeightLaw::iid_uniform(3).unwrap();
        let tight = ResourceBudget { max_depth: 32, max_bytes: 1 << 20 };
        assert!(matches!(sample_tree_with_budget(&thirds(), &law, 12, 0, &tight), Err(Error::Resource(_))));
        assert!(matches!(sample_tree(&thirds(), &law, 33, 0), Err(Error::Resource(_))));
    }

    #[test]
    fn level_one_ratios_match_moments() {
        let p = Partition::new(vec![0.0, 0.4, 0.6, 1.0]).unwrap();
        let law = HeightLaw::mirrored_beta(2.0, 1.0).unwrap();
        let mo = moments(&law, &p, &McConfig::default()).unwrap();
        let seeds = 10_000;
        for i in 0..3 {
            let xs: Vec<f64> =
                (0..seeds).map(|s| sample_tree(&p, &law, 1, s).unwrap().level(1)[i].a).collect();
            let mean = xs.iter().sum::<f64>() / seeds as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (seeds as f64 - 1.0);
            assert!((mean - mo.mean_a[i].value).abs() < 4.0 * (var / seeds as f64).sqrt(), "index {i}");
        }
    }

    #[test]
    fn max_height_decays() {
        let law = HeightLaw::iid_uniform(3).unwrap();
        let mut stream = LevelStream::new(&thirds(), &law, 8, 14, &ResourceBudget::default()).unwrap();
        let mut prev = 1.0;
        for _ in 0..14 {
            let max = stream.advance().unwrap().iter().map(|n| n.h).fold(0.0, f64::max);
            assert!(max <= prev);
            prev = max;
        }
        assert!(prev < 0.05, "max height at depth 14 is {prev}");
    }

    #[test]
    fn svg_is_deterministic_with_three_rectangles() {
        let law = HeightLaw::iid_uniform(3).unwrap();
        let t = sample_tree(&thirds(), &law, 1, 9).unwrap();
        let g = graph_points(&t).unwrap();
        let a = render_svg(&g, &t.rectangles(1), &SvgOptions::default());
        let b = render_svg(&g, &t.rectangles(1), &SvgOptions::default());
        assert_eq!(a, b);
        assert_eq!(a.matches("<rect x=\"").count(), 3 + 1);
        assert_eq!(a.matches("<line").count(), 3);
    }

    #[test]
    fn exports() {
        let law = HeightLaw::okamoto(0.6).unwrap();
        let g = graph_points(&sample_tree(&thirds(), &law, 1, 0).unwrap()).unwrap();
        let csv = g.to_csv();
        assert!(csv.starts_with("x,y\n0,0\n"));
        assert_eq!(csv.lines().count(), 5);
        let back: Vec<(f64, f64)> = serde_json::from_str(&g.to_json()).unwrap();
        assert_eq!(back, g.points);
    }
}
