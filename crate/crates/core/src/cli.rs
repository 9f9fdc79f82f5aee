//! Command-line front end. Each command is a pure function of a [`Model`]
//! and a seed that returns a serializable report; [`run`] handles argument
//! parsing, output files, and exit codes.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    all_passed, drift_probe, estimate_dimension, estimate_dimension_input, martingale_diagnostics, required_depth,
    BoxCountResult, BoxInput, CheckKind, CheckOutcome, DiagnosticsConfig, DriftConfig, DriftProbe, FitPolicy,
    MartingaleReport, ScaleSchedule,
};
use crate::config::Model;
use crate::error::{Error, Result};
use crate::heightlaw::{moments, validate, LawFlag, McConfig, RatioMoments};
use crate::realization::{graph_points, render_svg, sample_tree_with_budget, GraphApprox, Rect, RealizationTree, ResourceBudget};
use crate::rng::substream;
use crate::serde_ext::extended_f64;
use crate::symbolic::Partition;
use crate::theory::{compute_phi, dimension_sensitivity, solve_dimension, DiffReport, DimensionReport, SensitivityReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;
pub const EXIT_FIT: i32 = 5;
pub const EXIT_INSUFFICIENT_DEPTH: i32 = 6;
/// Contract or consistency failures inside the library.
pub const EXIT_INTERNAL: i32 = 70;

/// Substream indices under the master seed.
const STREAM_MOMENTS: u64 = 0;
const STREAM_REALIZATION: u64 = 1;
const STREAM_DIAGNOSE: u64 = 2;
const STREAM_DRIFT: u64 = 3;

/// Standard errors on each side of the Monte Carlo dimension interval.
pub const SENSITIVITY_K: f64 = 3.0;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) => EXIT_CONFIG,
        Error::Solver(_) => EXIT_SOLVER,
        Error::Resource(_) => EXIT_RESOURCE,
        Error::Fit(_) => EXIT_FIT,
        Error::InsufficientDepth { .. } => EXIT_INSUFFICIENT_DEPTH,
        Error::Contract(_) | Error::Consistency(_) => EXIT_INTERNAL,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Model file (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Realization depth; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    pub depth: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Solve the dimension equation.
    Dim,
    /// Compute φ and the differentiability class.
    Phi,
    /// Sample a realization and write its graph approximation.
    Simulate {
        /// Also write an SVG drawing here.
        #[arg(long, value_name = "PATH")]
        svg: Option<PathBuf>,
    },
    /// Box-count a realization and fit the log-log slope.
    Boxcount {
        /// Count the unit square instead of a realization.
        #[arg(long)]
        self_test: bool,
    },
    /// Martingale, sandwich, and drift diagnostics.
    Diagnose {
        /// Added to the solved dimension before the martingale checks.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        s_offset: f64,
    },
    /// Write an SVG drawing of a realization.
    Render,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "selfaffine", version, about = "Random box-like self-affine functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimOutput {
    pub law: String,
    pub partition: Partition,
    pub seed: u64,
    pub monte_carlo: bool,
    pub dimension: DimensionReport,
    pub sensitivity: Option<SensitivityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiOutput {
    pub law: String,
    pub partition: Partition,
    pub seed: u64,
    pub monte_carlo: bool,
    pub report: DiffReport,
    pub flags: Vec<LawFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxcountOutput {
    pub law: String,
    pub seed: u64,
    pub depth: usize,
    /// Solved dimension; absent for the self-test.
    pub theoretical_s: Option<f64>,
    pub result: BoxCountResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOutput {
    pub law: String,
    pub seed: u64,
    pub s: f64,
    pub s_offset: f64,
    #[serde(with = "extended_f64")]
    pub phi: f64,
    pub martingale: MartingaleReport,
    pub drift: DriftProbe,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

fn model_moments(model: &Model, seed: u64) -> Result<RatioMoments> {
    let mc = McConfig { samples: model.config.mc_samples, seed: substream(seed, STREAM_MOMENTS) };
    moments(&model.law, model.partition(), &mc)
}

pub fn cmd_dim(model: &Model, seed: u64) -> Result<DimOutput> {
    let p = model.partition();
    let mo = model_moments(model, seed)?;
    let mut dimension = solve_dimension(&mo, p, model.config.tolerance)?;
    let sensitivity = if mo.is_monte_carlo() {
        let s = dimension_sensitivity(&mo, p, SENSITIVITY_K, model.config.tolerance)?;
        dimension.ci = Some(s.interval());
        dimension.warnings.extend(s.warnings.iter().cloned());
        Some(s)
    } else {
        None
    };
    Ok(DimOutput {
        law: model.law.describe(),
        partition: p.clone(),
        seed,
        monte_carlo: mo.is_monte_carlo(),
        dimension,
        sensitivity,
    })
}

pub fn cmd_phi(model: &Model, seed: u64) -> Result<PhiOutput> {
    let p = model.partition();
    let mo = model_moments(model, seed)?;
    let report = compute_phi(&mo, p)?;
    Ok(PhiOutput {
        law: model.law.describe(),
        partition: p.clone(),
        seed,
        monte_carlo: mo.is_monte_carlo(),
        report,
        flags: validate(&model.law, p).flags,
    })
}

fn realize(model: &Model, seed: u64, depth: usize) -> Result<RealizationTree> {
    sample_tree_with_budget(
        model.partition(),
        &model.law,
        depth,
        substream(seed, STREAM_REALIZATION),
        &ResourceBudget::default(),
    )
}

/// Graph points and the last-level rectangles of one realization.
pub fn cmd_simulate(model: &Model, seed: u64, depth: usize) -> Result<(GraphApprox, Vec<Rect>)> {
    let tree = realize(model, seed, depth)?;
    let rects = if model.config.render.show_rectangles { tree.rectangles(depth) } else { Vec::new() };
    Ok((graph_points(&tree)?, rects))
}

pub fn cmd_render(model: &Model, seed: u64, depth: usize) -> Result<String> {
    let (graph, rects) = cmd_simulate(model, seed, depth)?;
    Ok(render_svg(&graph, &rects, &model.config.render.options()))
}

/// Scales for a tree, honouring a configured ratio.
fn schedule(model: &Model, tree: &RealizationTree) -> Result<ScaleSchedule> {
    let auto = ScaleSchedule::for_tree(tree);
    match model.config.fit.ratio {
        None => Ok(auto),
        Some(r) => {
            let width = model.partition().max_length().powi(tree.depth() as i32);
            let k_max = ((width.ln() / r.ln()) + 1e-9).floor().max(1.0) as usize;
            ScaleSchedule::geometric(r, 1, k_max)
        }
    }
}

pub fn cmd_boxcount(model: &Model, seed: u64, depth: usize) -> Result<BoxcountOutput> {
    let tree = realize(model, seed, depth)?;
    let sched = schedule(model, &tree)?;
    let result = estimate_dimension(&tree, &sched, &model.config.fit.policy())?;
    let theoretical_s = Some(cmd_dim(model, seed)?.dimension.s);
    Ok(BoxcountOutput { law: model.law.describe(), seed, depth, theoretical_s, result })
}

/// Box counts of the unit square on dyadic scales; the slope is 2.
pub fn cmd_boxcount_self_test(depth: usize) -> Result<BoxcountOutput> {
    let sched = ScaleSchedule::geometric(0.5, 1, depth.max(3))?;
    let policy = FitPolicy { drop_coarsest: 0, exclude_below_level_width: false, min_scales: 3 };
    let result = estimate_dimension_input(BoxInput::Rects(&[Rect::unit()]), 1.0, &sched, &policy)?;
    Ok(BoxcountOutput { law: "unit-square".into(), seed: 0, depth, theoretical_s: Some(2.0), result })
}

pub fn cmd_diagnose(model: &Model, seed: u64, depth: usize, s_offset: f64) -> Result<DiagnoseOutput> {
    let p = model.partition();
    let d = &model.config.diagnose;
    let required = required_depth(p, d.n_max).max(d.n_max);
    if required > depth {
        return Err(Error::InsufficientDepth { required, available: depth });
    }
    let mo = model_moments(model, seed)?;
    let s0 = solve_dimension(&mo, p, model.config.tolerance)?.s;
    let s = s0 + s_offset;
    let cfg = DiagnosticsConfig {
        n_max: d.n_max,
        n_trees: d.trees,
        seed: substream(seed, STREAM_DIAGNOSE),
        band_k: d.band_k,
        decay_slack: d.decay_slack,
        sandwich_trees: d.sandwich_trees,
    };
    let martingale = martingale_diagnostics(&model.law, p, &mo, s, &cfg)?;
    let drift = drift_probe(
        p,
        &model.law,
        &DriftConfig { paths: d.drift_paths, n: d.drift_steps, seed: substream(seed, STREAM_DRIFT) },
    )?;
    let phi_report = compute_phi(&mo, p)?;
    let phi = phi_report.phi;

    let mut checks = martingale.checks.clone();
    if phi == f64::NEG_INFINITY {
        checks.push(CheckOutcome::new(
            "drift_mean",
            CheckKind::Exact,
            drift.mean_drift == f64::NEG_INFINITY,
            format!("φ = -inf, mean S_n/n = {}", drift.mean_drift),
        ));
    } else {
        let se = drift.std_error.hypot(phi_report.std_error);
        let band = d.band_k * se + 1e-9;
        let dev = (drift.mean_drift - phi).abs();
        checks.push(CheckOutcome::new(
            "drift_mean",
            CheckKind::Statistical,
            dev <= band,
            format!("mean S_n/n = {:.6} ± {:.2e}, φ = {phi:.6}, band {band:.3e}", drift.mean_drift, drift.std_error),
        ));
    }
    for (i, (f, se)) in drift.digit_frequencies.iter().zip(&drift.digit_std_errors).enumerate() {
        let band = d.band_k * se + 1e-12;
        checks.push(CheckOutcome::new(
            format!("digit_frequency_{i}"),
            CheckKind::Statistical,
            (f - p.length(i)).abs() <= band,
            format!("frequency {f:.6} ± {se:.2e}, length {:.6}", p.length(i)),
        ));
    }
    let passed = all_passed(&checks);
    Ok(DiagnoseOutput { law: model.law.describe(), seed, s, s_offset, phi, martingale, drift, checks, passed })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Contract(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn csv_string(rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r).map_err(|e| Error::Contract(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Contract(format!("csv: {e}")))
}

fn kv(rows: Vec<(&str, String)>) -> Result<String> {
    let mut all = vec![vec!["key".to_string(), "value".to_string()]];
    all.extend(rows.into_iter().map(|(k, v)| vec![k.to_string(), v]));
    csv_string(&all)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn dim_csv(o: &DimOutput) -> Result<String> {
    let d = &o.dimension;
    kv(vec![
        ("s", d.s.to_string()),
        ("residual", d.residual.to_string()),
        ("bracket_lo", d.bracket.0.to_string()),
        ("bracket_hi", d.bracket.1.to_string()),
        ("iterations", d.iterations.to_string()),
        ("ci_lo", opt(d.ci.map(|c| c.0))),
        ("ci_hi", opt(d.ci.map(|c| c.1))),
    ])
}

fn phi_csv(o: &PhiOutput) -> Result<String> {
    let r = &o.report;
    kv(vec![
        ("phi", r.phi.to_string()),
        ("classification", r.classification.as_str().to_string()),
        ("std_error", r.std_error.to_string()),
        ("ci_lo", opt(r.ci.map(|c| c.0))),
        ("ci_hi", opt(r.ci.map(|c| c.1))),
    ])
}

fn checks_csv(checks: &[CheckOutcome]) -> Result<String> {
    let mut rows = vec![vec!["name".into(), "kind".into(), "passed".into(), "detail".into()]];
    for c in checks {
        let kind = match c.kind {
            CheckKind::Exact => "exact",
            CheckKind::Statistical => "statistical",
            CheckKind::Informational => "informational",
        };
        rows.push(vec![c.name.clone(), kind.into(), c.passed.to_string(), c.detail.clone()]);
    }
    csv_string(&rows)
}

fn write_to(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Resource(format!("cannot write {}: {e}", p.display()))),
        None => stdout.write_all(text.as_bytes()).map_err(|e| Error::Resource(format!("cannot write output: {e}"))),
    }
}

fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let c = &cli.common;
    if let Command::Boxcount { self_test: true } = cli.command {
        let o = cmd_boxcount_self_test(c.depth.unwrap_or(10))?;
        let text = match c.format {
            Format::Json => to_json(&o)?,
            Format::Csv => o.result.to_csv(),
        };
        write_to(c.out.as_deref(), &text, stdout)?;
        return Ok(EXIT_OK);
    }
    let path = c.config.as_deref().ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let model = Model::load(path)?;
    let seed = match c.seed.or(model.config.seed) {
        Some(s) => s,
        None => {
            let s: u64 = rand::random();
            let _ = writeln!(stderr, "seed: {s}");
            s
        }
    };
    let depth = c.depth.unwrap_or(model.config.depth);
    let out = c.out.as_deref();
    match &cli.command {
        Command::Dim => {
            let o = cmd_dim(&model, seed)?;
            let text = if c.format == Format::Json { to_json(&o)? } else { dim_csv(&o)? };
            write_to(out, &text, stdout)?;
        }
        Command::Phi => {
            let o = cmd_phi(&model, seed)?;
            let text = if c.format == Format::Json { to_json(&o)? } else { phi_csv(&o)? };
            write_to(out, &text, stdout)?;
        }
        Command::Simulate { svg } => {
            let (graph, rects) = cmd_simulate(&model, seed, depth)?;
            let text = if c.format == Format::Json { graph.to_json() } else { graph.to_csv() };
            let points_path = out.map(Path::to_path_buf).or(model.config.output.points.as_ref().map(PathBuf::from));
            write_to(points_path.as_deref(), &text, stdout)?;
            let svg_path = svg.clone().or(model.config.output.svg.as_ref().map(PathBuf::from));
            if let Some(sp) = svg_path {
                let drawing = render_svg(&graph, &rects, &model.config.render.options());
                write_to(Some(&sp), &drawing, stdout)?;
            }
        }
        Command::Render => {
            let drawing = cmd_render(&model, seed, depth)?;
            let svg_path = out.map(Path::to_path_buf).or(model.config.output.svg.as_ref().map(PathBuf::from));
            write_to(svg_path.as_deref(), &drawing, stdout)?;
        }
        Command::Boxcount { .. } => {
            let o = cmd_boxcount(&model, seed, depth)?;
            let text = match c.format {
                Format::Json => to_json(&o)?,
                Format::Csv => {
                    let _ = writeln!(
                        stderr,
                        "slope {:.6} (r² {:.6}), theoretical s {}",
                        o.result.slope,
                        o.result.r_squared,
                        opt(o.theoretical_s)
                    );
                    o.result.to_csv()
                }
            };
            write_to(out, &text, stdout)?;
        }
        Command::Diagnose { s_offset } => {
            let o = cmd_diagnose(&model, seed, depth, *s_offset)?;
            let text = if c.format == Format::Json { to_json(&o)? } else { checks_csv(&o.checks)? };
            write_to(out, &text, stdout)?;
            if !o.passed {
                for ch in o.checks.iter().filter(|ch| !ch.passed && ch.kind != CheckKind::Informational) {
                    let _ = writeln!(stderr, "check failed: {} ({})", ch.name, ch.detail);
                }
                return Ok(EXIT_CHECK_FAILED);
            }
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs one command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = stderr.write_all(rendered.as_bytes());
            } else {
                let _ = stdout.write_all(rendered.as_bytes());
            }
            return e.exit_code();
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}
