//! JSON model files.
//!
//! ```json
//! {
//!   "partition": [0, 0.4, 0.6, 1],
//!   "heightlaw": { "family": "mirrored_beta", "alpha": 2, "beta": 1 },
//!   "seed": 7,
//!   "depth": 12
//! }
//! ```
//!
//! Built-in families and their parameters:
//!
//! | family          | parameters            | example                                                   |
//! |-----------------|-----------------------|-----------------------------------------------------------|
//! | `deterministic` | `ordinates` (m - 1)   | `{"family": "deterministic", "ordinates": [0.7, 0.2]}`   |
//! | `okamoto`       | `alpha` in (0, 1)     | `{"family": "okamoto", "alpha": 0.8333333333333334}`     |
//! | `iid_uniform`   | none                  | `{"family": "iid_uniform"}`                               |
//! | `iid_beta`      | `alpha`, `beta` > 0   | `{"family": "iid_beta", "alpha": 2, "beta": 3}`          |
//! | `mirrored_beta` | `alpha`, `beta` > 0   | `{"family": "mirrored_beta", "alpha": 2, "beta": 1}`     |
//!
//! `okamoto` and `mirrored_beta` require three intervals. Every error names
//! the line of the offending entry.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{DiagnosticsConfig, DriftConfig, FitPolicy};
use crate::error::{Error, Result};
use crate::heightlaw::{validate, HeightLaw, McConfig};
use crate::realization::SvgOptions;
use crate::symbolic::Partition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    Deterministic { ordinates: Vec<f64> },
    Okamoto { alpha: f64 },
    IidUniform,
    IidBeta { alpha: f64, beta: f64 },
    MirroredBeta { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub drop_coarsest: usize,
    pub exclude_below_level_width: bool,
    pub min_scales: usize,
    /// Ratio between successive scales; chosen from the partition when absent.
    pub ratio: Option<f64>,
}

impl Default for FitSettings {
    fn default() -> Self {
        let p = FitPolicy::default();
        Self {
            drop_coarsest: p.drop_coarsest,
            exclude_below_level_width: p.exclude_below_level_width,
            min_scales: p.min_scales,
            ratio: None,
        }
    }
}

impl FitSettings {
    pub fn policy(&self) -> FitPolicy {
        FitPolicy {
            drop_coarsest: self.drop_coarsest,
            exclude_below_level_width: self.exclude_below_level_width,
            min_scales: self.min_scales,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSettings {
    pub n_max: usize,
    pub trees: usize,
    pub band_k: f64,
    pub decay_slack: f64,
    pub sandwich_trees: usize,
    pub drift_paths: usize,
    pub drift_steps: usize,
}

impl Default for DiagnoseSettings {
    fn default() -> Self {
        let d = DiagnosticsConfig::default();
        let r = DriftConfig::default();
        Self {
            n_max: d.n_max,
            trees: d.n_trees,
            band_k: d.band_k,
            decay_slack: d.decay_slack,
            sandwich_trees: d.sandwich_trees,
            drift_paths: r.paths,
            drift_steps: r.n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub width: u32,
    pub height: u32,
    pub margin: u32,
    pub stroke_width: f64,
    pub show_rectangles: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        let o = SvgOptions::default();
        Self { width: o.width, height: o.height, margin: o.margin, stroke_width: o.stroke_width, show_rectangles: o.show_rectangles }
    }
}

impl RenderSettings {
    pub fn options(&self) -> SvgOptions {
        SvgOptions {
            width: self.width,
            height: self.height,
            margin: self.margin,
            stroke_width: self.stroke_width,
            show_rectangles: self.show_rectangles,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub points: Option<String>,
    pub svg: Option<String>,
}

pub const DEFAULT_DEPTH: usize = 10;
pub const DEFAULT_TOLERANCE: f64 = 1e-12;

fn default_depth() -> usize {
    DEFAULT_DEPTH
}

fn default_mc_samples() -> usize {
    McConfig::default().samples
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub partition: Partition,
    pub heightlaw: LawSpec,
    /// Master seed; drawn from entropy by the caller when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub fit: FitSettings,
    #[serde(default)]
    pub diagnose: DiagnoseSettings,
    #[serde(default)]
    pub render: RenderSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

/// A parsed model with its law built and validated.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub law: HeightLaw,
}

/// 1-based line of the first occurrence of `"key"`, or 1.
fn key_line(text: &str, key: &str) -> usize {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map_or(1, |i| i + 1)
}

fn at_line(text: &str, key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {}: {msg}", key_line(text, key)))
}

fn build_law(spec: &LawSpec, m: usize) -> Result<HeightLaw> {
    match spec {
        LawSpec::Deterministic { ordinates } => HeightLaw::deterministic(ordinates.clone()),
        LawSpec::Okamoto { alpha } => HeightLaw::okamoto(*alpha),
        LawSpec::IidUniform => HeightLaw::iid_uniform(m),
        LawSpec::IidBeta { alpha, beta } => HeightLaw::iid_beta(m, *alpha, *beta),
        LawSpec::MirroredBeta { alpha, beta } => HeightLaw::mirrored_beta(*alpha, *beta),
    }
}

impl Model {
    pub fn parse(text: &str) -> Result<Model> {
        let config: ModelConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let suffix = format!(" at line {} column {}", e.line(), e.column());
            let msg = msg.strip_suffix(&suffix).unwrap_or(&msg);
            Error::Config(format!("line {}, column {}: {msg}", e.line(), e.column()))
        })?;
        let m = config.partition.m();
        let law = build_law(&config.heightlaw, m).map_err(|e| at_line(text, "heightlaw", e))?;
        if law.m() != m {
            return Err(at_line(
                text,
                "heightlaw",
                format!("law {} has {} intervals, the partition has {m}", law.describe(), law.m()),
            ));
        }
        let report = validate(&law, &config.partition);
        if !report.accepted {
            return Err(at_line(text, "heightlaw", format!("law {} rejected: {:?}", law.describe(), report.rejections)));
        }
        if !(config.tolerance > 0.0 && config.tolerance < 1.0) {
            return Err(at_line(text, "tolerance", format!("tolerance must lie in (0, 1), got {}", config.tolerance)));
        }
        if let Some(r) = config.fit.ratio {
            if !(r > 0.0 && r < 1.0) {
                return Err(at_line(text, "ratio", format!("scale ratio must lie in (0, 1), got {r}")));
            }
        }
        Ok(Model { config, law })
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Model::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.config.partition
    }
}
