//! Empirical checks of the theory: stopping sets, the `X_n`/`Y_n`
//! martingales, grid box counting, and the differentiability drift probe.

pub mod boxcount;
pub mod drift;
pub mod martingale;
pub mod stats;
pub mod stopping;

use serde::{Deserialize, Serialize};

pub use boxcount::{
    box_count, box_count_polyline, box_count_rects, dense_grid_polyline, dense_grid_rects, estimate_dimension,
    estimate_dimension_input, estimate_dimension_with_bounds, sandwich_check, BoxCountResult, BoxInput, CellAccumulator, FitPolicy, SandwichReport, SandwichRow, ScaleSchedule,
};
pub use drift::{drift_along, drift_probe, DriftConfig, DriftProbe};
pub use martingale::{
    cover_and_trace, cover_and_trace_lazy, martingale_diagnostics, martingale_trace, martingale_trace_lazy, DecayFit,
    DiagnosticsConfig, LevelStats, MartingaleReport, MartingaleTrace, SandwichSummary,
};
pub use stopping::{
    build_stopping_set, build_stopping_set_with_budget, partition_identity_check, required_depth, StoppingSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Holds exactly on every realization, up to floating point.
    Exact,
    /// Holds within a standard-error band.
    Statistical,
    /// Reported, not part of the pass/fail verdict.
    Informational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub kind: CheckKind,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn new(name: impl Into<String>, kind: CheckKind, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), kind, passed, detail: detail.into() }
    }
}

/// True when every non-informational check passed.
pub fn all_passed(checks: &[CheckOutcome]) -> bool {
    checks.iter().filter(|c| c.kind != CheckKind::Informational).all(|c| c.passed)
}
