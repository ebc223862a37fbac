//! Metrics, Monte-Carlo campaigns and statistical diagnostics.

mod campaign;
mod metrics;
mod normality;
mod probes;
pub mod suites;

pub use campaign::monte_carlo;
pub use metrics::{
    nmse, para_est_err, rank_est_err, relative_error, to_db, MetricsReport, TrialMetrics,
    NMSE_DB_FLOOR,
};
pub use normality::{
    normality_check, normality_statistic, psd_sqrt, NormalityDiagnostics, NormalityMode,
    NormalityPlan, MIN_NORMALITY_SAMPLES,
};
pub use probes::{
    error_rate_probe, normalized_spread, strictly_decreasing, sv_perturbation_check,
    sv_perturbation_sides, RatePoint, PERTURBATION_SLACK,
};
