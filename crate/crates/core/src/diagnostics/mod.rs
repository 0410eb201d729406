//! Trajectory logs, rate fits, Monte-Carlo aggregation and audits.

pub mod aggregate;
pub mod audit;
pub mod log;
pub mod rates;

pub use aggregate::{mc_aggregate, McSummary, MetricSeries, MIN_SEEDS};
pub use audit::{
    audit_inequalities, audit_lemma_recursion, audit_points, summability_from_records, summability_report,
    InequalityAudit, LemmaAudit, LemmaCheck, SummabilityReport, AUDIT_REL_TOL, SE_SLACK,
};
pub use log::{check_records, read_records, write_records, LogGrid, LogMeta, Record, TrajectoryLog, COLUMNS, DENSE_BELOW};
pub use rates::{fit_power_law, fit_rate, fit_records, fit_rate_until_zero, Metric, RateEstimate, RateOutcome, MIN_FIT_POINTS};
