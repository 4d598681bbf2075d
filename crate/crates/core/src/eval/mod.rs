//! Benchmark suites, greedy evaluation and reports.

mod report;
mod run;
mod suite;

pub use report::{
    aggregate, cases_csv, compare_modes, plot_data, ratio, Report, ReportRow, CASES_HEADER,
    COMPARE_HEADER, PLOT_HEADER, REPORT_HEADER,
};
pub use run::{evaluate, evaluate_case, EpisodeMetrics};
pub use suite::{
    generate_suite, step_limit_for, SkippedCell, Suite, SuiteCase, SuiteSpec, MANIFEST,
};
