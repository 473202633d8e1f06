//! Experiment orchestration: configured runs over generated or stored
//! datasets, metrics, timing and report files.

pub mod bench;
pub mod experiment;
pub mod metrics;
pub mod oracle;
pub mod report;

pub use bench::{bench_timing, BenchConfig, BenchRow};
pub use experiment::{
    missing_csi_fractions, run_ewmmse, run_experiment, run_heuristic, train_model, ExperimentConfig, ExperimentReport,
    ReportMeta, ReportRow, SolverRun, SolverSpec,
};
pub use metrics::{
    metric_avg_sum_rate, metric_normalized, metric_qos_violation, metric_qos_violation_per_instance, summarize_timings,
    TimingSummary,
};
pub use oracle::{brute_force_oracle, OracleResult, MAX_ORACLE_CELLS};
pub use report::{emit_report, read_csv_rows, render_svg, write_csv, write_json, ReportFormat};
