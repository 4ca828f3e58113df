//! Experiment driver for the 3D sound source localization model and the
//! classical multilateration baselines.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod report;

pub use config::{ExperimentConfig, Method, Seeds, SolverSettings, CONFIG_FORMAT_VERSION, MIN_MULTILAT_MICS, OUTPUT_DIR_ENV};
pub use dataset::{generate_recording, generate_split, load_or_generate, scene_seed, write_splits, Split};
pub use error::{HarnessError, HarnessResult};
pub use experiment::{
    evaluate_method, read_records, rerun_manifest, run_experiment, scene_inputs, train_model, write_records,
    ExperimentOutcome, Manifest, ModelSource, RunOptions, TargetKind, TrialRecord, CHECKPOINT_FILE, MANIFEST_FILE,
    RECORDS_FILE, REPORT_CSV_FILE, REPORT_JSONL_FILE, RESULTS_FORMAT_VERSION, TRAIN_LOG_FILE,
};
pub use metrics::{acc_from_errors, bootstrap_std, compute_acc_at, compute_mae, error_cm, mean};
pub use report::{
    build_report, emit_results, format_sig, group_errors, parse_results, read_report, round_sig, write_report, Format,
    MetricsReport, ReportRow, TargetGroup, COLUMNS,
};
