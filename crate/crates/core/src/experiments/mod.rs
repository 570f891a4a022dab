//! Experiment harnesses: scaling sweep with example savings, OOD holdout,
//! knowledge ablation, noise-and-refix, and their reports.

mod config;
mod harness;
mod report;
mod sweep;

pub use config::{
    load_config, parse_config, AblationConfig, DatasetConfig, ExperimentConfig, LoadedDataset, MetricSelector,
    OodConfig, ReferenceCell, RefixConfig, SeedSet, SweepConfig,
};
pub use harness::{
    run_ablation, run_ood, run_refix, trend, AblationCell, AblationResult, AblationRow, OodLevelResult, OodResult,
    OodSeedResult, RefixResult, RefixTables, Trend,
};
pub use report::{
    emit_all, emit_report, render_csv, render_json, render_scatter, scatter_svg, Report, ReportFormat,
    RESULTS_SCHEMA_VERSION,
};
pub use sweep::{
    cell_id, cell_seed, compute_savings, load_cell_table, run_sweep, CellResult, CellStatus, SavingsEntry,
    SweepResult,
};
