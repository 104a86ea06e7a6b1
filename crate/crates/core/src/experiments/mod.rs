//! Factor grids, ensembles of runs, threshold tables and their CSV forms.

mod plan;
mod summary;
mod tables;

pub use plan::{
    minimizer_geometries, method_name, run_cells, run_plan, Cell, CellResult, ExperimentPlan, GeometrySpec, RateLevel, RateSpec,
};
pub use summary::{
    classify_run, read_trajectory_csv, summarize, summarize_results, write_figure_files, write_summary_csv, write_summary_json,
    write_trajectory_csv, RunOutcome, SummaryRow, TrajectoryRow, DIVERGENCE_FACTOR, DIVERGENCE_R2,
    DIVERGENCE_RATE,
};
pub use tables::{default_table_ks, threshold_table, ST_TABLE_KS};
