//! Training, evaluation, alpha sweeps and result export.

mod config;
mod evaluate;
mod export;
mod optim;
mod sweep;
mod train;

pub use config::{mix_seed, OptimizerKind, Regime, TrainConfig};
pub use evaluate::{evaluate, EvalSummary, ImageRecord};
pub use export::{csv_rows, export, grid_rows, read_csv, render_grid, write_csv, write_plot, CsvRow, CSV_NAME, GRID_MARGIN, PLOT_NAME};
pub use optim::Adam;
pub use sweep::{gd_summary, operator_seed, sweep_alpha, training_subset, Cell, EvalReport, Method, SweepConfig};
pub use train::{initial_model, open_log, train, StepRecord, TrainOptions, TrainOutcome};
