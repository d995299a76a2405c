//! Reproducible experiment driver: config parsing, grid execution,
//! gradient checking and buffer statistics.

pub mod config;
pub mod data;
pub mod gradcheck;
pub mod run;
pub mod sim;

pub use config::{CrsVariant, DatasetKind, RunConfig};
pub use data::{ensure_mnist, load_mnist, resolve_data_dir, BaseData, Benchmark, DATA_ENV};
pub use gradcheck::{run_gradcheck, GradcheckReport};
pub use run::{cmd_run, cmd_sweep, CellOutcome, CellStats, GridResults, LAMBDA_GRID};
pub use sim::{buffer_sim, crs_victim_sim, BufferSimReport, VictimSimReport};
