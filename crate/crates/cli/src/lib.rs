//! Sweeps, reports and the verification suite for `jsq-core`.
//!
//! * [`config`]: the TOML sweep schema.
//! * [`sweep`]: runs cells on a bounded worker pool.
//! * [`report`]: result rows, CSV/JSON and plot-data files.
//! * [`verify`]: the numbered acceptance criteria.

pub mod config;
pub mod report;
pub mod sweep;
pub mod verify;

pub use config::{load_config, parse_config, ConfigError, Format, SweepConfig};
pub use report::{emit_report, CellOutput, ReportRow};
pub use sweep::run_sweep;
pub use verify::{run_verify, Criterion, VerifyPlan};
