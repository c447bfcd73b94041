//! Configuration, single runs, ablation sweeps and trace output.

mod config;
mod run;
mod sweep;

pub use config::{parse_config, RunConfig};
pub use run::{build_data, oracle_at_init, run, run_with_sink, summary_line, OracleReport};
pub use sweep::{config_for, sweep, SweepAxis, SweepRow};
