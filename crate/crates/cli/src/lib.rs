//! Configuration-driven experiment runner for the `l0opt` library.
//!
//! The binary exposes three subcommands:
//!
//! - `solve <config>` — run an experiment, writing `trajectory.csv`,
//!   `solution.csv`, `report.json`, and `config_echo.json`.
//! - `verify <solution> <config>` — print the optimality report for a
//!   stored solution; nonzero exit when a residual exceeds its threshold.
//! - `oracle <config>` — compare the threshold solver with exhaustive
//!   enumeration on instances of at most 20 cells.
//!
//! Everything is deterministic: given the same configuration (and seed),
//! two runs produce byte-identical outputs.

pub mod config;
pub mod runner;

pub use config::ExperimentConfig;
pub use runner::{oracle, run_experiment, verify, Overrides};
pub use runner::{EXIT_OK, EXIT_SOLVER, EXIT_USAGE, EXIT_VERIFY};
