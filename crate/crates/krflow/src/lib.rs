//! Driver for flow simulations: config parsing, single runs, sweeps and box checks.

pub mod boxcheck;
pub mod config;
pub mod error;
pub mod run;
pub mod sweep;

pub use error::HarnessError;
