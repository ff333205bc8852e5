//! Command-line front end for normforge: config parsing, training runs,
//! learning-rate sweeps and the acceptance checks.

pub mod config;
pub mod sweep;
pub mod train;
pub mod verify;
