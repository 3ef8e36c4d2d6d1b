//! File formats, run configuration and batch commands around
//! [`distdiff_core`].

pub mod commands;
pub mod config;
pub mod io;

pub use commands::{cmd_calibrate, cmd_evaluate, cmd_gendata, cmd_sample, cmd_train, Command};
pub use config::RunConfig;
