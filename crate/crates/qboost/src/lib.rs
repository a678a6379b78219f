//! File formats, configuration, pipeline orchestration and the CLI on top
//! of `qboost-core`.

pub mod cli;
pub mod config;
pub mod io;
pub mod manifest;
pub mod pipeline;
