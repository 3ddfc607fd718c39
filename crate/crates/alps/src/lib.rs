//! File formats, configuration, parallel runners and the command-line tool
//! built on `alps-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod format;
pub mod manifest;
pub mod runner;
pub mod scenarios;
pub mod svg;
pub mod teacher;

pub use error::{AppError, AppResult};
