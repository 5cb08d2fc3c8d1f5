//! File formats, dataset store, reports and the `signnav` command line on top
//! of `signnav-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod pnm;
pub mod report;
pub mod store;

pub use error::{Error, Result};
