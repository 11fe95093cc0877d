//! File formats, experiment harness and command-line driver around
//! `prepstudy-core`.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod formats;
pub mod harness;
pub mod io;

pub use error::{Error, Result};
