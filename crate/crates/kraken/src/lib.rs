//! File formats, reports and the command-line driver around `kraken-core`.

pub mod checkpoint;
pub mod cli;
mod error;
pub mod formats;
pub mod report;

pub use error::{KrakenError, Result};
pub use kraken_core;
