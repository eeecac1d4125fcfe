//! File formats, checkpoints and the `bpcnet` command-line driver around
//! [`bpcnet_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod fsutil;
pub mod idx;
pub mod imagedir;
pub mod mnist;
pub mod pnm;

pub use error::{Error, Result};
