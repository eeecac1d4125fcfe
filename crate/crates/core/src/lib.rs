//! Feature-wise (batch primary component) and batch-wise (cosine primary
//! element) attention, learning-ReLU decoders sized by the Kolmogorov-Arnold
//! superposition rule, and the metadata-conditioned encoder-decoder built from
//! them.
//!
//! Everything here is pure computation over [`Tensor`] values and runs without
//! `std`; file formats, checkpoints and the command-line driver live in the
//! `bpcnet` crate.
//!
//! Minibatches are stored feature-major: a batch of `b` samples with `m`
//! features is an `m × b` tensor, one sample per column.
//!
//! ```
//! use bpcnet_core::{Rng, Tape, Tensor};
//! use bpcnet_core::attention::{AttentionHead, KqNonlinearity, Variant};
//!
//! let mut rng = Rng::new(7);
//! let head = AttentionHead::new(Variant::BatchPc, 4, 4, KqNonlinearity::Tanh, false, &mut rng).unwrap();
//! let x = Tensor::uniform(&[4, 3], -1.0, 1.0, &mut rng);
//!
//! let mut tape = Tape::new();
//! let bound = head.bind(&mut tape);
//! let xv = tape.constant(x);
//! let y = bound.bpc_layer(&mut tape, xv).unwrap();
//! assert_eq!(tape.value(y).shape(), &[4, 3]);
//! ```
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod data;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod model;
mod rng;
pub mod tape;
mod tensor;
pub mod train;
pub mod wilcoxon;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
