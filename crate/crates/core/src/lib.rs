//! Prefix-tuning and parse-instructed prefixes for syntactically controlled
//! paraphrase generation.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithmic piece:
//! a reverse-mode differentiation tape over `f64` tensors, a small
//! encoder-decoder Transformer with prefix injection at every attention site,
//! the direct and indirect parse-instructed prefix mechanisms, constituency
//! tree algorithms, alignment and syntactic metrics, a synthetic paraphrase
//! grammar and the training loop. File formats and the command-line front end
//! live in the `pip-lab` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod parse;
pub mod prefix;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
