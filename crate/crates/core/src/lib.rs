//! Sparse adaptive connection (SAC) attention.
//!
//! Multi-head attention evaluated only along a learned edge set, an LSTM
//! edge predictor trained with REINFORCE, and generators for the fixed
//! topologies (full, segment, span, binary partition tree) that SAC
//! subsumes. Everything here is `no_std` + `alloc`; file formats and the
//! command line live in the `sac-cli` crate.

#![no_std]

extern crate alloc;

pub mod attention;
pub mod bench;
pub mod edgeset;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod model;
pub mod params;
pub mod predictor;
pub mod real;
pub mod rl;
pub mod selftest;
pub mod tape;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{adam_step, AdamConfig, ParamStore};
pub use real::Real;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
