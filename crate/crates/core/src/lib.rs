//! Self-consistency-projected diffusion reconstruction for simultaneous
//! multi-slice MRI.
//!
//! The crate covers the whole retrospective pipeline: synthetic phantoms
//! and SMS sampling, SPIRiT and slice-GRAPPA calibration, the composite
//! self-consistency operator `H`, the iterative SGSP reconstruction, and a
//! score-based sampler whose noise and score are projected onto the
//! self-consistent subspace.

// NaN-rejecting checks read `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cg;
pub mod cli;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod operators;
pub mod phantom;
pub mod plot;
pub mod sampling;
pub mod score;
pub mod sgsp;
pub mod tensor;

pub use error::{Error, FormatError, Result};
pub use tensor::{inner, ComplexTensor4, Dims, Domain};
