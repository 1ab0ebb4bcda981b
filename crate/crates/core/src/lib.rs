//! Class-adaptive normalization for semantic image synthesis.
//!
//! The crate provides the normalization family (batch/instance statistics,
//! class-adaptive modulation with guided sampling, its positional-encoding
//! variant and a reference spatially-adaptive block), the mask geometry those
//! layers need, a small reverse-mode differentiation tape, an analytic and
//! measured cost model, and a toy generator with a reconstruction trainer.

pub mod arch;
pub mod autodiff;
pub mod bench;
pub mod cltn;
pub mod complexity;
pub mod conv;
pub mod error;
pub mod flops;
pub mod generator;
pub mod gradcheck;
pub mod io;
pub mod mask;
pub mod netpbm;
pub mod norm;
pub mod tensor;

pub use error::{Error, Result};
