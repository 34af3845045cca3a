//! Tensor algebra, low-rank decomposition engines, and tensor-augmented
//! attention kernels.
//!
//! The crate is `no_std` (with `alloc`) and pure: every public operation is a
//! function over immutable values, so everything here is freely shareable
//! across threads. IO, file formats, and the CLI live in the companion
//! `tea-cli` crate.
//!
//! Indexing note: documentation follows the 1-based mode notation `m ∈ [M]`
//! common in the tensor literature; the API itself is 0-based, so "mode 1" in
//! a formula is `mode = 0` in code.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod attention;
pub mod autodiff;
pub mod decomp;
pub mod error;
pub mod flops;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::TensorError;
pub use tensor::{DenseTensor, Matrix};
