//! Numerical toolkit for variational Calderón–Zygmund operators.
//!
//! The crate is split bottom-up:
//!
//! * [`sequence`]: exact λ-jump counts, q-variation and short variation of
//!   finite complex sequences, plus brute-force oracles.
//! * [`grid`]: uniform grids, sampled functions, zero-padded FFT convolution
//!   and test-function families.
//! * [`kernels`]: moduli of continuity, Dini norms, kernel fixtures and the
//!   size/smoothness/cancellation probes.
//! * [`operators`]: truncated operators, dyadic pieces, Littlewood–Paley and
//!   mollifier families, and the composite operators built from them.
//! * [`norm_lab`]: matrix-free operator-norm estimation and envelope fits.

// `!(x > 0.0)` rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod kernels;
pub mod norm_lab;
pub mod operators;
pub mod sequence;

pub use error::{Error, Result};
pub use rustfft::num_complex::Complex64 as C64;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
