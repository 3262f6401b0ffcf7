//! Static block pruning and dynamic token pruning for Vision Transformers,
//! a bit-reproducible reference inference engine for the pruned model, and a
//! cycle-level simulator of a multi-level-parallel block-matmul accelerator.
//!
//! Module map:
//!
//! * [`blockmat`] block-partitioned dense / sparse matrices and the reference
//!   block matmul kernels (canonical accumulation order).
//! * [`container`] the `VSBM` binary tensor container.
//! * [`staticprune`] score-driven top-k block and neuron masks, the alternate
//!   head pattern, sparsity schedule and loss terms.
//! * [`tokenprune`] class-attention importance scores and token fusion.
//! * [`vitref`] the reference encoder stack.
//! * [`accelsim`] the accelerator simulator (MPCA kernels, EM, TDHM).
//! * [`perfmodel`] closed-form complexity, cycle and resource models.

pub mod accelsim;
pub mod blockmat;
pub mod container;
mod error;
pub mod perfmodel;
pub mod staticprune;
pub mod tokenprune;
pub mod vitref;

pub use error::{Error, Result};

/// `ceil(rate * n)` with a small tolerance so that products such as
/// `0.7 * 10` that land a hair above an integer do not round up.
///
/// Returns at least 1 for any positive `n`.
pub fn keep_count(rate: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let x = rate * n as f64;
    let k = (x - 1e-9 * x.abs().max(1.0)).ceil();
    (k.max(1.0) as usize).min(n)
}

pub(crate) fn div_ceil(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}
