//! Multiply-add accounting for the attention path.
//!
//! The counter is incremented by the forward kernels with the actual loop
//! extents they execute; [`attention_mult_adds`] is the closed form the
//! counts are checked against. Softmax exponentials and activations are not
//! multiply-adds and are not counted.

use alloc::vec::Vec;

#[derive(Debug, Clone, Default)]
pub struct FlopCounter {
    pub mult_adds: u64,
    /// Shapes of every attention score matrix formed while the counter was
    /// attached, in evaluation order.
    pub score_shapes: Vec<(usize, usize)>,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, n: u64) {
        self.mult_adds += n;
    }

    pub fn record_score_shape(&mut self, rows: usize, cols: usize) {
        self.score_shapes.push((rows, cols));
    }
}

/// Closed-form multiply-add count of one multi-head attention forward on a
/// query sequence of length `lq` and key/value sequence of length `lk` with
/// feature modes `a × b`, head dimension `d`, and `h` heads:
/// Q projection, K and V projections, score matrix, attention-weighted sum,
/// output projection, and the head-weight combination.
pub fn attention_mult_adds(lq: usize, lk: usize, a: usize, b: usize, d: usize, h: usize) -> u64 {
    let (lq, lk, a, b, d, h) = (lq as u64, lk as u64, a as u64, b as u64, d as u64, h as u64);
    let ab = a * b;
    h * (lq * ab * d + 2 * lk * ab * d + 2 * lq * lk * d + lq * d * ab + lq * ab)
}
