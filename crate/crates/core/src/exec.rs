//! Minimal execution abstraction so batch work can be chunked across threads
//! by a std host without this crate depending on std.
//!
//! Implementations must return results in index order; callers rely on that
//! for deterministic assembly. Jobs must be independent of one another.

use crate::error::Result;
use crate::tape::Grads;
use crate::tensor::Tensor;
use alloc::vec::Vec;

/// Job outcome of a gradient chunk: (summed loss, summed gradients).
pub type LossGrads = (f64, Grads);

pub trait Executor: Sync {
    /// Evaluate `f(0), ..., f(n-1)` (possibly in parallel) and return the
    /// outputs in index order.
    fn map_tensors(&self, n: usize, f: &(dyn Fn(usize) -> Result<Tensor> + Sync))
        -> Vec<Result<Tensor>>;

    /// Same scheme for forward/backward chunks.
    fn map_grads(&self, n: usize, f: &(dyn Fn(usize) -> Result<LossGrads> + Sync))
        -> Vec<Result<LossGrads>>;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Default, Clone, Copy)]
pub struct Serial;

impl Executor for Serial {
    fn map_tensors(
        &self,
        n: usize,
        f: &(dyn Fn(usize) -> Result<Tensor> + Sync),
    ) -> Vec<Result<Tensor>> {
        (0..n).map(f).collect()
    }

    fn map_grads(
        &self,
        n: usize,
        f: &(dyn Fn(usize) -> Result<LossGrads> + Sync),
    ) -> Vec<Result<LossGrads>> {
        (0..n).map(f).collect()
    }
}
