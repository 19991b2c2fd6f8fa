//! Scoped-thread executor: fans independent jobs out over a fixed number of
//! OS threads while returning results in index order, as the core executor
//! contract requires.

use boltzgen_core::error::Result as CoreResult;
use boltzgen_core::exec::{Executor, LossGrads};
use boltzgen_core::Tensor;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Dynamic work-stealing over `workers` threads. Indices are claimed from a
/// shared counter, so scheduling order varies between runs, but the result
/// vector is always assembled in index order — callers see no difference
/// from serial execution beyond timing.
#[derive(Debug, Clone, Copy)]
pub struct ThreadPool {
    workers: usize,
}

impl ThreadPool {
    /// `workers` is clamped to at least 1.
    pub fn new(workers: usize) -> Self {
        ThreadPool {
            workers: workers.max(1),
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    fn run<T: Send>(
        &self,
        n: usize,
        f: &(dyn Fn(usize) -> CoreResult<T> + Sync),
    ) -> Vec<CoreResult<T>> {
        if self.workers == 1 || n <= 1 {
            return (0..n).map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<CoreResult<T>>>> =
            Mutex::new((0..n).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..self.workers.min(n) {
                scope.spawn(|| loop {
                    let ix = next.fetch_add(1, Ordering::Relaxed);
                    if ix >= n {
                        break;
                    }
                    let out = f(ix);
                    slots.lock().expect("result mutex poisoned")[ix] = Some(out);
                });
            }
        });
        slots
            .into_inner()
            .expect("result mutex poisoned")
            .into_iter()
            .map(|slot| slot.expect("every job index was claimed"))
            .collect()
    }
}

impl Executor for ThreadPool {
    fn map_tensors(
        &self,
        n: usize,
        f: &(dyn Fn(usize) -> CoreResult<Tensor> + Sync),
    ) -> Vec<CoreResult<Tensor>> {
        self.run(n, f)
    }

    fn map_grads(
        &self,
        n: usize,
        f: &(dyn Fn(usize) -> CoreResult<LossGrads> + Sync),
    ) -> Vec<CoreResult<LossGrads>> {
        self.run(n, f)
    }
}
