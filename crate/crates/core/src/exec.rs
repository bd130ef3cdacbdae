//! Data-parallel map helpers with a sequential fallback.
//!
//! Grid sweeps and Monte Carlo paths are embarrassingly parallel: each slot is
//! computed from immutable shared state and written to its own index, so the
//! parallel and the sequential path produce bit-identical output. Compiled
//! without the `parallel` feature, everything runs sequentially. With the
//! feature, [`set_sequential`] can still force the sequential path at runtime,
//! which is what the benchmark suite uses to compare both.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force the sequential code path even when built with `parallel`.
pub fn set_sequential(seq: bool) {
    FORCE_SEQUENTIAL.store(seq, Ordering::Relaxed);
}

/// Whether maps currently run sequentially.
pub fn is_sequential() -> bool {
    if cfg!(feature = "parallel") {
        FORCE_SEQUENTIAL.load(Ordering::Relaxed)
    } else {
        true
    }
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}
