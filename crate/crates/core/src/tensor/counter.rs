//! Instrumented multiply-accumulate counting.
//!
//! While a counting scope is active the conv and matmul kernels switch to
//! plain loop implementations that tick once per multiply-accumulate. This is
//! slow and only meant for tiny configurations that validate the analytic
//! MACs accounting in [`crate::profiler`].

use std::cell::Cell;

thread_local! {
    static MACS: Cell<Option<u64>> = const { Cell::new(None) };
}

/// Runs `f` with MAC counting enabled and returns its result together with the
/// number of multiply-accumulates executed on this thread.
pub fn count_macs<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let previous = MACS.with(|c| c.replace(Some(0)));
    let out = f();
    let counted = MACS.with(|c| c.replace(previous)).unwrap_or(0);
    if let Some(outer) = previous {
        MACS.with(|c| c.set(Some(outer + counted)));
    }
    (out, counted)
}

#[inline]
pub(crate) fn active() -> bool {
    MACS.with(|c| c.get().is_some())
}

#[inline]
pub(crate) fn tick() {
    MACS.with(|c| {
        if let Some(n) = c.get() {
            c.set(Some(n + 1));
        }
    });
}
