//! Instrumented multiply-add counter.
//!
//! One unit is one complex multiply-add. The counter is thread-local so that
//! trials running on a worker pool do not interfere; wrap a computation in
//! [`measure`] to obtain its count.

use std::cell::Cell;

thread_local! {
    static COUNTER: Cell<u64> = const { Cell::new(0) };
}

/// Adds `n` multiply-adds to the current thread's counter.
#[inline]
pub fn add(n: u64) {
    COUNTER.with(|c| c.set(c.get().wrapping_add(n)));
}

/// Current value of this thread's counter.
pub fn current() -> u64 {
    COUNTER.with(|c| c.get())
}

/// Runs `f` and returns its result together with the multiply-adds it
/// recorded. Nested calls are fine: the outer measurement includes the inner.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let start = current();
    let out = f();
    (out, current().wrapping_sub(start))
}
