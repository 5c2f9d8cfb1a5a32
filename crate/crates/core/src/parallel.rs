//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the helpers fan out over rayon's
//! global pool. Results are always collected in input order and any reduction
//! happens sequentially on the caller, so floating-point sums are identical
//! across thread counts and across the two modes.

use std::cell::Cell;

use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

thread_local! {
    static MODE: Cell<ExecMode> = const { Cell::new(default_mode()) };
}

const fn default_mode() -> ExecMode {
    if cfg!(feature = "parallel") {
        ExecMode::Parallel
    } else {
        ExecMode::Sequential
    }
}

/// Mode used by helpers called from this thread.
pub fn current_mode() -> ExecMode {
    MODE.with(|m| m.get())
}

/// Run `f` with the given execution mode on this thread. Requesting
/// `Parallel` without the `parallel` feature silently stays sequential.
pub fn with_mode<R>(mode: ExecMode, f: impl FnOnce() -> R) -> R {
    let effective = if cfg!(feature = "parallel") {
        mode
    } else {
        ExecMode::Sequential
    };
    let previous = MODE.with(|m| m.replace(effective));
    let out = f();
    MODE.with(|m| m.set(previous));
    out
}

pub fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match current_mode() {
        ExecMode::Sequential => items.iter().map(f).collect(),
        ExecMode::Parallel => par_map(items, f),
    }
}

/// Like [`map_collect`] but stops at the first error in input order.
pub fn try_map_collect<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    map_collect(items, f).into_iter().collect()
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}
