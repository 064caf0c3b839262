//! Data-parallel helpers.
//!
//! With the `parallel` feature the maps run on the rayon pool; without it, or
//! inside [`sequential`], they run on the calling thread. Results are always
//! collected in index order, and every reduction in the crate sums that
//! ordered vector, so both paths produce bit-identical output.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with the parallel helpers forced onto the calling thread.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SEQUENTIAL.with(|c| c.replace(true));
    let out = f();
    FORCE_SEQUENTIAL.with(|c| c.set(prev));
    out
}

#[cfg_attr(not(feature = "parallel"), allow(dead_code))]
fn forced_sequential() -> bool {
    FORCE_SEQUENTIAL.with(|c| c.get())
}

/// `(0..len).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !forced_sequential() && len > 1 {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    (0..len).map(f).collect()
}

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map_slice<'a, S, T, F>(items: &'a [S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&'a S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !forced_sequential() && items.len() > 1 {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    items.iter().map(f).collect()
}

/// Ordered sum of `f(i)` for `i in 0..len`.
pub fn sum_range<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_range(len, f).into_iter().sum()
}

/// Ordered maximum of `f(i)`; `f64::NEG_INFINITY` for an empty range.
pub fn max_range<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_range(len, f).into_iter().fold(f64::NEG_INFINITY, f64::max)
}
