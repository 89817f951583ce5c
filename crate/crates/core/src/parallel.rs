//! Index-ordered map used for chains, replicates and batch density evaluation.
//!
//! With the `parallel` feature the work is spread over the rayon pool; without it the
//! same closure runs sequentially. Output order is the index order either way, so
//! results never depend on scheduling.

/// Evaluates `f(0), f(1), ..., f(n - 1)` and returns the results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_sequential(n, f)
}

/// Sequential reference path, always available.
pub fn map_indexed_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
