//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool;
//! without it, or inside [`with_threads`]`(1, ..)`, the same closures run in a
//! plain sequential loop. Results always come back in index order, so callers
//! never observe the schedule.

use std::cell::Cell;

use crate::error::Result;

thread_local! {
    static SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

fn sequential() -> bool {
    !cfg!(feature = "parallel") || SEQUENTIAL.with(Cell::get)
}

/// Number of worker threads a `threads = 0` request resolves to.
pub fn available_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Runs `f` with `threads` workers. `0` uses the global pool, `1` forces the
/// sequential path.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    if threads == 1 || !cfg!(feature = "parallel") {
        let prev = SEQUENTIAL.with(|s| s.replace(true));
        let out = f();
        SEQUENTIAL.with(|s| s.set(prev));
        return out;
    }
    #[cfg(feature = "parallel")]
    {
        if threads == 0 {
            return f();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("failed to build thread pool");
        pool.install(f)
    }
    #[cfg(not(feature = "parallel"))]
    unreachable!()
}

pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if sequential() || n < 2 {
        return (0..n).map(f).collect();
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    unreachable!()
}

pub fn try_map_range<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_range(n, f).into_iter().collect()
}

/// Applies `f` to disjoint row blocks of `out` (`row_len` values per row).
pub fn for_each_row_block<F>(out: &mut [f64], row_len: usize, min_rows: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let rows = if row_len == 0 { 0 } else { out.len() / row_len };
    if sequential() || rows < 2 * min_rows.max(1) {
        f(0, out);
        return;
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let block = min_rows.max(1);
        out.par_chunks_mut(block * row_len)
            .enumerate()
            .for_each(|(b, chunk)| f(b * block, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    unreachable!()
}
