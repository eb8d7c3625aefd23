//! Column-parallel iteration helpers.
//!
//! With the `parallel` feature the closures run on the current rayon pool;
//! without it they run in natural order on the calling thread. Callers only
//! write disjoint columns and never reduce across columns here, so results are
//! bitwise identical for any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Calls `f(scratch, t, column)` for every length-`n_r` column of `out`.
pub fn for_each_column<S, I, F>(out: &mut [f64], n_r: usize, init: I, f: F)
where
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(n_r > 0 && out.len() % n_r == 0);
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(n_r)
            .enumerate()
            .for_each_init(init, |scratch, (t, col)| f(scratch, t, col));
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut scratch = init();
        for (t, col) in out.chunks_mut(n_r).enumerate() {
            f(&mut scratch, t, col);
        }
    }
}

/// Collects `f(i)` for `i in 0..n`.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Whether kernels are compiled with data parallelism.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Runs `f` with kernels limited to `threads` workers (`0` keeps the default).
///
/// Without the `parallel` feature this simply calls `f`.
pub fn with_threads<R: Send, F: FnOnce() -> R + Send>(threads: usize, f: F) -> R {
    #[cfg(feature = "parallel")]
    {
        if threads == 0 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}
