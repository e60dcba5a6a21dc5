//! Deterministic parallel map: results are always collected in index order,
//! so output never depends on the number of worker threads.

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is enabled.
pub fn par_map<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Like [`par_map`] but stops at the first error (by index order).
pub fn try_par_map<R, E, F>(n: usize, f: F) -> Result<Vec<R>, E>
where
    R: Send,
    E: Send,
    F: Fn(usize) -> Result<R, E> + Sync + Send,
{
    par_map(n, f).into_iter().collect()
}

/// Runs `op` on a pool with `threads` workers (0 = library default).
pub fn with_threads<R: Send>(threads: usize, op: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                return pool.install(op);
            }
        }
        op()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        op()
    }
}

/// Worker count requested through `MSBASIS_THREADS` (0 when unset or invalid).
pub fn env_threads() -> usize {
    std::env::var("MSBASIS_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}
