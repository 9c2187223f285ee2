//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) the helpers fan out over rayon's
//! current pool; without it, or inside [`sequential`], they run in order on
//! the calling thread. Every helper returns results in input order and the
//! callers reduce partial results in a fixed order, so the two paths produce
//! bit-identical output.

use std::sync::atomic::{AtomicUsize, Ordering};

static SEQUENTIAL_SCOPES: AtomicUsize = AtomicUsize::new(0);

/// Runs `f` with the parallel helpers pinned to the sequential path.
///
/// Scopes nest and are process-wide: while any scope is open, every helper
/// call in the process takes the sequential path.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    struct Guard;
    impl Drop for Guard {
        fn drop(&mut self) {
            SEQUENTIAL_SCOPES.fetch_sub(1, Ordering::SeqCst);
        }
    }
    SEQUENTIAL_SCOPES.fetch_add(1, Ordering::SeqCst);
    let _guard = Guard;
    f()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && SEQUENTIAL_SCOPES.load(Ordering::Relaxed) == 0
}

/// Configures the global worker pool. `None` keeps rayon's default
/// (one worker per logical core). A no-op without the `parallel` feature.
pub fn init_threads(threads: Option<usize>) -> crate::Result<()> {
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .map_err(|e| crate::Error::invalid(format!("thread pool: {e}")))?;
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            return rayon::current_num_threads();
        }
    }
    1
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, preserving order.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    items.iter().map(f).collect()
}

/// Calls `f(chunk_index, chunk)` for every `chunk_len`-sized piece of `data`.
pub fn for_chunks_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}
