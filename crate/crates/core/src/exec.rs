//! Execution policy for the data-parallel loops.
//!
//! Every parallel loop in the crate splits its work into a fixed set of
//! chunks and reduces the partial results in chunk order, so the parallel and
//! sequential paths produce bit-identical output. Without the `parallel`
//! feature, [`Parallelism::Parallel`] silently runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    Sequential,
    #[default]
    Parallel,
}

impl Parallelism {
    /// Whether this build can actually run work on the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// Splits `0..len` into at most `max_chunks` contiguous ranges of equal size
/// (the last one possibly shorter).
pub fn chunk_ranges(len: usize, max_chunks: usize) -> Vec<std::ops::Range<usize>> {
    if len == 0 {
        return Vec::new();
    }
    let chunks = max_chunks.clamp(1, len);
    let size = len.div_ceil(chunks);
    (0..len)
        .step_by(size)
        .map(|start| start..(start + size).min(len))
        .collect()
}

/// Maps `f` over `items`, in parallel when allowed. Output order matches input order.
pub fn map_ordered<T, R, F>(policy: Parallelism, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if policy.is_parallel() {
        return items.par_iter().map(&f).collect();
    }
    let _ = policy;
    items.iter().map(f).collect()
}

/// Runs `f` over fixed contiguous chunks of `0..len` and returns the per-chunk
/// results in chunk order. The chunking depends only on `len`, so reducing the
/// result sequentially gives the same answer for every policy.
pub fn map_chunks<R, F>(policy: Parallelism, len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(std::ops::Range<usize>) -> R + Sync + Send,
{
    let ranges = chunk_ranges(len, REDUCTION_CHUNKS);
    map_ordered(policy, &ranges, |r| f(r.clone()))
}

/// Number of partial sums used by deterministic reductions.
pub const REDUCTION_CHUNKS: usize = 16;

/// Installs a global rayon pool with `threads` workers. Ignored without the
/// `parallel` feature or when a pool already exists.
pub fn configure_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}
