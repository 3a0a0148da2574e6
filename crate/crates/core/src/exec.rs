//! Execution strategy: data-parallel helpers with a sequential fallback.
//!
//! Compiled with the `parallel` feature (the default) these fan work out over
//! a rayon pool; without it they run in place. Either way the decomposition
//! is identical — work is split into fixed-size chunks and partial results
//! are combined in index order — so numeric output is byte-for-byte the same
//! for any thread count, including one.

use std::ops::Range;

/// Row-chunk granularity for table scans. Fixed (not derived from the thread
/// count) so the reduction tree does not depend on parallelism.
pub const ROW_CHUNK: usize = 16_384;

/// Splits `0..len` into consecutive ranges of at most `chunk` elements.
pub fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    assert!(chunk > 0);
    (0..len.div_ceil(chunk))
        .map(|i| i * chunk..((i + 1) * chunk).min(len))
        .collect()
}

/// Applies `f` to every chunk of `0..len` and returns the partial results in
/// chunk order.
pub fn map_chunks<T, F>(len: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = chunk_ranges(len, chunk);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ranges.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.into_iter().map(f).collect()
    }
}

/// Maps `f` over `0..n` items (columns, subsets, simulation cells) and
/// returns results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
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

/// Number of chunk partials allowed in flight at once inside
/// [`reduce_chunks`]. Fixed, so it cannot influence merge order.
const BATCH: usize = 32;

/// Parallel map over fixed-size chunks with a sequential, index-ordered
/// merge. Chunks are processed in batches of [`BATCH`] so at most that many
/// partial results are alive at a time; the merge sequence is still strictly
/// chunk 0, 1, 2, …, so the reduction is deterministic for any thread count.
pub fn reduce_chunks<T, F, G>(len: usize, chunk: usize, f: F, mut merge: G)
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
    G: FnMut(T),
{
    let ranges = chunk_ranges(len, chunk);
    for batch in ranges.chunks(BATCH) {
        #[cfg(feature = "parallel")]
        let parts: Vec<T> = {
            use rayon::prelude::*;
            batch.par_iter().cloned().map(&f).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<T> = batch.iter().cloned().map(&f).collect();
        for p in parts {
            merge(p);
        }
    }
}

/// Runs `f` inside a pool of `threads` workers. With `threads = None` the
/// global default pool is used. Without the `parallel` feature `f` simply
/// runs on the calling thread.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match threads {
            Some(t) => rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .expect("thread pool construction")
                .install(f),
            None => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Number of worker threads the current scope would use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Whether this build fans work out over a thread pool at all.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
