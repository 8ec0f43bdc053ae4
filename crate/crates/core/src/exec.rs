//! Deterministic work scheduling over documents.
//!
//! All corpus-level passes (objective sums, gradient accumulation, held-out
//! inference, sampling) map a function over fixed-size index chunks and then
//! reduce the per-chunk results in chunk order. The chunk size is a constant,
//! not a function of the thread count, so the reduction order — and therefore
//! every floating-point sum — is identical whether the map runs on one thread,
//! on a rayon pool of any width, or with the `parallel` feature disabled.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Documents handled per work unit. Small enough to load-balance a pool,
/// large enough that per-chunk scratch allocations amortize.
pub const DOC_CHUNK: usize = 64;

/// The `[start, end)` index ranges covering `0..n` in `DOC_CHUNK` steps.
pub fn chunk_ranges(n: usize) -> Vec<Range<usize>> {
    (0..n)
        .step_by(DOC_CHUNK.max(1))
        .map(|s| s..(s + DOC_CHUNK).min(n))
        .collect()
}

/// Map `f` over the chunk ranges of `0..n` sequentially, preserving order.
pub fn chunk_map_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(Range<usize>) -> T,
{
    chunk_ranges(n).into_iter().map(f).collect()
}

/// Map `f` over the chunk ranges of `0..n` on the rayon pool. The collected
/// vector is in chunk order regardless of scheduling.
#[cfg(feature = "parallel")]
pub fn chunk_map_par<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    chunk_ranges(n).into_par_iter().map(f).collect()
}

/// Default execution path: parallel when the `parallel` feature is enabled,
/// sequential otherwise. Results are bit-identical either way.
#[cfg(feature = "parallel")]
pub fn chunk_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    chunk_map_par(n, f)
}

/// Default execution path (sequential build).
#[cfg(not(feature = "parallel"))]
pub fn chunk_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    chunk_map_seq(n, f)
}
