//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers run on the current rayon pool;
//! without it, or with [`Execution::Sequential`], they run on the calling
//! thread. Results are always returned in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a data-parallel stage is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the ambient rayon pool. Equivalent to `Sequential` when the crate
    /// is built without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Maps `f` over `0..len`, preserving index order in the output.
pub fn map_indices<R, F>(len: usize, exec: Execution, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..len).into_par_iter().map(f).collect(),
        _ => (0..len).map(f).collect(),
    }
}

/// Maps `f` over a slice, preserving order.
pub fn map_slice<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

/// Maps contiguous chunks of `0..len` and concatenates the chunk outputs in
/// index order.
pub fn flat_map_chunks<R, F>(len: usize, chunk: usize, exec: Execution, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(std::ops::Range<usize>) -> Vec<R> + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = len.div_ceil(chunk);
    let parts = map_indices(n_chunks, exec, |c| {
        let start = c * chunk;
        f(start..(start + chunk).min(len))
    });
    let total = parts.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(total);
    for p in parts {
        out.extend(p);
    }
    out
}

/// Sorts in place, in parallel when allowed. The comparator must be a total
/// order for the result to be independent of scheduling.
pub fn sort_by<T, F>(items: &mut [T], exec: Execution, cmp: F)
where
    T: Send,
    F: Fn(&T, &T) -> std::cmp::Ordering + Sync,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_sort_unstable_by(cmp),
        _ => items.sort_unstable_by(cmp),
    }
}
