//! Deterministic parallel helpers: work is split into fixed chunks whose
//! partial results are combined in chunk order, so results do not depend on
//! the number of worker threads.

use rayon::prelude::*;

pub(crate) const CHUNK: usize = 4096;

/// Sum of `f(range)` over fixed-size chunks of `0..len`, combined in order.
pub(crate) fn chunked_sum(len: usize, f: impl Fn(std::ops::Range<usize>) -> f64 + Sync) -> f64 {
    let n_chunks = len.div_ceil(CHUNK);
    let parts: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(len)))
        .collect();
    parts.into_iter().sum()
}

/// Collects `f(i)` for `i in 0..len` in index order.
pub(crate) fn map_indexed<U: Send>(len: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    (0..len).into_par_iter().map(f).collect()
}
