//! Thin switch between rayon and plain iterators.
//!
//! Every helper here produces results whose values do not depend on how work
//! is split across threads: per-element outputs are collected in index order
//! and floating-point reductions are finished sequentially by the caller.

/// Below this many elements the parallel path is not worth its overhead.
pub const MIN_PAR_LEN: usize = 4096;

/// `(0..n).map(f).collect()`, in parallel when the `parallel` feature is on
/// and `n` is large enough.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_range_min(n, MIN_PAR_LEN, f)
}

/// [`map_range`] with an explicit threshold, for expensive per-index work.
pub fn map_range_min<T, F>(n: usize, min_len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n >= min_len {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = min_len;
    (0..n).map(f).collect()
}

/// Applies `f(chunk_index, chunk)` to consecutive `chunk_len`-sized chunks.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if data.len() >= MIN_PAR_LEN {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(c, chunk)| f(c, chunk));
            return;
        }
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(c, chunk)| f(c, chunk));
}

/// Maps every fixed-size chunk of `data` to a value; results come back in
/// chunk order.
pub fn map_chunks<T, R, F>(data: &[T], chunk_len: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if data.len() >= MIN_PAR_LEN {
            use rayon::prelude::*;
            return data.par_chunks(chunk_len).map(f).collect();
        }
    }
    data.chunks(chunk_len).map(f).collect()
}

/// Runs two closures, concurrently when possible.
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    {
        rayon::join(a, b)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (a(), b())
    }
}
