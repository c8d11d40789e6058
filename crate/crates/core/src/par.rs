//! Row-parallel execution helpers.
//!
//! With the `parallel` feature the helpers fan work out over rayon; without it
//! (or after [`set_parallel(false)`](set_parallel)) they run the same closures
//! sequentially. Every helper hands each closure a disjoint output chunk and
//! never reduces across chunks, so results are bitwise identical either way.

use std::sync::atomic::{AtomicBool, Ordering};

static ENABLED: AtomicBool = AtomicBool::new(true);

/// Work below this many output elements always runs on the calling thread.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_LEN: usize = 4096;

/// Toggle parallel execution at runtime. Has no effect without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    ENABLED.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && ENABLED.load(Ordering::Relaxed)
}

/// Run `f(chunk_index, chunk)` over `data.chunks_mut(chunk_len)`.
pub(crate) fn for_each_chunk<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if chunk_len == 0 || data.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() && data.len() >= MIN_PARALLEL_LEN && data.len() > chunk_len {
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

/// Evaluate `f(i)` for `i in 0..n`, returning results in index order.
pub(crate) fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() && n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_everything_in_order() {
        let mut v = vec![0usize; 10_000];
        for_each_chunk(&mut v, 7, |i, c| c.iter_mut().for_each(|x| *x = i));
        for (j, x) in v.iter().enumerate() {
            assert_eq!(*x, j / 7);
        }
    }

    #[test]
    fn map_range_keeps_order() {
        let out = map_range(100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
