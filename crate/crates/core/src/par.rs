//! Execution policy for the data-parallel loops.
//!
//! Work is always split the same way (one item per index, or fixed-size
//! chunks) and results come back in index order, so the choice of policy
//! never changes a single bit of the output. Without the `parallel` feature
//! [`Execution::Parallel`] quietly runs serially.

/// Number of patches folded into one partial accumulator before merging.
pub const REDUCE_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

impl Execution {
    /// True when this policy will actually fan out across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `(0..n).map(f).collect()`, possibly on the rayon pool. Output order is
/// the index order either way.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Splits `0..n` into consecutive [`REDUCE_CHUNK`]-sized ranges, folds each
/// range with `fold`, then merges the partials left to right with `merge`.
///
/// The chunk boundaries and merge order depend only on `n`, which keeps
/// floating-point sums identical between serial and parallel runs.
pub fn chunked_reduce<A, I, F, M>(exec: Execution, n: usize, init: I, fold: F, mut merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
    M: FnMut(&mut A, A),
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partials = map_indexed(exec, chunks, |ci| {
        let mut acc = init();
        let end = ((ci + 1) * REDUCE_CHUNK).min(n);
        for i in ci * REDUCE_CHUNK..end {
            fold(&mut acc, i);
        }
        acc
    });
    let mut total = init();
    for p in partials {
        merge(&mut total, p);
    }
    total
}
