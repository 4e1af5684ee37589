//! Data-parallel execution helpers.
//!
//! Every helper returns results in index order, and every reduction over
//! those results is done sequentially by the caller. Outputs are therefore
//! bit-identical between [`Execution::Sequential`] and
//! [`Execution::Parallel`], and independent of the rayon pool size.
//!
//! With the `parallel` feature disabled, [`Execution::Parallel`] falls back
//! to the sequential path.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a data-parallel loop is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
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

/// Evaluates `f(i)` for `i in 0..n`, returning the results in index order.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Fills `out` by chunks of `chunk` elements; `f(start, slice)` receives the
/// offset of the chunk within `out`.
pub fn fill_chunks<T, F>(out: &mut [T], chunk: usize, exec: Execution, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => out
            .par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(k, s)| f(k * chunk, s)),
        _ => out
            .chunks_mut(chunk)
            .enumerate()
            .for_each(|(k, s)| f(k * chunk, s)),
    }
}

/// Sums in index order. Used for every reduction whose result must not
/// depend on the thread count.
pub fn ordered_sum(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v)
}
