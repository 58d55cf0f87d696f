//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper maps an index range to owned results collected in index
//! order. Reductions over the results are left to the caller and are always
//! performed sequentially, so the parallel and sequential builds produce
//! bit-identical numbers.

pub use self::actual::map_indices;

#[cfg(feature = "parallel")]
mod actual {
    use rayon::prelude::*;

    /// Maps `0..n` through `op` in parallel, preserving index order.
    pub fn map_indices<R, F>(n: usize, op: F) -> Vec<R>
    where
        F: Fn(usize) -> R + Sync + Send,
        R: Send,
    {
        (0..n).into_par_iter().map(op).collect()
    }
}

#[cfg(not(feature = "parallel"))]
mod actual {
    /// Maps `0..n` through `op` sequentially.
    pub fn map_indices<R, F>(n: usize, op: F) -> Vec<R>
    where
        F: Fn(usize) -> R + Sync + Send,
        R: Send,
    {
        (0..n).map(op).collect()
    }
}

/// Sequential left-to-right sum. Used for every cross-row reduction.
pub fn ordered_sum(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v)
}
