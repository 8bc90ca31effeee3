//! Thin switch between rayon and sequential iteration.
//!
//! Every helper produces its output in index order, so callers get the same
//! vector whichever backend is compiled in.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `true` when the crate was built with the `parallel` feature.
pub const PARALLEL: bool = cfg!(feature = "parallel");

/// Evaluate `f(i)` for `i in 0..n`, collecting results in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Map a slice element-wise, preserving order.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Map then reduce with [`crate::pairwise_sum`]; bit-stable across backends.
pub fn sum_slice<S, F>(items: &[S], f: F) -> f64
where
    S: Sync,
    F: Fn(&S) -> f64 + Sync + Send,
{
    crate::pairwise_sum(&map_slice(items, f))
}
