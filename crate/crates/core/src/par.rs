//! Thin wrappers that run on rayon when the `parallel` feature is enabled
//! and fall back to plain iteration otherwise. Results are always collected
//! in input order.

use ndarray::{Array2, ArrayViewMut1, Axis};

/// Apply `f(row_index, row)` to every row of `a`.
pub fn for_each_row<T, F>(a: &mut Array2<T>, f: F)
where
    T: Send + Sync,
    F: Fn(usize, ArrayViewMut1<T>) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use ndarray::parallel::prelude::*;
        a.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, row) in a.axis_iter_mut(Axis(0)).enumerate() {
            f(i, row);
        }
    }
}

/// Ordered parallel map over a slice.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Ordered parallel map over `0..n`.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
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
