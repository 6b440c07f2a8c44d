//! Data-parallel map with a deterministic reduction.
//!
//! Values are always produced in index order and summed by a fixed binary
//! split, so the result does not depend on how many worker threads ran.

use crate::error::Result;

/// Map `f` over `0..n`, keeping the output in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
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

/// Fallible version of [`map_indexed`]; the first error by index wins.
pub fn try_map_indexed<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_indexed(n, f).into_iter().collect()
}

const LEAF: usize = 32;

/// Pairwise sum with split points that depend only on the slice length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise sum of `w[i] * v[i]`.
pub fn pairwise_dot(w: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), v.len());
    if w.len() <= LEAF {
        return w.iter().zip(v).map(|(a, b)| a * b).sum();
    }
    let mid = w.len() / 2;
    pairwise_dot(&w[..mid], &v[..mid]) + pairwise_dot(&w[mid..], &v[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
        let ones = vec![1.0; 1000];
        assert_eq!(pairwise_dot(&ones, &xs), 499_500.0);
    }

    #[test]
    fn map_keeps_order() {
        let v = map_indexed(500, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }
}
