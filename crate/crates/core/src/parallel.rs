//! Deterministic fan-out over independent tasks.

use rayon::prelude::*;

/// Evaluates `f(0..n)` and returns the results in index order. With `jobs <= 1`
/// the tasks run on the calling thread; otherwise on a pool of `jobs` workers.
pub fn map_indexed<T, F>(jobs: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if jobs <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("falling back to sequential execution: {e}");
            (0..n).map(f).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_does_not_depend_on_workers() {
        let a = map_indexed(1, 50, |i| i * i);
        let b = map_indexed(4, 50, |i| i * i);
        assert_eq!(a, b);
    }
}
