//! Order-preserving fan-out over images.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Applies `f` to every item and returns results in input order.
///
/// `jobs == 1` runs inline; `jobs == 0` uses rayon's default pool size. When
/// several items fail, the error of the earliest item is returned, so the
/// outcome never depends on scheduling.
pub fn map_ordered<I, T, F>(items: &[I], jobs: usize, f: F) -> Result<Vec<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = if jobs == 1 {
        items.iter().map(&f).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| items.par_iter().map(&f).collect())
    };
    results.into_iter().collect()
}
