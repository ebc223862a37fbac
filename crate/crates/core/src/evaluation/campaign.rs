//! Deterministic Monte-Carlo fan-out.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Run `trial(index, seed)` for `index in 0..trials` with
/// `seed = master_seed + index`, on up to `jobs` threads.
///
/// Results come back in index order whatever the scheduling, so any
/// aggregate folded over them is independent of `jobs`. When several trials
/// fail, the error of the lowest index is returned.
pub fn monte_carlo<T, F>(trials: usize, master_seed: u64, jobs: usize, trial: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    if trials == 0 {
        return Err(Error::param("at least one trial is required"));
    }
    let run = |i: usize| {
        trial(i, master_seed.wrapping_add(i as u64))
            .map_err(|e| Error::Trial { index: i, source: Box::new(e) })
    };
    if jobs <= 1 {
        return (0..trials).map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::param(format!("cannot start {jobs} worker threads: {e}")))?;
    let results: Vec<Result<T>> = pool.install(|| (0..trials).into_par_iter().map(run).collect());
    results.into_iter().collect()
}
