//! Deterministic parallel replication.
//!
//! Replicate `i` always receives `derive_stream(base_seed, i)` and results are
//! returned in index order, so output does not depend on the worker count.

use rayon::prelude::*;

use crate::rng::{derive_stream, Stream};

/// Runs `f(i, stream_i)` for `i in 0..count` on `workers` threads.
/// `workers == 0` means "use rayon's default".
pub fn replicate<T, F>(base_seed: u64, count: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, Stream) -> T + Sync + Send,
{
    let run = || {
        (0..count)
            .into_par_iter()
            .with_min_len(count.div_ceil(workers.max(1) * 4).max(1))
            .map(|i| f(i, derive_stream(base_seed, i as u64)))
            .collect()
    };
    if workers == 1 {
        return (0..count)
            .map(|i| f(i, derive_stream(base_seed, i as u64)))
            .collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}
