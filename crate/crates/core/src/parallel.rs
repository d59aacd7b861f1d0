//! Scoped worker pools.

use crate::error::{Error, Result};

/// Runs `f` inside a dedicated rayon pool of `workers` threads; `0` uses the
/// global pool.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}
