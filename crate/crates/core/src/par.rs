//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over rayon's pool
//! unless serial mode is switched on at runtime. Without the feature every
//! helper runs sequentially. Results are always returned in index order, so
//! callers that reduce them in order get bitwise-identical output in both
//! modes.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static SERIAL: AtomicBool = AtomicBool::new(false);

/// Environment variable capping worker threads; `0` selects serial mode.
pub const THREADS_ENV: &str = "CENSEO_THREADS";

pub fn set_serial(serial: bool) {
    SERIAL.store(serial, Ordering::SeqCst);
}

pub fn is_serial() -> bool {
    !cfg!(feature = "parallel") || SERIAL.load(Ordering::SeqCst)
}

/// Applies a thread cap: `0` forces serial execution, `n > 0` sizes the
/// global pool (first call wins, as with any rayon global pool).
pub fn configure_threads(threads: usize) {
    if threads == 0 {
        set_serial(true);
        return;
    }
    set_serial(false);
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

/// Reads [`THREADS_ENV`] and applies it. Unset or unparsable leaves defaults.
pub fn configure_from_env() -> Option<usize> {
    let threads = std::env::var(THREADS_ENV).ok()?.trim().parse().ok()?;
    configure_threads(threads);
    Some(threads)
}

pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if !is_serial() && n > 1 {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Calls `f(i, chunk)` for each `chunk_len`-sized chunk of `data`.
pub fn map_chunks_mut<E, T, F>(data: &mut [E], chunk_len: usize, f: F) -> Vec<T>
where
    E: Send,
    T: Send,
    F: Fn(usize, &mut [E]) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if !is_serial() && data.len() > chunk_len {
        return data
            .par_chunks_mut(chunk_len)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect();
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .map(|(i, c)| f(i, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_keep_index_order() {
        let v = map_range(100, |i| i * 2);
        assert_eq!(v, (0..100).map(|i| i * 2).collect::<Vec<_>>());
        let mut data = vec![0usize; 12];
        let ids = map_chunks_mut(&mut data, 4, |i, c| {
            c.fill(i);
            i
        });
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(data, vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
    }
}
