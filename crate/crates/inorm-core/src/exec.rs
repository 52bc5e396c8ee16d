//! Serial / data-parallel execution of independent runs.
//!
//! Results are always collected in run order, so the reduction (and every
//! downstream statistic and CSV byte) is identical whichever mode executes
//! and however many threads the pool has.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Serial,
    /// Rayon-backed. Without the `parallel` feature this falls back to serial.
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Serial
        }
    }
}

/// Apply `f` to `0..n`, collecting results in index order.
pub fn map_ordered<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        ExecMode::Serial => (0..n).map(f).collect(),
        ExecMode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                (0..n).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n).map(f).collect()
            }
        }
    }
}

/// Like [`map_ordered`] for fallible work; the first error in index order wins.
pub fn try_map_ordered<T, E, F>(mode: ExecMode, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync,
{
    map_ordered(mode, n, f).into_iter().collect()
}
