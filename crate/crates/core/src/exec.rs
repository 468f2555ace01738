//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper returns results in input order, so callers that reduce the
//! output sequentially get bit-identical answers regardless of thread count.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with all helpers in this module forced onto the calling thread.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    FORCE_SEQUENTIAL.with(|flag| {
        let prev = flag.replace(true);
        let out = f();
        flag.set(prev);
        out
    })
}

pub fn is_sequential() -> bool {
    !cfg!(feature = "parallel") || FORCE_SEQUENTIAL.with(|f| f.get())
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if !is_sequential() && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_range(items.len(), |i| f(&items[i]))
}

/// Thread budget for a pipeline stage. `jobs == 1` runs sequentially,
/// `jobs == 0` uses the global rayon pool, anything else a dedicated pool.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Executor {
    pub jobs: usize,
}

impl Executor {
    pub fn new(jobs: usize) -> Self {
        Executor { jobs }
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        if self.jobs == 1 || !cfg!(feature = "parallel") {
            return sequential(f);
        }
        #[cfg(feature = "parallel")]
        if self.jobs > 1 {
            match rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build() {
                Ok(pool) => return pool.install(f),
                Err(e) => log::warn!("could not build a {}-thread pool: {e}", self.jobs),
            }
        }
        f()
    }
}
