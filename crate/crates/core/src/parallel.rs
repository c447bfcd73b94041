//! Data-parallel helpers with a serial fallback.
//!
//! With the `parallel` feature, work is spread over a rayon pool; without
//! it (or with zero threads requested) everything runs on the caller's
//! thread. Results are always collected in index order, so outputs do not
//! depend on the thread count.

#[cfg(feature = "parallel")]
use crate::error::Error;
use crate::error::Result;

/// Runs per-client and oracle work either serially or on a bounded pool.
pub struct Executor {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
    threads: usize,
}

impl Executor {
    /// `threads == 0` means serial.
    pub fn new(threads: usize) -> Result<Self> {
        #[cfg(feature = "parallel")]
        {
            let pool = if threads == 0 {
                None
            } else {
                Some(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .build()
                        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?,
                )
            };
            Ok(Executor { pool, threads })
        }
        #[cfg(not(feature = "parallel"))]
        {
            Ok(Executor { threads })
        }
    }

    pub fn serial() -> Self {
        Executor::new(0).expect("serial executor never fails")
    }

    /// Reads `FEDX_THREADS`; unset or unparsable means serial.
    pub fn from_env() -> Result<Self> {
        let threads = std::env::var("FEDX_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(0);
        Executor::new(threads)
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn is_parallel(&self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self.pool.is_some()
        }
        #[cfg(not(feature = "parallel"))]
        {
            false
        }
    }

    /// Apply `f` to every item, returning results in item order.
    pub fn map_mut<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(&mut T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter_mut().map(&f).collect());
        }
        items.iter_mut().map(f).collect()
    }

    /// `(0..n).map(f)` in index order.
    pub fn map_range<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
        (0..n).map(f).collect()
    }
}

/// Pairwise (tree) summation in a fixed order.
pub fn tree_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let (l, r) = values.split_at(n / 2);
            tree_sum(l) + tree_sum(r)
        }
    }
}

/// Coordinatewise pairwise summation of equal-length vectors.
pub fn tree_sum_vectors(vectors: &[&[f64]], dim: usize) -> Vec<f64> {
    match vectors.len() {
        0 => vec![0.0; dim],
        1 => vectors[0].to_vec(),
        n => {
            let (l, r) = vectors.split_at(n / 2);
            let mut left = tree_sum_vectors(l, dim);
            let right = tree_sum_vectors(r, dim);
            for (a, b) in left.iter_mut().zip(&right) {
                *a += *b;
            }
            left
        }
    }
}
