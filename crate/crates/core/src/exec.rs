//! Execution policy for the data-parallel kernels.
//!
//! [`Exec::Parallel`] hands independent output blocks to rayon. Without the
//! `parallel` feature it silently degrades to [`Exec::Sequential`]. Both
//! policies produce bit-identical results: work is only ever split across
//! output elements, never across a summation.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Whether this policy will actually fan out.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Apply `f` to each `chunk`-sized mutable block of `out` together with
    /// its block index.
    pub fn for_each_chunk<T, F>(self, out: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if chunk == 0 || out.is_empty() {
            return;
        }
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk).enumerate().for_each(|(i, block)| f(i, block));
            return;
        }
        out.chunks_mut(chunk).enumerate().for_each(|(i, block)| f(i, block));
    }

    /// Map `f` over `0..n`, collecting results in index order.
    pub fn map_indexed<U, F>(self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }
}
