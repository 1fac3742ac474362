//! Data-parallel execution policy.
//!
//! Every parallel loop in the crate goes through [`Execution`], so the same
//! code path runs either on the rayon pool or on the calling thread. Random
//! increments are keyed by `(seed, particle, step)`, which makes the two modes
//! produce bit-identical results.

/// How independent work items are scheduled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    /// Run on the calling thread, in index order.
    Sequential,
    /// Run on the current rayon pool. Falls back to sequential when the
    /// `parallel` feature is disabled.
    #[default]
    Parallel,
}

impl Execution {
    /// True when this policy will actually fan out to threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    // Dispatching to the pool costs microseconds; skip it when there is
    // nothing to split or nobody to split it with.
    #[cfg(feature = "parallel")]
    fn fans_out(self, n: usize) -> bool {
        self == Execution::Parallel && n > 1 && rayon::current_num_threads() > 1
    }

    /// Evaluates `f(0..n)` and collects the results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.fans_out(n) {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Fallible variant of [`Execution::map`]. The first error in index order
    /// is not guaranteed under parallel execution; some error is returned.
    pub fn try_map<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.fans_out(n) {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Fallible variant of [`Execution::for_each_mut`].
    pub fn try_for_each_mut<T, E, F>(self, items: &mut [T], f: F) -> Result<(), E>
    where
        T: Send,
        E: Send,
        F: Fn(usize, &mut T) -> Result<(), E> + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.fans_out(items.len()) {
            use rayon::prelude::*;
            return items.par_iter_mut().enumerate().try_for_each(|(i, t)| f(i, t));
        }
        items.iter_mut().enumerate().try_for_each(|(i, t)| f(i, t))
    }

    /// Applies `f` to consecutive `chunk`-sized pieces of `data`.
    pub fn try_for_each_chunk<E, F>(self, data: &mut [f64], chunk: usize, f: F) -> Result<(), E>
    where
        E: Send,
        F: Fn(usize, &mut [f64]) -> Result<(), E> + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.fans_out(data.len() / chunk.max(1)) {
            use rayon::prelude::*;
            return data.par_chunks_mut(chunk).enumerate().try_for_each(|(i, c)| f(i, c));
        }
        data.chunks_mut(chunk).enumerate().try_for_each(|(i, c)| f(i, c))
    }

    /// Applies `f` to every element of `items` in place.
    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.fans_out(items.len()) {
            use rayon::prelude::*;
            items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t));
            return;
        }
        items.iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }
}
