//! Data-parallel map with a sequential fallback.
//!
//! Results are always collected in input order, so callers that reduce
//! them sequentially get bit-identical output whichever path runs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for per-item work (patches, bags, graphs, folds).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled and
    /// degrades to [`Exec::Sequential`] otherwise.
    #[default]
    Parallel,
}

impl Exec {
    pub fn map<I, O, F>(self, items: &[I], f: F) -> Vec<O>
    where
        I: Sync,
        O: Send,
        F: Fn(&I) -> O + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    pub fn map_range<O, F>(self, n: usize, f: F) -> Vec<O>
    where
        O: Send,
        F: Fn(usize) -> O + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Fallible map; the first error in input order is returned.
    pub fn try_map<I, O, E, F>(self, items: &[I], f: F) -> Result<Vec<O>, E>
    where
        I: Sync,
        O: Send,
        E: Send,
        F: Fn(&I) -> Result<O, E> + Sync + Send,
    {
        self.map(items, f).into_iter().collect()
    }

    pub fn try_map_range<O, E, F>(self, n: usize, f: F) -> Result<Vec<O>, E>
    where
        O: Send,
        E: Send,
        F: Fn(usize) -> Result<O, E> + Sync + Send,
    {
        self.map_range(n, f).into_iter().collect()
    }
}
