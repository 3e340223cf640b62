//! Data-parallel helpers.
//!
//! Candidate fits, bootstrap replicates, cross-validation folds and simulation
//! replicates are independent units of work. They all go through
//! [`Execution::map`], which runs on the rayon pool when the `parallel` feature
//! is enabled and falls back to a plain sequential loop otherwise. Results are
//! always returned in input order, so reductions downstream are deterministic
//! regardless of scheduling.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Apply `f` to `0..len`, collecting results in index order.
    pub fn map<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        {
            if self == Execution::Parallel && len > 1 {
                use rayon::prelude::*;
                return (0..len).into_par_iter().map(f).collect();
            }
        }
        (0..len).map(f).collect()
    }

    /// Nested work (candidate fits inside a replicate) runs sequentially
    /// when the outer level already occupies the pool.
    pub fn inner(self) -> Execution {
        Execution::Sequential
    }
}
