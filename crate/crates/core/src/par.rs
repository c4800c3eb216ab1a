//! Batch execution helpers.
//!
//! Every batch path in the crate (PR filtering, rollout curation, log
//! scanning) goes through [`Exec`]. With the `parallel` feature enabled the
//! default is rayon's work-stealing pool; without it everything runs on the
//! calling thread. Both modes produce identical, order-preserving results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a batch operation is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
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
    /// Order-preserving map over a slice.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Order-preserving map that consumes its input.
    pub fn map_owned<T, R, F>(self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.into_par_iter().map(f).collect(),
            _ => items.into_iter().map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let input: Vec<u64> = (0..10_000).collect();
        let seq = Exec::Sequential.map(&input, |x| x * 3 + 1);
        let par = Exec::Parallel.map(&input, |x| x * 3 + 1);
        assert_eq!(seq, par);
        assert_eq!(seq[17], 52);
        let owned = Exec::Parallel.map_owned(input, |x| x % 7);
        assert_eq!(owned[..8], [0, 1, 2, 3, 4, 5, 6, 0]);
    }
}
