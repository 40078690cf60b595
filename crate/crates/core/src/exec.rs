//! Data-parallel execution switch.
//!
//! With the `parallel` feature (default) the hot loops (ensemble runs,
//! column statistics, stall aggregation) fan out over rayon; without it
//! every call runs sequentially. Results are identical in both modes.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecMode {
    Sequential,
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

impl ExecMode {
    /// Whether this mode actually fans out in the current build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }

    /// Order-preserving map over `0..n`.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Order-preserving map over a slice.
    pub fn map_slice<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Folds fixed-size chunks of `items` independently, then merges the
    /// partial results left to right.
    pub fn fold_chunks<'a, T, A, Init, Fold, Merge>(
        self,
        items: &'a [T],
        chunk: usize,
        init: Init,
        fold: Fold,
        merge: Merge,
    ) -> A
    where
        T: Sync,
        A: Send,
        Init: Fn() -> A + Sync + Send,
        Fold: Fn(A, &'a T) -> A + Sync + Send,
        Merge: Fn(A, A) -> A + Sync + Send,
    {
        #[cfg(not(feature = "parallel"))]
        let _ = (chunk, merge);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items
                .par_chunks(chunk.max(1))
                .map(|c| c.iter().fold(init(), &fold))
                .reduce(&init, &merge);
        }
        items.iter().fold(init(), fold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let data: Vec<u64> = (0..10_000).collect();
        for mode in [ExecMode::Sequential, ExecMode::Parallel] {
            let s = mode.fold_chunks(&data, 128, || 0u64, |a, x| a + x, |a, b| a + b);
            assert_eq!(s, 49_995_000);
            let sq = mode.map_range(5, |i| i * i);
            assert_eq!(sq, vec![0, 1, 4, 9, 16]);
        }
    }
}
