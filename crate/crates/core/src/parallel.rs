//! Execution policy for the data-parallel loops in this crate.
//!
//! Every parallel loop here is an order-preserving map, optionally followed
//! by a reduction that runs sequentially over fixed-size chunks. The chunk
//! partition never depends on the thread count, so `Exec::Sequential` and
//! `Exec::Parallel` produce bit-identical results.
//!
//! Without the `parallel` feature, `Exec::Parallel` falls back to the
//! sequential path.

/// Items per work unit in chunked reductions.
pub const REDUCE_CHUNK: usize = 64;

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
    /// Order-preserving map.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    /// Order-preserving map over `0..n`.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps every chunk of `REDUCE_CHUNK` items to a partial result and folds
    /// the partials left to right. Returns `None` for empty input.
    pub fn chunked_reduce<T, R, M, F>(self, items: &[T], map: M, mut fold: F) -> Option<R>
    where
        T: Sync,
        R: Send,
        M: Fn(&[T]) -> R + Sync + Send,
        F: FnMut(&mut R, R),
    {
        let chunks: Vec<&[T]> = items.chunks(REDUCE_CHUNK).collect();
        let partials = self.map(&chunks, |c| map(c));
        let mut iter = partials.into_iter();
        let mut acc = iter.next()?;
        for p in iter {
            fold(&mut acc, p);
        }
        Some(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_parallel_reductions_agree_bitwise() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin() * 1e-3 + 1.0 / (i as f64 + 1.0)).collect();
        let run = |exec: Exec| {
            exec.chunked_reduce(&xs, |c| c.iter().sum::<f64>(), |a, b| *a += b)
                .unwrap()
        };
        assert_eq!(run(Exec::Sequential).to_bits(), run(Exec::Parallel).to_bits());
    }

    #[test]
    fn empty_reduce_is_none() {
        let xs: Vec<f64> = Vec::new();
        assert!(Exec::Sequential
            .chunked_reduce(&xs, |c| c.len(), |a, b| *a += b)
            .is_none());
    }
}
