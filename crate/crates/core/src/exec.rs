//! Row-parallel execution with a sequential fallback.
//!
//! Every parallel loop in the crate goes through [`map_indexed`]: each index
//! is computed independently and results land at their own position, so the
//! output never depends on scheduling. Without the `parallel` feature the
//! `Parallel` mode silently runs sequentially.

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Like [`map_indexed`] but fails with the error of the lowest failing index.
pub fn try_map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_indexed(exec, n, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let seq = map_indexed(Execution::Sequential, 1000, |i| (i as f64).sqrt());
        let par = map_indexed(Execution::Parallel, 1000, |i| (i as f64).sqrt());
        assert_eq!(seq, par);
    }

    #[test]
    fn lowest_error_wins() {
        let r: Result<Vec<usize>> = try_map_indexed(Execution::Parallel, 100, |i| {
            if i % 30 == 29 {
                Err(crate::Error::Domain(format!("{i}")))
            } else {
                Ok(i)
            }
        });
        match r {
            Err(crate::Error::Domain(msg)) => assert_eq!(msg, "29"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
