//! Execution-mode shim: rayon data-parallel loops when the `parallel`
//! feature is enabled, plain sequential iterators otherwise.
//!
//! Every parallel loop in the crate is an index-based map with a
//! deterministic ordered collect, so results are bit-identical across
//! thread counts and across the two modes.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a data-parallel kernel should execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

impl ExecMode {
    /// Default mode for the current build: parallel when the `parallel`
    /// feature is enabled.
    pub fn auto() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

/// `(0..n).map(f)` collected in index order.
pub fn map_collect<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        ExecMode::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => (0..n).into_par_iter().map(f).collect(),
        #[cfg(not(feature = "parallel"))]
        ExecMode::Parallel => (0..n).map(f).collect(),
    }
}
