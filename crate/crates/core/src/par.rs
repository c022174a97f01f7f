//! Order-preserving data-parallel helpers.
//!
//! Every helper returns results in input order, so callers that merge the
//! results sequentially get bit-identical output whether or not the work ran
//! on the rayon pool. With the `parallel` feature disabled everything runs on
//! the calling thread.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, in parallel when `parallel` is set and the feature is on.
pub fn map_range<R, F>(n: usize, parallel: bool, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, keeping input order.
pub fn map_slice<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_iter().map(f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Caps the global worker pool. `0` keeps rayon's default.
///
/// Has no effect when built without the `parallel` feature or when the pool
/// was already initialised.
pub fn configure_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let _ = threads;
}

/// Whether this build can run anything in parallel at all.
pub const fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
