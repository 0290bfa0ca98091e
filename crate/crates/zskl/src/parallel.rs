//! Order-preserving map helpers with an optional rayon backend.
//!
//! Results come back indexed by input position, and every reduction in the
//! crate folds that vector sequentially, so parallel and sequential
//! execution are bit-identical. With the `parallel` feature enabled the
//! parallel path is taken whenever the current rayon pool has more than
//! one thread; building a one-thread pool (CLI `--threads 1`) therefore
//! runs the plain sequential code.

pub fn map_collect_seq<T: Sized, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_collect_par<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_collect<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    if rayon::current_num_threads() > 1 {
        map_collect_par(items, f)
    } else {
        map_collect_seq(items, f)
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    map_collect_seq(items, f)
}
