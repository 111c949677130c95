//! Data-parallel loop helpers.
//!
//! With the `parallel` feature (default) the loops run on rayon; without it
//! they run sequentially. Work is only ever split across disjoint output
//! slots and every reduction inside a slot runs in fixed index order, so
//! results are bit-identical in both modes and for any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f(slot_index, slot)` to each disjoint `slot_len` chunk of `out`.
pub(crate) fn for_each_slot<T, F>(out: &mut [T], slot_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert!(slot_len > 0 && out.len() % slot_len == 0);
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(slot_len).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.chunks_mut(slot_len).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Collect `f(0..n)` preserving index order.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
