//! Data-parallel batch helpers.
//!
//! All per-record work in this crate is embarrassingly parallel, so batch
//! entry points fan out over a rayon pool when the `parallel` feature is on
//! (the default) and degrade to plain iteration when it is off. Results come
//! back in input order either way. [`map_seq`] is always sequential; the
//! bench suite uses it as the baseline.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over the slice, in parallel when the `parallel` feature is
/// enabled. Output order matches input order.
#[cfg(feature = "parallel")]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Maps `f` over the slice, in parallel when the `parallel` feature is
/// enabled. Output order matches input order.
#[cfg(not(feature = "parallel"))]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Sequential baseline with the same signature as [`map`].
pub fn map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_input_order() {
        let items: Vec<usize> = (0..1000).collect();
        let doubled = map(&items, |x| x * 2);
        let baseline = map_seq(&items, |x| x * 2);
        assert_eq!(doubled, baseline);
        assert_eq!(doubled[999], 1998);
    }

    #[test]
    fn map_handles_empty_input() {
        let items: Vec<u32> = Vec::new();
        assert!(map(&items, |x| x + 1).is_empty());
    }
}
