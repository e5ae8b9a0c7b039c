//! Order-preserving data-parallel map.
//!
//! With the `parallel` feature the work fans out over the rayon pool;
//! without it everything runs on the calling thread. Results always come
//! back in input order, so reductions over them are deterministic either way.

use crate::error::Result;

/// Maps `f` over `items` on the calling thread.
pub fn seq_map<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn par_map<T, R>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R>
where
    T: Sync,
    R: Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, R>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R>
where
    T: Sync,
    R: Send,
{
    seq_map(items, f)
}

/// Like [`par_map`], returning the first error in input order.
pub fn try_par_map<T, R>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
{
    par_map(items, f).into_iter().collect()
}

/// Whether [`par_map`] actually runs in parallel in this build.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn par_map_keeps_order() {
        let xs: Vec<u64> = (0..1000).collect();
        assert_eq!(par_map(&xs, |x| x * x), seq_map(&xs, |x| x * x));
    }

    #[test]
    fn first_error_wins() {
        let xs = [1, 2, 3, 4];
        let r = try_par_map(&xs, |&x| {
            if x >= 2 {
                Err(Error::Config(format!("item {x}")))
            } else {
                Ok(x)
            }
        });
        assert!(matches!(r, Err(Error::Config(m)) if m == "item 2"));
    }
}
