//! Data-parallel iteration helper. Rollouts over distinct queries are
//! independent and read params immutably, so they map cleanly onto rayon.
//! Results come back in input order, keeping reductions deterministic
//! regardless of thread count. With the `parallel` feature disabled (or
//! `parallel == false`) everything runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_slice<T, U, F>(items: &[T], parallel: bool, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return items.par_iter().map(&f).collect();
        }
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let items: Vec<usize> = (0..1000).collect();
        let seq = map_slice(&items, false, |&x| x * 2);
        let par = map_slice(&items, true, |&x| x * 2);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 14);
    }
}
