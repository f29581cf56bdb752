//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] runs on the
//! rayon pool; without it every call is sequential. Results are always
//! returned in input order, so any reduction over them is deterministic.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
            }
            _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        }
    }

    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_preserve_order() {
        let items: Vec<u32> = (0..100).collect();
        let seq = Execution::Sequential.map(&items, |i, &x| x * 2 + i as u32);
        let par = Execution::Parallel.map(&items, |i, &x| x * 2 + i as u32);
        assert_eq!(seq, par);
        assert_eq!(Execution::Parallel.map_range(5, |i| i), vec![0, 1, 2, 3, 4]);
    }
}
