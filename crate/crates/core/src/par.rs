//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over the rayon pool;
//! without it, or when [`Execution::Sequential`] is requested explicitly,
//! the same closures run in a plain loop. Results are always returned in
//! index order, so reductions over them are deterministic.

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

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
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

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map_slice<I, T, F>(exec: Execution, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    map_range(exec, items.len(), |i| f(&items[i]))
}

/// Run `op` with at most `workers` threads. `None` or `Sequential` runs it
/// on the current thread's pool unchanged.
pub fn with_workers<R, F>(exec: Execution, workers: Option<usize>, op: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match (exec, workers) {
        #[cfg(feature = "parallel")]
        (Execution::Parallel, Some(n)) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(op),
            Err(_) => op(),
        },
        _ => op(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let par = map_range(Execution::default(), 1000, |i| i * i);
        let seq = map_range(Execution::Sequential, 1000, |i| i * i);
        assert_eq!(par, seq);
        assert_eq!(with_workers(Execution::default(), Some(2), || map_slice(Execution::default(), &[1, 2, 3], |x| x + 1)), vec![2, 3, 4]);
    }
}
