//! Order-preserving parallel map, sequential when the `parallel` feature is off.

use crate::error::{KqseError, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

pub fn try_par_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    par_map(items, f).into_iter().collect()
}

/// Run `f` on a pool of `workers` threads (`None` uses the global pool).
pub fn with_workers<R, F>(workers: Option<usize>, f: F) -> Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match workers {
        Some(0) => Err(KqseError::Config("workers must be at least 1".into())),
        #[cfg(feature = "parallel")]
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| KqseError::Config(format!("thread pool: {e}")))
            .map(|pool| pool.install(f)),
        _ => Ok(f()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u64> = (0..1000).collect();
        let ys = with_workers(Some(3), || par_map(&xs, |x| x * x)).unwrap();
        assert_eq!(ys, xs.iter().map(|x| x * x).collect::<Vec<_>>());
        assert!(with_workers(Some(0), || 1).is_err());
    }

    #[test]
    fn first_error_wins() {
        let xs: Vec<i32> = (0..10).collect();
        let r = try_par_map(&xs, |&x| {
            if x == 4 {
                Err(KqseError::InvalidParameter("four".into()))
            } else {
                Ok(x)
            }
        });
        assert!(r.is_err());
    }
}
