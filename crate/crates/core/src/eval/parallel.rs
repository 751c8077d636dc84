use std::num::NonZeroUsize;

/// Worker count: `CLAMP_KIT_THREADS` when set to a positive integer, otherwise
/// the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("CLAMP_KIT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, NonZeroUsize::get))
}

/// Maps `f` over `items` on up to [`worker_threads`] scoped threads. Output
/// order matches input order and each item is computed independently, so the
/// result does not depend on the schedule.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let threads = worker_threads().min(items.len());
    if threads <= 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(j, x)| f(c * chunk + j, x))
                        .collect::<Vec<R>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved() {
        let xs: Vec<u64> = (0..1000).collect();
        let ys = par_map(&xs, |i, &x| (i as u64, x * x));
        assert!(ys.iter().enumerate().all(|(i, &(j, y))| j == i as u64 && y == (i * i) as u64));
        assert!(par_map(&Vec::<u8>::new(), |_, _| 0).is_empty());
    }
}
