//! Bounded worker-thread helper. The `FBR_THREADS` environment variable
//! caps the pool; results are merged in input order, so parallel and serial
//! execution produce identical output.

pub fn max_threads() -> usize {
    if let Ok(v) = std::env::var("FBR_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Apply `f` to `0..n` across up to `max_threads()` worker threads,
/// returning results in index order.
pub fn parallel_map<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync,
{
    let threads = max_threads().min(n.max(1));
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    let mut results: Vec<Option<U>> = (0..n).map(|_| None).collect();
    let f = &f;
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (t, slot) in results.chunks_mut(chunk).enumerate() {
            let start = t * chunk;
            handles.push(scope.spawn(move || {
                for (off, s) in slot.iter_mut().enumerate() {
                    *s = Some(f(start + off));
                }
            }));
        }
        for h in handles {
            h.join().expect("worker thread panicked");
        }
    });
    results.into_iter().map(|r| r.unwrap()).collect()
}
