//! Order-preserving parallel map over indices with scoped threads.

/// `(0..n).map(f)` computed on up to `threads` workers; output order is the
/// index order regardless of scheduling.
pub fn map_indexed<T: Send, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync,
{
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let f = &f;
        let per = n.div_ceil(threads);
        for (w, slots) in out.chunks_mut(per).enumerate() {
            scope.spawn(move || {
                for (j, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(f(w * per + j));
                }
            });
        }
    });
    out.into_iter()
        .map(|o| o.expect("every slot filled"))
        .collect()
}

/// Worker count from the environment: available cores, at least 1.
pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
