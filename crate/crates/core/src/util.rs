use std::sync::atomic::{AtomicUsize, Ordering};

/// Map `f` over `items` on up to `parallelism` worker threads, returning
/// results in input order. `parallelism <= 1` runs sequentially on the
/// calling thread, which keeps thread-local instrumentation attributable.
pub(crate) fn parallel_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if parallelism <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }

    let workers = parallelism.min(items.len());
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = Vec::with_capacity(items.len());
    slots.resize_with(items.len(), || None);
    let slot_ptr = SlotPtr(slots.as_mut_ptr());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let next = &next;
            let f = &f;
            let slot_ptr = &slot_ptr;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                // Each index is claimed by exactly one worker.
                unsafe { *slot_ptr.0.add(i) = Some(r) };
            });
        }
    });

    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

struct SlotPtr<R>(*mut Option<R>);
unsafe impl<R: Send> Sync for SlotPtr<R> {}
