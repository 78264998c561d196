//! Index-ordered parallel map over independent jobs. Worker count is capped
//! by the ELT_THREADS environment variable; results merge in job order no
//! matter which worker finishes first.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub fn worker_cap() -> usize {
    std::env::var("ELT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

pub fn parallel_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = worker_cap().min(items.len()).max(1);
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = (0..items.len()).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                *slots[i].lock().expect("slot poisoned") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot poisoned").expect("job ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_job_order() {
        let items: Vec<usize> = (0..64).collect();
        let out = parallel_map(&items, |i, &x| {
            assert_eq!(i, x);
            x * 2
        });
        assert_eq!(out, (0..64).map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn env_var_caps_workers() {
        // Touches process-global state; restore on exit.
        let prev = std::env::var("ELT_THREADS").ok();
        std::env::set_var("ELT_THREADS", "1");
        assert_eq!(worker_cap(), 1);
        std::env::set_var("ELT_THREADS", "3");
        assert_eq!(worker_cap(), 3);
        std::env::set_var("ELT_THREADS", "0");
        assert!(worker_cap() >= 1, "zero falls back to detection");
        match prev {
            Some(v) => std::env::set_var("ELT_THREADS", v),
            None => std::env::remove_var("ELT_THREADS"),
        }
    }
}
