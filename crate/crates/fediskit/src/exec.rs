//! Executors and clocks that need the standard library.

use std::num::NonZeroUsize;
use std::time::Instant;

use fediskit_core::protocol::{ClientExecutor, Clock};

/// Splits clients into contiguous chunks, one scoped thread per chunk.
#[derive(Debug, Clone, Copy)]
pub struct Threaded {
    threads: NonZeroUsize,
}

impl Threaded {
    pub fn new(threads: NonZeroUsize) -> Self {
        Threaded { threads }
    }

    /// One thread per available core.
    pub fn available() -> Self {
        Threaded::new(std::thread::available_parallelism().unwrap_or(NonZeroUsize::MIN))
    }

    pub fn threads(&self) -> usize {
        self.threads.get()
    }
}

impl ClientExecutor for Threaded {
    fn map<I, T, F>(&self, items: &mut [I], f: F) -> Vec<T>
    where
        I: Send,
        T: Send,
        F: Fn(&mut I) -> T + Sync,
    {
        if self.threads.get() == 1 || items.len() < 2 {
            return items.iter_mut().map(f).collect();
        }
        let chunk = items.len().div_ceil(self.threads.get());
        let f = &f;
        std::thread::scope(|scope| {
            let handles: Vec<_> = items
                .chunks_mut(chunk)
                .map(|part| scope.spawn(move || part.iter_mut().map(f).collect::<Vec<T>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
                .collect()
        })
    }
}

/// Seconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct StdClock(Instant);

impl StdClock {
    pub fn start() -> Self {
        StdClock(Instant::now())
    }
}

impl Default for StdClock {
    fn default() -> Self {
        StdClock::start()
    }
}

impl Clock for StdClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
