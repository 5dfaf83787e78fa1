use alloc::vec::Vec;

/// Runs a per-client step over every client.
///
/// Implementations may process clients concurrently but must return results
/// in input order. Each closure call only touches its own item, so any
/// schedule gives the same outcome.
pub trait ClientExecutor {
    fn map<I, T, F>(&self, items: &mut [I], f: F) -> Vec<T>
    where
        I: Send,
        T: Send,
        F: Fn(&mut I) -> T + Sync;
}

/// Processes clients one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl ClientExecutor for Sequential {
    fn map<I, T, F>(&self, items: &mut [I], f: F) -> Vec<T>
    where
        I: Send,
        T: Send,
        F: Fn(&mut I) -> T + Sync,
    {
        items.iter_mut().map(f).collect()
    }
}

/// Monotonic seconds, for round timing. The core has no clock of its own.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Always reads zero; keeps results free of timing noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}
