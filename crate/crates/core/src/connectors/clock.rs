use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

/// Millisecond clock relative to run start.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
    /// Blocks (or, for simulated time, jumps) until `now_ms() >= t`.
    fn sleep_until(&self, t: u64);
}

impl<C: Clock + ?Sized> Clock for &C {
    fn now_ms(&self) -> u64 {
        (**self).now_ms()
    }

    fn sleep_until(&self, t: u64) {
        (**self).sleep_until(t)
    }
}

impl<C: Clock + ?Sized> Clock for std::sync::Arc<C> {
    fn now_ms(&self) -> u64 {
        (**self).now_ms()
    }

    fn sleep_until(&self, t: u64) {
        (**self).sleep_until(t)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { start: Instant::now() }
    }

    pub fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    fn sleep_until(&self, t: u64) {
        let target = self.start + Duration::from_millis(t);
        let now = Instant::now();
        if target > now {
            std::thread::sleep(target - now);
        }
    }
}

/// Time only moves when told to. Shared between threads by reference.
#[derive(Debug, Default)]
pub struct SimulatedClock {
    now: AtomicU64,
}

impl SimulatedClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&self, t: u64) {
        self.now.fetch_max(t, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) {
        self.now.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for SimulatedClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep_until(&self, t: u64) {
        self.set(t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulated_clock_never_goes_back() {
        let c = SimulatedClock::new();
        c.sleep_until(50);
        c.set(10);
        assert_eq!(c.now_ms(), 50);
        c.advance(5);
        assert_eq!(c.now_ms(), 55);
    }

    #[test]
    fn system_clock_sleeps() {
        let c = SystemClock::new();
        c.sleep_until(5);
        assert!(c.now_ms() >= 5);
    }
}
