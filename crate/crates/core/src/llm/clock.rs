use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Time source for backoff and rate limiting.
pub trait Clock: Send + Sync {
    /// Elapsed time since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Manually advanced clock; `sleep` moves time forward instantly.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: Mutex<Duration>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

const WINDOW: Duration = Duration::from_secs(60);

/// Sliding-window requests-per-minute budget. Each grant is logged; a
/// caller blocks until fewer than `rpm` grants fall inside the last minute.
#[derive(Debug)]
pub struct RateLimiter {
    rpm: u32,
    grants: Mutex<VecDeque<Duration>>,
    log: Mutex<Vec<Duration>>,
}

impl RateLimiter {
    pub fn new(rpm: u32) -> Self {
        Self { rpm, grants: Mutex::new(VecDeque::new()), log: Mutex::new(Vec::new()) }
    }

    pub fn unlimited() -> Self {
        Self::new(0)
    }

    pub fn rpm(&self) -> u32 {
        self.rpm
    }

    pub fn acquire(&self, clock: &dyn Clock) {
        if self.rpm == 0 {
            return;
        }
        loop {
            let wait = {
                let mut grants = self.grants.lock().unwrap();
                let now = clock.now();
                while grants.front().is_some_and(|&t| t + WINDOW <= now) {
                    grants.pop_front();
                }
                if grants.len() < self.rpm as usize {
                    grants.push_back(now);
                    self.log.lock().unwrap().push(now);
                    return;
                }
                grants.front().copied().expect("nonempty at capacity") + WINDOW - now
            };
            clock.sleep(wait);
        }
    }

    /// Every grant time so far, in grant order.
    pub fn grant_times(&self) -> Vec<Duration> {
        self.log.lock().unwrap().clone()
    }

    /// Largest number of grants inside any half-open 60 s window.
    pub fn peak_per_window(&self) -> usize {
        let mut times = self.grant_times();
        times.sort();
        let mut best = 0;
        let mut lo = 0;
        for hi in 0..times.len() {
            while times[lo] + WINDOW <= times[hi] {
                lo += 1;
            }
            best = best.max(hi - lo + 1);
        }
        best
    }
}
