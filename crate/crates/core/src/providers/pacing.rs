//! Time source, rate limiting and retry backoff.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Monotonic time source that can also wait.
pub trait Clock: Send + Sync {
    /// Time elapsed since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, duration: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Clock that only moves when slept on. Sleeps return immediately.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: Mutex<Duration>,
    slept: Mutex<Vec<Duration>>,
}

impl VirtualClock {
    pub fn advance(&self, by: Duration) {
        *self.now.lock().unwrap() += by;
    }

    /// Every sleep requested so far, in order.
    pub fn sleeps(&self) -> Vec<Duration> {
        self.slept.lock().unwrap().clone()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, duration: Duration) {
        self.slept.lock().unwrap().push(duration);
        self.advance(duration);
    }
}

const WINDOW: Duration = Duration::from_secs(60);

/// Sliding-window limiter: at most `per_minute` acquisitions in any
/// 60-second window.
pub struct RateLimiter {
    per_minute: usize,
    clock: Arc<dyn Clock>,
    stamps: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn new(per_minute: u32, clock: Arc<dyn Clock>) -> Self {
        assert!(per_minute > 0, "requests_per_minute must be positive");
        Self {
            per_minute: per_minute as usize,
            clock,
            stamps: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks until a request may be sent, then records it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut stamps = self.stamps.lock().unwrap();
                let now = self.clock.now();
                while stamps
                    .front()
                    .is_some_and(|t| now.saturating_sub(*t) >= WINDOW)
                {
                    stamps.pop_front();
                }
                if stamps.len() < self.per_minute {
                    stamps.push_back(now);
                    return;
                }
                (stamps[0] + WINDOW).saturating_sub(now)
            };
            self.clock.sleep(wait.max(Duration::from_millis(1)));
        }
    }
}

/// Exponential backoff with jitter.
#[derive(Debug, Clone, Copy)]
pub struct Backoff {
    pub base: Duration,
    pub cap: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            cap: Duration::from_secs(60),
        }
    }
}

impl Backoff {
    /// Delay before retry number `retry` (0-based). `jitter` in `[0, 1)`
    /// scales the delay into `[d/2, d)` where `d = min(cap, base * 2^retry)`.
    pub fn delay(&self, retry: u32, jitter: f64) -> Duration {
        let exp = self.base.saturating_mul(1u32 << retry.min(20));
        let full = exp.min(self.cap);
        full.mul_f64(0.5 + 0.5 * jitter.clamp(0.0, 1.0))
    }
}
