use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::ProviderError;

/// Retry and pacing settings for provider calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// First backoff; doubles on each further retry.
    #[serde(with = "millis")]
    pub base_delay: Duration,
    #[serde(with = "millis")]
    pub max_delay: Duration,
    /// Minimum gap between the starts of consecutive calls.
    #[serde(with = "millis")]
    pub inter_call_delay: Duration,
}

impl RetryPolicy {
    /// Defaults for live endpoints: 2 s between calls, 1 s initial backoff.
    pub fn live() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(60),
            inter_call_delay: Duration::from_secs(2),
        }
    }

    /// No waiting at all; for offline providers.
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
            inter_call_delay: Duration::ZERO,
        }
    }

    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(31)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay.max(self.base_delay))
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy::live()
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// Process-wide gate keeping at least `delay` between the end of one call
/// and the start of the next. With a non-zero delay, calls from all threads
/// sharing the gate run one at a time.
#[derive(Debug)]
pub struct Throttle {
    delay: Duration,
    last_end: Mutex<Option<Instant>>,
}

impl Throttle {
    pub fn new(delay: Duration) -> Self {
        Throttle { delay, last_end: Mutex::new(None) }
    }

    pub fn delay(&self) -> Duration {
        self.delay
    }

    pub fn run<T>(&self, op: impl FnOnce() -> T) -> T {
        if self.delay.is_zero() {
            return op();
        }
        let mut last_end = self.last_end.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(prev) = *last_end {
            let elapsed = prev.elapsed();
            if elapsed < self.delay {
                thread::sleep(self.delay - elapsed);
            }
        }
        let out = op();
        *last_end = Some(Instant::now());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retried<T> {
    pub value: T,
    /// Failed attempts before the successful one.
    pub retries: u32,
}

/// Runs `op` through the throttle, retrying retryable errors with
/// exponential backoff up to `policy.max_retries` times.
pub fn throttle_and_retry<T>(
    policy: &RetryPolicy,
    throttle: &Throttle,
    mut op: impl FnMut() -> Result<T, ProviderError>,
) -> Result<Retried<T>, ProviderError> {
    let mut retries = 0;
    loop {
        match throttle.run(&mut op) {
            Ok(value) => return Ok(Retried { value, retries }),
            Err(e) if !e.is_retryable() => return Err(e),
            Err(e) if retries >= policy.max_retries => {
                return Err(ProviderError::Exhausted { attempts: retries + 1, last: Box::new(e) })
            }
            Err(e) => {
                log::debug!("retryable provider error ({e}), retry {}", retries + 1);
                thread::sleep(policy.backoff(retries));
                retries += 1;
            }
        }
    }
}
