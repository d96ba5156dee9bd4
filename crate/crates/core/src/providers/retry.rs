use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::ProviderError;

/// Exponential backoff without jitter: delay before retry `k` (1-based) is
/// `min(base * multiplier^(k-1), max_delay)`, so delays never decrease.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub multiplier: f64,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_delay: Duration::from_millis(500),
            multiplier: 2.0,
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn no_retry() -> Self {
        RetryPolicy {
            max_attempts: 1,
            ..Default::default()
        }
    }

    pub fn delay_before_retry(&self, retry: u32) -> Duration {
        let factor = self.multiplier.max(1.0).powi(retry.saturating_sub(1) as i32);
        let secs = (self.base_delay.as_secs_f64() * factor).min(self.max_delay.as_secs_f64());
        Duration::from_secs_f64(secs)
    }

    /// Runs `op` until it succeeds, fails with a non-transient error, or the
    /// attempt budget is spent. `sleep` is called between attempts. Returns
    /// the value and the number of attempts used.
    pub fn run<T>(
        &self,
        sleep: &dyn Fn(Duration),
        mut op: impl FnMut(u32) -> Result<T, ProviderError>,
    ) -> Result<(T, u32), ProviderError> {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(v) => return Ok((v, attempt)),
                Err(e) if !e.is_transient() => return Err(e),
                Err(e) if attempt >= max => {
                    tracing::error!(attempts = attempt, error = %e, "retry budget exhausted");
                    return Err(ProviderError::Exhausted {
                        attempts: attempt,
                        last: e.to_string(),
                    });
                }
                Err(e) => {
                    let delay = self.delay_before_retry(attempt);
                    tracing::warn!(attempt, max_attempts = max, error = %e, ?delay, "retrying");
                    sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}
