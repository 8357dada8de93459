use std::thread;
use std::time::Duration;

/// Retry with exponential backoff: attempt `0..=retries`, sleeping
/// `base_delay * 2^attempt` (capped at `max_delay`) between attempts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn new(retries: u32) -> Self {
        Self {
            retries,
            ..Self::default()
        }
    }

    /// No sleeping between attempts; for tests against local mocks.
    pub fn immediate(retries: u32) -> Self {
        Self {
            retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Runs `op` until it succeeds, the error is not retryable, or the
    /// attempts are exhausted. The last error is returned.
    pub fn run<T, E>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, E>,
        retryable: impl Fn(&E) -> bool,
    ) -> Result<T, E> {
        let mut attempt = 0;
        loop {
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e) if attempt < self.retries && retryable(&e) => {
                    thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            retries: 5,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(500),
        };
        let ds: Vec<_> = (0..5).map(|a| p.delay(a).as_millis()).collect();
        assert_eq!(ds, [100, 200, 400, 500, 500]);
    }

    #[test]
    fn stops_on_success_or_exhaustion() {
        let mut calls = 0;
        let r: Result<u32, &str> = RetryPolicy::immediate(3).run(
            |a| {
                calls += 1;
                if a < 2 { Err("no") } else { Ok(a) }
            },
            |_| true,
        );
        assert_eq!((r, calls), (Ok(2), 3));

        let mut calls = 0;
        let r: Result<(), &str> = RetryPolicy::immediate(2).run(|_| {
            calls += 1;
            Err("no")
        }, |_| true);
        assert_eq!((r, calls), (Err("no"), 3));

        let mut calls = 0;
        let r: Result<(), &str> = RetryPolicy::immediate(5).run(|_| {
            calls += 1;
            Err("fatal")
        }, |_| false);
        assert_eq!((r, calls), (Err("fatal"), 1));
    }
}
