use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use super::{ChatProvider, ChatRequest, ChatResponse, ProviderError};

#[derive(Debug, Clone, PartialEq)]
pub struct ThrottleConfig {
    pub max_in_flight: usize,
    /// 0 disables the rate ceiling.
    pub requests_per_window: u32,
    pub window: Duration,
}

impl ThrottleConfig {
    pub fn per_minute(max_in_flight: usize, requests_per_minute: u32) -> Self {
        ThrottleConfig {
            max_in_flight,
            requests_per_window: requests_per_minute,
            window: Duration::from_secs(60),
        }
    }
}

impl Default for ThrottleConfig {
    fn default() -> Self {
        Self::per_minute(4, 0)
    }
}

/// Wraps a provider with an in-flight cap and a sliding-window request
/// ceiling shared by every thread that calls it.
pub struct Throttled<P> {
    inner: P,
    config: ThrottleConfig,
    in_flight: Mutex<usize>,
    released: Condvar,
    recent: Mutex<VecDeque<Instant>>,
}

impl<P: ChatProvider> Throttled<P> {
    pub fn new(inner: P, config: ThrottleConfig) -> Self {
        Throttled {
            inner,
            config: ThrottleConfig {
                max_in_flight: config.max_in_flight.max(1),
                ..config
            },
            in_flight: Mutex::new(0),
            released: Condvar::new(),
            recent: Mutex::new(VecDeque::new()),
        }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    fn acquire(&self) {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.config.max_in_flight {
            n = self.released.wait(n).unwrap();
        }
        *n += 1;
    }

    fn release(&self) {
        *self.in_flight.lock().unwrap() -= 1;
        self.released.notify_one();
    }

    fn wait_for_rate_slot(&self) {
        let limit = self.config.requests_per_window as usize;
        if limit == 0 {
            return;
        }
        loop {
            let wait = {
                let mut recent = self.recent.lock().unwrap();
                let now = Instant::now();
                while recent
                    .front()
                    .is_some_and(|t| now.duration_since(*t) >= self.config.window)
                {
                    recent.pop_front();
                }
                if recent.len() < limit {
                    recent.push_back(now);
                    return;
                }
                self.config.window - now.duration_since(recent[0])
            };
            std::thread::sleep(wait);
        }
    }
}

impl<P: ChatProvider> ChatProvider for Throttled<P> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn context_tokens(&self) -> Option<usize> {
        self.inner.context_tokens()
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.acquire();
        self.wait_for_rate_slot();
        let out = self.inner.complete(req);
        self.release();
        out
    }
}

/// Applies `f` to every item on up to `workers` threads and returns results
/// in input order, whatever order they complete in.
pub fn dispatch_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(i, item);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    struct Slow {
        current: AtomicUsize,
        peak: AtomicUsize,
    }

    impl ChatProvider for Slow {
        fn id(&self) -> &str {
            "slow"
        }
        fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(15));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok(ChatResponse {
                text: req.user.clone(),
                prompt_tokens: 0,
                completion_tokens: 0,
                provider_id: "slow".into(),
                attempts: 1,
            })
        }
    }

    fn slow() -> Slow {
        Slow {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    #[test]
    fn in_flight_cap_holds_under_contention() {
        let p = Throttled::new(slow(), ThrottleConfig::per_minute(2, 0));
        let reqs: Vec<ChatRequest> = (0..12).map(|i| ChatRequest::new("s", i.to_string())).collect();
        let out = dispatch_ordered(&reqs, 8, |_, r| p.complete(r).unwrap().text);
        assert_eq!(out, (0..12).map(|i| i.to_string()).collect::<Vec<_>>());
        assert!(p.inner().peak.load(Ordering::SeqCst) <= 2);
        assert!(p.inner().peak.load(Ordering::SeqCst) >= 1);
    }

    #[test]
    fn rate_ceiling_delays_excess_requests() {
        let p = Throttled::new(
            slow(),
            ThrottleConfig {
                max_in_flight: 4,
                requests_per_window: 2,
                window: Duration::from_millis(150),
            },
        );
        let start = Instant::now();
        for i in 0..4 {
            p.complete(&ChatRequest::new("s", i.to_string())).unwrap();
        }
        assert!(start.elapsed() >= Duration::from_millis(150));
    }

    #[test]
    fn ordered_results_with_one_worker_and_empty_input() {
        let empty: Vec<u8> = Vec::new();
        assert!(dispatch_ordered(&empty, 4, |_, x| *x).is_empty());
        assert_eq!(dispatch_ordered(&[3, 1, 2], 1, |i, x| (i, *x)), vec![(0, 3), (1, 1), (2, 2)]);
    }
}
