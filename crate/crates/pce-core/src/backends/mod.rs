//! Pluggable black-box interfaces for the generator, the downstream
//! classifier, and the rewriter, plus the shared retry and concurrency
//! machinery their implementations use.
//!
//! The engine only ever sees these traits; whether calls go to an HTTP
//! endpoint or to the in-process simulator is invisible to it.

pub mod sim;

#[cfg(feature = "http")]
pub mod http;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClassifierOutput, SampleSet};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend {endpoint} unavailable after {attempts} attempt(s): {detail}")]
    Unavailable {
        endpoint: String,
        attempts: u32,
        detail: String,
    },
    #[error("backend {endpoint} timed out after {attempts} attempt(s)")]
    Timeout { endpoint: String, attempts: u32 },
    #[error("backend {endpoint} returned a malformed response (attempt {attempts}): {detail}")]
    MalformedResponse {
        endpoint: String,
        attempts: u32,
        detail: String,
    },
    #[error("backend {endpoint} does not support mode {mode}")]
    UnsupportedMode { endpoint: String, mode: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("missing environment variable {0} for API key")]
    MissingApiKey(String),
}

/// What a generator implementation can do, surfaced so runs can record it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorCapabilities {
    pub identity: String,
    pub supports_seed: bool,
    pub max_concurrent: usize,
}

/// The generative system under explanation. `generate` must return exactly
/// `k` samples; when `supports_seed` is set, sample `i` is produced with
/// seed `seed_base + i` so reruns reproduce the same set.
pub trait GeneratorBackend: Send + Sync {
    fn capabilities(&self) -> GeneratorCapabilities;
    fn generate(&self, prompt_text: &str, k: usize, seed_base: u64)
        -> Result<SampleSet, BackendError>;
}

/// The downstream classifier applied to generated output only. From the
/// caller's viewpoint `classify` is a pure function of the text, so results
/// for identical text may be cached.
pub trait ClassifierBackend: Send + Sync {
    fn identity(&self) -> String;
    fn classify(&self, text: &str) -> Result<ClassifierOutput, BackendError>;
}

/// A rewrite request: one mode, one payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewriteRequest {
    Synonym { word: String },
    Paraphrase { sentence: String },
    ComposePrompt { words: Vec<String> },
}

impl RewriteRequest {
    pub fn mode_name(&self) -> &'static str {
        match self {
            RewriteRequest::Synonym { .. } => "synonym",
            RewriteRequest::Paraphrase { .. } => "paraphrase",
            RewriteRequest::ComposePrompt { .. } => "compose_prompt",
        }
    }
}

/// Synonym, paraphrase, and prompt-composition service.
pub trait RewriterBackend: Send + Sync {
    fn identity(&self) -> String;
    fn rewrite(&self, request: &RewriteRequest) -> Result<String, BackendError>;
}

/// Retry with exponential backoff. Delay before attempt `i` (1-based retry)
/// is `backoff_base * 2^(i-1)`, so delays are monotone non-decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            backoff_base: Duration::from_millis(100),
        }
    }
}

impl RetryPolicy {
    pub fn no_retries() -> Self {
        Self {
            max_retries: 0,
            backoff_base: Duration::ZERO,
        }
    }

    /// The backoff delay preceding retry number `retry` (1-based).
    pub fn delay_for_retry(&self, retry: u32) -> Duration {
        self.backoff_base * 2u32.saturating_pow(retry.saturating_sub(1))
    }

    /// Runs `op` up to `1 + max_retries` times. `transient` decides whether
    /// a failure is worth retrying; `sleep` is injectable so tests can
    /// observe the delay sequence instead of waiting it out.
    pub fn run<T, E, Op, Tr, Sl>(
        &self,
        mut op: Op,
        transient: Tr,
        mut sleep: Sl,
    ) -> Result<T, (E, u32)>
    where
        Op: FnMut(u32) -> Result<T, E>,
        Tr: Fn(&E) -> bool,
        Sl: FnMut(Duration),
    {
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match op(attempts) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    if attempts > self.max_retries || !transient(&e) {
                        return Err((e, attempts));
                    }
                    sleep(self.delay_for_retry(attempts));
                }
            }
        }
    }
}

/// Bounds in-flight requests to one endpoint. Acquire blocks until a slot
/// frees up; the guard releases on drop.
pub struct ConcurrencyGate {
    cap: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl ConcurrencyGate {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> GateGuard<'_> {
        let mut count = self.in_flight.lock().unwrap();
        while *count >= self.cap {
            count = self.freed.wait(count).unwrap();
        }
        *count += 1;
        GateGuard { gate: self }
    }
}

pub struct GateGuard<'a> {
    gate: &'a ConcurrencyGate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut count = self.gate.in_flight.lock().unwrap();
        *count -= 1;
        self.gate.freed.notify_one();
    }
}

/// Wraps a generator and counts calls; used to verify cache behavior and
/// batch resumability without touching the wrapped implementation.
pub struct CountingGenerator<G> {
    inner: G,
    calls: AtomicUsize,
}

impl<G: GeneratorBackend> CountingGenerator<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<G: GeneratorBackend> GeneratorBackend for CountingGenerator<G> {
    fn capabilities(&self) -> GeneratorCapabilities {
        self.inner.capabilities()
    }

    fn generate(
        &self,
        prompt_text: &str,
        k: usize,
        seed_base: u64,
    ) -> Result<SampleSet, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(prompt_text, k, seed_base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn retry_respects_attempt_cap_and_backoff_monotonicity() {
        let policy = RetryPolicy {
            max_retries: 3,
            backoff_base: Duration::from_millis(10),
        };
        let mut delays = Vec::new();
        let result: Result<(), (String, u32)> = policy.run(
            |_| Err("down".to_string()),
            |_| true,
            |d| delays.push(d),
        );
        let (_, attempts) = result.unwrap_err();
        assert_eq!(attempts, 4); // initial try + 3 retries
        assert_eq!(delays.len(), 3);
        assert!(delays.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(delays[0], Duration::from_millis(10));
        assert_eq!(delays[2], Duration::from_millis(40));
    }

    #[test]
    fn retry_stops_on_permanent_errors() {
        let policy = RetryPolicy {
            max_retries: 5,
            backoff_base: Duration::from_millis(1),
        };
        let mut tries = 0;
        let result: Result<(), (String, u32)> = policy.run(
            |_| {
                tries += 1;
                Err("bad request".to_string())
            },
            |_| false,
            |_| {},
        );
        assert_eq!(result.unwrap_err().1, 1);
        assert_eq!(tries, 1);
    }

    #[test]
    fn retry_succeeds_after_transient_failures() {
        let policy = RetryPolicy {
            max_retries: 3,
            backoff_base: Duration::ZERO,
        };
        let mut tries = 0;
        let result: Result<u32, (String, u32)> = policy.run(
            |attempt| {
                tries += 1;
                if attempt < 3 {
                    Err("flaky".to_string())
                } else {
                    Ok(attempt)
                }
            },
            |_| true,
            |_| {},
        );
        assert_eq!(result.unwrap(), 3);
        assert_eq!(tries, 3);
    }

    #[test]
    fn gate_never_exceeds_cap() {
        let gate = Arc::new(ConcurrencyGate::new(3));
        let peak = Arc::new(AtomicUsize::new(0));
        let current = Arc::new(AtomicUsize::new(0));
        let mut handles = Vec::new();
        for _ in 0..16 {
            let gate = Arc::clone(&gate);
            let peak = Arc::clone(&peak);
            let current = Arc::clone(&current);
            handles.push(std::thread::spawn(move || {
                let _guard = gate.acquire();
                let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(5));
                current.fetch_sub(1, Ordering::SeqCst);
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }
}
