use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::cache::{CacheEntry, CacheLookup, DiskCache};
use crate::request::{ChatRequest, ChatResponse};
use crate::transport::ChatTransport;
use crate::GatewayError;

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

/// How the gateway uses its cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Always ask the network; store what comes back.
    Live,
    /// Use the cache when it has the answer, otherwise ask and store.
    Record,
    /// Never touch the network. A miss is an error.
    ReplayOnly,
}

impl CacheMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CacheMode::Live => "live",
            CacheMode::Record => "record",
            CacheMode::ReplayOnly => "replay",
        }
    }
}

impl FromStr for CacheMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(CacheMode::Live),
            "record" => Ok(CacheMode::Record),
            "replay" | "replay_only" | "replay-only" => Ok(CacheMode::ReplayOnly),
            other => Err(format!("unknown mode {other:?} (live, record, replay)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(8),
            timeout: Duration::from_secs(120),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

pub struct GatewayBuilder {
    transport: Arc<dyn ChatTransport>,
    cache: Option<DiskCache>,
    mode: CacheMode,
    policy: RetryPolicy,
    max_in_flight: usize,
    budget: Option<u64>,
}

impl GatewayBuilder {
    pub fn cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn mode(mut self, mode: CacheMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n;
        self
    }

    /// Caps the number of requests that reach the network.
    pub fn budget(mut self, n: Option<u64>) -> Self {
        self.budget = n;
        self
    }

    pub fn build(self) -> Result<Gateway, GatewayError> {
        if self.mode != CacheMode::Live && self.cache.is_none() {
            return Err(GatewayError::Config(format!(
                "{} mode needs a cache directory",
                self.mode.as_str()
            )));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be at least 1".into()));
        }
        Ok(Gateway {
            transport: self.transport,
            cache: self.cache,
            mode: self.mode,
            policy: self.policy,
            permits: Arc::new(Semaphore::new(self.max_in_flight)),
            budget: self.budget,
            network_calls: Arc::new(AtomicU64::new(0)),
        })
    }
}

/// Sends chat requests through a cache, with retries and a bound on
/// concurrent network requests.
#[derive(Clone)]
pub struct Gateway {
    transport: Arc<dyn ChatTransport>,
    cache: Option<DiskCache>,
    mode: CacheMode,
    policy: RetryPolicy,
    permits: Arc<Semaphore>,
    budget: Option<u64>,
    network_calls: Arc<AtomicU64>,
}

impl Gateway {
    pub fn builder(transport: Arc<dyn ChatTransport>) -> GatewayBuilder {
        GatewayBuilder {
            transport,
            cache: None,
            mode: CacheMode::Record,
            policy: RetryPolicy::default(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            budget: None,
        }
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn cache(&self) -> Option<&DiskCache> {
        self.cache.as_ref()
    }

    /// Requests that went (or tried to go) to the network.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn cache_lookup(&self, req: &ChatRequest) -> Option<ChatResponse> {
        let cache = self.cache.as_ref()?;
        match cache.lookup(&req.cache_key()) {
            CacheLookup::Hit(e) => Some(cached_response(e)),
            _ => None,
        }
    }

    pub async fn send_chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let key = req.cache_key();
        let mut corrupt = false;
        if self.mode != CacheMode::Live {
            let cache = self.cache.as_ref().expect("checked at build");
            match cache.lookup(&key) {
                CacheLookup::Hit(entry) => return Ok(cached_response(entry)),
                CacheLookup::Miss => {}
                CacheLookup::Corrupt(why) => {
                    tracing::warn!(%key, %why, "ignoring corrupt cache entry");
                    corrupt = true;
                }
            }
            if self.mode == CacheMode::ReplayOnly {
                return Err(GatewayError::CacheMiss(key.to_string()));
            }
        }

        self.take_budget()?;
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        let started = Instant::now();
        let reply = self.with_retries(req).await?;
        let latency_ms = started.elapsed().as_millis() as u64;

        let mut text = reply.text;
        let mut model_echo = reply.model_echo;
        if let Some(cache) = &self.cache {
            if corrupt {
                let _ = cache.remove(&key);
            }
            let entry = CacheEntry {
                key: key.clone(),
                model: req.model.clone(),
                text: text.clone(),
                model_echo: model_echo.clone(),
            };
            match cache.store(&entry) {
                Ok(true) => {}
                // someone else stored this key first; theirs is what replays will see
                Ok(false) => {
                    if let CacheLookup::Hit(existing) = cache.lookup(&key) {
                        text = existing.text;
                        model_echo = existing.model_echo;
                    }
                }
                Err(e) => tracing::warn!(%key, error = %e, "could not write cache entry"),
            }
        }
        Ok(ChatResponse {
            text,
            model_echo,
            latency_ms,
            from_cache: false,
            key,
        })
    }

    fn take_budget(&self) -> Result<(), GatewayError> {
        let Some(limit) = self.budget else {
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            return Ok(());
        };
        self.network_calls
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < limit).then_some(n + 1))
            .map(|_| ())
            .map_err(|_| GatewayError::BudgetExhausted(limit))
    }

    async fn with_retries(&self, req: &ChatRequest) -> Result<crate::TransportReply, GatewayError> {
        let mut attempt = 0;
        loop {
            match self.transport.complete(req, self.policy.timeout).await {
                Ok(r) => return Ok(r),
                Err(e) if e.is_retryable() && attempt < self.policy.retries => {
                    let mut wait = self.policy.backoff(attempt);
                    if let GatewayError::RateLimited { retry_after: Some(ra) } = &e {
                        wait = wait.max(*ra);
                    }
                    tracing::debug!(code = e.code(), attempt, ?wait, "retrying");
                    tokio::time::sleep(wait).await;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn cached_response(e: CacheEntry) -> ChatResponse {
    ChatResponse {
        text: e.text,
        model_echo: e.model_echo,
        latency_ms: 0,
        from_cache: true,
        key: e.key,
    }
}
