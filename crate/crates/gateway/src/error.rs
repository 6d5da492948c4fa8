use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("transport failure: {message}")]
    Transport { message: String, retry_advised: bool },
    #[error("no cached response for key {0} in replay-only mode")]
    CacheMiss(String),
    #[error("request budget of {0} exhausted")]
    BudgetExhausted(u64),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl GatewayError {
    /// Stable identifier for logs and run records.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Auth(_) => "auth",
            Self::RateLimited { .. } => "rate_limited",
            Self::Timeout(_) => "timeout",
            Self::Malformed(_) => "malformed_response",
            Self::Transport { .. } => "transport",
            Self::CacheMiss(_) => "cache_miss",
            Self::BudgetExhausted(_) => "budget_exhausted",
            Self::InvalidRequest(_) => "invalid_request",
            Self::Config(_) => "config",
        }
    }

    pub fn is_retryable(&self) -> bool {
        match self {
            Self::RateLimited { .. } | Self::Timeout(_) => true,
            Self::Transport { retry_advised, .. } => *retry_advised,
            _ => false,
        }
    }
}
