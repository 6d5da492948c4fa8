//! Clients for the remote services the toolkit talks to: an
//! OpenAI-compatible chat endpoint and a segmentation service.
//!
//! Chat responses go through a content-addressed disk cache so that
//! benchmark runs can be replayed without network access.

mod cache;
mod client;
mod error;
mod request;
mod segmenter;
mod transport;

pub use cache::{CacheEntry, CacheLookup, DiskCache};
pub use client::{CacheMode, Gateway, GatewayBuilder, RetryPolicy, DEFAULT_MAX_IN_FLIGHT};
pub use error::GatewayError;
pub use request::{CacheKey, ChatRequest, ChatResponse, Part, Role, Turn};
pub use segmenter::{SegmenterClient, SegmenterError};
pub use transport::{
    ChatTransport, OpenAiTransport, RefusingTransport, ScriptedTransport, TransportReply, API_KEY_ENV,
};
