use std::time::Duration;

use base64::Engine as _;
use som_core::ingest::remote::SegmenterErrorBody;
use som_core::ingest::{PartitionSource, SegmenterMode, SegmenterRequest, SegmenterResponse};
use som_core::RegionSet;
use thiserror::Error;
use tokio::sync::Semaphore;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmenterError {
    #[error("segmenter transport failure: {message}")]
    Transport { message: String, retry_advised: bool },
    #[error("segmenter returned a malformed response: {0}")]
    Malformed(String),
    #[error("segmenter reported an error (HTTP {status}): {message}")]
    Service { status: u16, message: String },
    #[error("partition source is not a remote segmenter")]
    NotRemote,
}

/// Client for the external segmentation service.
pub struct SegmenterClient {
    http: reqwest::Client,
    timeout: Duration,
    permits: Semaphore,
}

impl SegmenterClient {
    pub fn new(max_in_flight: usize, timeout: Duration) -> Self {
        Self {
            http: reqwest::Client::new(),
            timeout,
            permits: Semaphore::new(max_in_flight.max(1)),
        }
    }

    pub async fn fetch_source(&self, source: &PartitionSource, png: &[u8]) -> Result<RegionSet, SegmenterError> {
        match source {
            PartitionSource::Remote {
                endpoint,
                granularity,
                mode,
            } => self.fetch_partition(endpoint, mode, granularity.as_deref(), png).await,
            _ => Err(SegmenterError::NotRemote),
        }
    }

    /// POSTs the image to `endpoint` and decodes the returned regions.
    pub async fn fetch_partition(
        &self,
        endpoint: &str,
        mode: &SegmenterMode,
        granularity: Option<&str>,
        png: &[u8],
    ) -> Result<RegionSet, SegmenterError> {
        let body = SegmenterRequest::new(
            base64::engine::general_purpose::STANDARD.encode(png),
            mode,
            granularity.map(str::to_string),
        );
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        let resp = self
            .http
            .post(endpoint)
            .timeout(self.timeout)
            .json(&body)
            .send()
            .await
            .map_err(|e| SegmenterError::Transport {
                message: e.to_string(),
                retry_advised: e.is_timeout() || e.is_connect(),
            })?;
        let status = resp.status().as_u16();
        let text = resp.text().await.map_err(|e| SegmenterError::Transport {
            message: e.to_string(),
            retry_advised: true,
        })?;
        if status >= 500 {
            return Err(SegmenterError::Transport {
                message: format!("HTTP {status}"),
                retry_advised: true,
            });
        }
        if let Ok(err) = serde_json::from_str::<SegmenterErrorBody>(&text) {
            return Err(SegmenterError::Service {
                status,
                message: err.error,
            });
        }
        if status >= 400 {
            return Err(SegmenterError::Service {
                status,
                message: text.chars().take(200).collect(),
            });
        }
        let parsed: SegmenterResponse =
            serde_json::from_str(&text).map_err(|e| SegmenterError::Malformed(e.to_string()))?;
        parsed
            .into_region_set()
            .map_err(|e| SegmenterError::Malformed(e.to_string()))
    }
}
