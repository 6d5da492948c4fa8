use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use som_core::alloc::AllocationConfig;
use som_core::ingest::IngestConfig;
use som_core::render::MarkStyle;
use som_core::TaskKind;
use som_gateway::{CacheMode, DEFAULT_MAX_IN_FLIGHT};

use crate::BenchError;

fn default_mode() -> CacheMode {
    CacheMode::Record
}

fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

/// One benchmark run, as read from a JSON spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub task: TaskKind,
    pub dataset_root: PathBuf,
    /// Dataset index, relative to `dataset_root` unless absolute.
    pub annotation_path: PathBuf,
    pub sample_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub style: MarkStyle,
    /// Derived from each image's size when absent.
    #[serde(default)]
    pub alloc: Option<AllocationConfig>,
    pub model: String,
    #[serde(default = "default_mode")]
    pub mode: CacheMode,
    /// Base URL of the chat endpoint.
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Defaults to `<out>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Upper bound on network requests for the run.
    #[serde(default)]
    pub budget: Option<u64>,
    /// Append the answer-format request to every task prompt.
    #[serde(default)]
    pub format_hint: bool,
    #[serde(default)]
    pub template_dir: Option<PathBuf>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

impl BenchSpec {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let bytes = std::fs::read(path).map_err(BenchError::io(path))?;
        serde_json::from_slice(&bytes).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.sample_size == 0 {
            return bad("sample_size must be at least 1".into());
        }
        if self.task == TaskKind::FreeChat {
            return bad("free_chat has no benchmark metric".into());
        }
        if self.model.trim().is_empty() {
            return bad("model is empty".into());
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        self.ingest.validate().map_err(BenchError::Config)?;
        self.style.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        if let Some(a) = &self.alloc {
            a.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        }
        if self.mode != CacheMode::ReplayOnly && self.budget.is_none() {
            return bad(format!("{} mode needs a request budget", self.mode.as_str()));
        }
        Ok(())
    }

    pub fn annotation_file(&self) -> PathBuf {
        self.dataset_root.join(&self.annotation_path)
    }

    /// First 16 hex digits of a digest over the fields that define the
    /// experiment. Mode, endpoint, cache location, budget and concurrency
    /// only change how answers are obtained and are left out.
    pub fn hash(&self) -> String {
        let mut identity = self.clone();
        identity.mode = CacheMode::Record;
        identity.endpoint = None;
        identity.cache_dir = None;
        identity.budget = None;
        identity.max_in_flight = DEFAULT_MAX_IN_FLIGHT;
        let json = serde_json::to_vec(&identity).expect("spec serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
