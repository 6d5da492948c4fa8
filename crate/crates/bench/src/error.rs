use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    /// Caught before any network call.
    #[error("configuration: {0}")]
    Config(String),
    #[error("cannot sample {requested} items from a population of {population}")]
    SampleTooLarge { requested: usize, population: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("no run records under {0}")]
    EmptyRun(PathBuf),
    #[error("run {dir} mixes tasks: expected {expected}, record {record} says {found}")]
    MixedTasks {
        dir: PathBuf,
        expected: String,
        record: String,
        found: String,
    },
    #[error(transparent)]
    Metric(#[from] som_core::metrics::MetricError),
}

impl BenchError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| BenchError::Io { path, source }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, BenchError::Config(_) | BenchError::SampleTooLarge { .. })
    }
}
