use std::path::PathBuf;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),

    #[error("document {0} is empty after normalization")]
    EmptyDocument(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("corpus {0} contains no parseable files")]
    EmptyCorpus(PathBuf),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shard {0} failed digest verification")]
    CorruptShard(u32),

    #[error("format error: {0}")]
    Format(String),

    #[error("shape mismatch: expected dimension {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("training error: {0}")]
    Train(String),

    #[error("duplicate vector id {0}")]
    DuplicateId(u32),

    #[error("migration error: {0}")]
    Migration(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("engine not ready: {0}")]
    NotReady(String),

    #[error("write lock is held by another job")]
    WouldBlock,

    #[error("memory budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("benchmark error: {0}")]
    Bench(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Attach a path to an `io::Result`.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
