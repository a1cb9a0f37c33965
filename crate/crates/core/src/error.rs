use std::path::PathBuf;

/// Errors produced anywhere in the mapping toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt tile: {0}")]
    Corruption(String),

    #[error("unsupported tile version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("class {class} has zero probability; drop or floor it before using {strategy} weights")]
    DegenerateClass { class: usize, strategy: &'static str },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("classifier contract violated: {0}")]
    Contract(String),

    #[error("cluster {cluster} has no human-settlement pixel within {radius_m} m")]
    NoSettlement { cluster: String, radius_m: f64 },

    #[error("leakage: country {country} (fold {fold}) scored by a model whose test fold is {test_fold}")]
    Leakage {
        country: String,
        fold: usize,
        test_fold: usize,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
