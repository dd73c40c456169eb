use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty class: {0}")]
    EmptyClass(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate representation: zero-norm vector")]
    DegenerateRepresentation,

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training failed: {0}")]
    TrainingFailure(String),

    #[error("non-finite loss at step {step}: J_D={jd} J_M={jm} J_G={jg}")]
    NonFiniteLoss { step: usize, jd: f64, jm: f64, jg: f64 },

    #[error("missing artifact `{}`: {hint}", path.display())]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("input error: {0}")]
    Input(String),

    #[error("i/o error on `{}`: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error("image codec error: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Attaches a path to `std::io::Result`s.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
