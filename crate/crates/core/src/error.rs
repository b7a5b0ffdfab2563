use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid parameter space: {0}")]
    Space(String),

    #[error("control schedule error: {0}")]
    Schedule(String),

    #[error("trajectory diverged at t = {t} (node {node}), atom {atom}")]
    Divergence { t: f64, node: usize, atom: usize },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("capability unavailable: {0}")]
    Capability(String),

    #[error("unknown builtin problem `{0}`")]
    Lookup(String),

    #[error("non-finite terminal cost at grid node {node}: {value}")]
    Terminal { node: usize, value: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
