use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),

    #[error("serialization error in {0}: {1}")]
    Serde(PathBuf, String),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("scene has no vehicles")]
    NoVehicles,

    #[error("cluster list is empty")]
    NoClusters,

    #[error("no models to select from")]
    NoModels,

    #[error("word book is empty")]
    EmptyWordBook,

    #[error("blockage segment is empty")]
    EmptyGap,

    #[error("joint association problem too large: more than {limit} events (gate is too loose)")]
    TooManyEvents { limit: usize },

    #[error("model id {0} is outside the allowed range")]
    ModelId(u32),

    #[error("no confirmed tracks")]
    NoTracks,

    #[error("model store {0} is missing or corrupt: {1}")]
    Store(PathBuf, String),
}
