//! Preference-ranking rewards and evaluation tooling for generative
//! super-resolution.
//!
//! The crate is organized by capability:
//!
//! - [`ranking`]: mid-rank conversion, pairwise agreement, Recall@1 /
//!   Filter@1, average-rank aggregation and win-rate matrices.
//! - [`reward`]: format reward, Thurstone comparison probability, the
//!   LR-conditioned rank reward, composite rewards and group advantages.
//! - [`crops`]: five-stage bounding-box filtering, pixel cropping and
//!   area-weighted global/local score fusion.
//! - [`gateway`]: scorer wire protocol, prompt construction, a deterministic
//!   mock scorer and concurrent global/local evaluation.
//! - [`dataset`]: annotation-session service with an event-log store and a
//!   REST API.
//! - [`cli`]: the batch entry points behind the `prefrank` binary.
//!
//! Runnable walkthroughs of each capability live in `examples/`.

pub mod cli;
pub mod crops;
pub mod dataset;
pub mod gateway;
pub mod jsonl;
pub mod ranking;
pub mod reward;

use std::path::Path;

use serde::de::DeserializeOwned;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Reads and deserializes a JSON file.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.display().to_string(),
        source,
    })
}
