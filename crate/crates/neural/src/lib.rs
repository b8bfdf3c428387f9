//! Neural sequence baselines and a pretrained transformer encoder for
//! clause classification, plus continued pretraining of the encoder.

use std::path::{Path, PathBuf};

use codeinterp::error::ClassifyError;

pub mod backend;
pub mod checkpoint;
pub mod encoder;
pub mod init;
pub mod nets;
pub mod pretrain;
pub mod tokenizer;

pub use backend::NeuralBackend;
pub use pretrain::{further_pretrain, PretrainConfig, PretrainReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Config(String),
}

impl NeuralError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> NeuralError {
        NeuralError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<NeuralError> for ClassifyError {
    fn from(e: NeuralError) -> ClassifyError {
        match e {
            NeuralError::Io { path, source } => ClassifyError::Io { path, source },
            NeuralError::Checkpoint(m) => ClassifyError::Artifact(m),
            NeuralError::Config(m) => ClassifyError::InvalidConfig(m),
            NeuralError::Candle(e) => ClassifyError::Backend(e.to_string()),
        }
    }
}
