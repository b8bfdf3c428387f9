use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("unknown category {0:?}; expected one of direct, indirect, method, reference, general, term, other")]
    UnknownCategory(String),
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document {doc_id} has no lines")]
    EmptyInput { doc_id: String },
    #[error("document {doc_id} has no lines left after cleaning")]
    EmptyAfterCleaning { doc_id: String },
    #[error("invalid cleaning pattern {pattern:?}: {source}")]
    InvalidPattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("unknown code level {0:?}; expected GB, HB or DB")]
    UnknownLevel(String),
    #[error("no metadata for document {0}")]
    MissingMeta(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("clause {0} contains neither a numeric literal nor a comparator")]
    NoReplaceableToken(String),
    #[error("clause {0} is not a manual example; only manual examples can be augmented")]
    NotManual(String),
    #[error("invalid split ratios: {0}")]
    RatioError(String),
    #[error("dataset has {0} examples; at least 10 are needed to split")]
    TooSmall(usize),
    #[error("duplicate clause id {0}")]
    DuplicateId(String),
    #[error("augmented example {child} references missing parent {parent}")]
    MissingParent { child: String, parent: String },
    #[error("augmented example {child} has label {child_label} but parent {parent} has {parent_label}")]
    LabelMismatch {
        child: String,
        parent: String,
        child_label: String,
        parent_label: String,
    },
    #[error("example {0}: provenance and parent_id disagree")]
    Provenance(String),
    #[error("example {0} has empty text")]
    EmptyText(String),
    #[error("unknown label {label:?} at {location}")]
    UnknownLabel { label: String, location: String },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{predictions} predictions but {golds} gold labels")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("nothing to evaluate")]
    Empty,
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("document {0} has no clauses")]
    EmptyDocument(String),
    #[error("no metadata for document {0}")]
    MissingMeta(String),
    #[error("no documents to aggregate")]
    NoDocuments,
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged: non-finite loss at lr {lr}, epoch {epoch}")]
    DivergedTraining { lr: f64, epoch: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("train and validation splits share clause {0}")]
    OverlappingSplits(String),
    #[error("checkpoint {0:?} not found")]
    CheckpointNotFound(String),
    #[error("corpus has {lines} usable lines; at least {floor} are required")]
    CorpusTooSmall { lines: usize, floor: usize },
    #[error("no backend registered for family {0}")]
    UnsupportedFamily(String),
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("{clauses} clauses but {predictions} predictions")]
    LengthMismatch { clauses: usize, predictions: usize },
    #[error("no clauses to interpret")]
    Empty,
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("{path}:{line}: {message}")]
    Script {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}
