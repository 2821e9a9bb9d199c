//! Error types shared across the core modules.

use thiserror::Error;

/// Dataset ingestion, splitting, and manifest manipulation failures.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DataError {
    #[error("filename does not match the {convention} convention: {filename}")]
    MalformedFilename {
        filename: String,
        convention: &'static str,
    },
    #[error("no image files found under {root}")]
    EmptyDataset { root: String },
    #[error("too few identities for a split: {identities} identities, need at least {needed}")]
    TooFewIdentities { identities: usize, needed: usize },
    #[error("duplicate image path across manifests: {path}")]
    DuplicatePath { path: String },
    #[error("invalid configuration field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("record {path}: {reason}")]
    InvalidRecord { path: String, reason: String },
}

/// Mask loading and construction failures.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("record {path} has no mask but the mask source requires one")]
    MissingMask { path: String },
    #[error("mask {path} could not be used: {reason}")]
    CorruptMask { path: String, reason: String },
    #[error("mask is {mask_h}x{mask_w} but its image is {image_h}x{image_w}")]
    SizeMismatch {
        mask_h: usize,
        mask_w: usize,
        image_h: usize,
        image_w: usize,
    },
}

/// Model construction and loss evaluation failures.
#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("discriminator scores contain non-finite values")]
    NonFiniteScores,
}

/// Training-loop failures.
#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("non-finite loss at step {step} (batch a: {batch_a:?}, batch b: {batch_b:?})")]
    NonFiniteLoss {
        step: u64,
        batch_a: Vec<usize>,
        batch_b: Vec<usize>,
    },
    #[error("domain {domain} has no training records")]
    DataStarvation { domain: String },
    #[error("invalid training configuration field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Retrieval metric failures.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("feature dimension mismatch: queries are {query_dim}-d, gallery is {gallery_dim}-d")]
    DimensionMismatch {
        query_dim: usize,
        gallery_dim: usize,
    },
    #[error("metadata length {meta} does not match feature rows {rows}")]
    MetaMismatch { meta: usize, rows: usize },
}

/// Embedder training failures.
#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("embedder training needs at least 2 identities, got {0}")]
    TooFewIdentities(usize),
    #[error("invalid embedder recipe field `{field}`: {reason}")]
    InvalidRecipe { field: &'static str, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}
