use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is at or below the normalization threshold")]
    ZeroNorm { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("logsumexp of an empty row")]
    EmptyRow,

    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),

    #[error("objective returned a non-finite value at probe coordinate {coordinate}")]
    NonFiniteEvaluation { coordinate: usize },

    #[error("invalid encoder architecture: {0}")]
    BadArchitecture(String),

    #[error("forward tape does not match the encoder or gradient shape")]
    TapeMismatch,

    #[error("batch mismatch: {0}")]
    BatchMismatch(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("row {row} is not unit norm (norm = {norm})")]
    NotUnitNorm { row: usize, norm: f64 },

    #[error("training set is empty")]
    EmptyTrainSet,

    #[error("invalid k = {k} (allowed 1..={max})")]
    BadK { k: usize, max: usize },

    #[error("hierarchy violation: {0}")]
    HierarchyViolation(String),

    #[error("empty split: {0}")]
    EmptySplit(&'static str),

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("class id {0} is out of range")]
    BadClass(usize),

    #[error("requested {requested} templates but only {available} exist")]
    TooManyTemplates { requested: usize, available: usize },

    #[error("step {step} is outside the schedule (total {total})")]
    BadStep { step: usize, total: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("file is truncated or has trailing bytes: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: u64, found: u64 },

    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}
