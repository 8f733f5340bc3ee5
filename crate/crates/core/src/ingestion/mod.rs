//! Reading and writing scenario bundles, generating synthetic corpora and
//! writing run results.

mod bundle;
pub mod results;
pub mod synthetic;

use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub use bundle::{load_bundle, open_bundle, write_bundle, Bundle, DAY_FILES};
pub use results::{write_results, RunMeta};
pub use synthetic::{generate_synthetic, generate_with_regimes, SyntheticConfig, SyntheticCorpus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{file} row {row}: {message}")]
    Schema {
        file: String,
        row: usize,
        message: String,
    },
    #[error("{file} missing for {context}")]
    MissingFile { file: String, context: String },
    #[error("{date} failed validation: {}", violations.join("; "))]
    Invalid {
        date: NaiveDate,
        violations: Vec<String>,
    },
    #[error("date range {from} .. {to} is empty or outside bundle coverage ({coverage})")]
    Range {
        from: NaiveDate,
        to: NaiveDate,
        coverage: String,
    },
    #[error("invalid synthetic configuration: {0}")]
    Config(String),
}
