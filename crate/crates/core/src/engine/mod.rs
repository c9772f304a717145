//! The only part of the crate that reads raw data: CSV ingestion, trusted
//! re-pricing of submitted batches, execution of releases and the metadata
//! files they end up in.

mod dataset;
mod metadata;
mod registry;
mod release;

use thiserror::Error;

use crate::budgeter::{BudgetError, LedgerError};
use crate::mechanisms::MechanismError;
use crate::request::RequestError;

pub use dataset::{ingest_csv, ingest_reader, Dataset, IngestReport};
pub use metadata::{
    build_public_metadata, build_user_metadata, Audience, MetadataFile, PublicVariable,
    ReleaseRecord, METADATA_FORMAT_VERSION,
};
pub use registry::{AccessOverrides, BudgetConfig, DatasetHandle, Registry};
pub(crate) use release::compute;
pub use release::{
    execute_release, snapping_noise_epsilon, verify_request, ReleaseBatch, ReleaseOutcome, Verified,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("the file has no data rows")]
    Empty,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Request(#[from] RequestError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("metadata refused: {0}")]
    Metadata(String),
    #[error("no dataset `{0}`")]
    UnknownDataset(String),
    #[error("dataset `{0}` already exists; pass force to replace its data")]
    DatasetExists(String),
    #[error("dataset `{0}` has no budget yet")]
    NoBudget(String),
    #[error("dataset `{0}` has spent budget, so its budget can no longer change")]
    BudgetLocked(String),
}

impl EngineError {
    /// True when the caller, not the system, is at fault.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            EngineError::Io(_)
                | EngineError::Ledger(LedgerError::Io(_) | LedgerError::Corrupt { .. })
        )
    }
}
