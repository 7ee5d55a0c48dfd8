//! Crate-wide error type.
//!
//! Variants mirror the failure classes surfaced by the pipeline: file format
//! problems, referential breaks between tables, numeric trouble, and missing
//! stage artifacts. `exit_code` maps them onto the CLI contract (1 = usage /
//! configuration, 2 = data or consistency failure).

pub type Result<T> = std::result::Result<T, EfiError>;

#[derive(Debug, thiserror::Error)]
pub enum EfiError {
    #[error("format error: {0}")]
    Format(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("extent error: {0}")]
    Extent(String),
    #[error("partition error: {0}")]
    Partition(String),
    #[error("orphan records: {0}")]
    Orphan(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing upstream artifact: {0}")]
    Dependency(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for EfiError {
    fn from(e: csv::Error) -> Self {
        EfiError::Format(e.to_string())
    }
}

impl EfiError {
    /// CLI exit code for this error: 1 for usage/config problems, 2 for
    /// data, consistency, and I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            EfiError::Config(_) => 1,
            _ => 2,
        }
    }
}
