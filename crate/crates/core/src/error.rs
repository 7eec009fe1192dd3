use thiserror::Error;

/// Error taxonomy shared by every stage of the pipeline.
///
/// The CLI maps these onto process exit codes: configuration and contract
/// problems exit with 2, unreadable or malformed data exits with 3, and
/// numerical failures (divergence, non-finite values, failed factorizations)
/// exit with 4.
#[derive(Debug, Error)]
pub enum Error {
    /// A container file (manifest, raw cube, raw labels) is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// Input data violates a documented precondition (non-finite values,
    /// empty sample set, label overflow, ...).
    #[error("data error: {0}")]
    Data(String),

    /// An index range falls outside the scene extent.
    #[error("range error: {0}")]
    Range(String),

    /// A scalar parameter is out of its admissible domain.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Two arguments disagree on shape or an internal API contract is broken.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A numerical operation failed (zero norm, indefinite matrix, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training produced a non-finite loss.
    #[error("divergence at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },

    /// More clusters requested than the fixed colour palette can display.
    #[error("palette error: {0}")]
    Palette(String),

    /// The run configuration document is invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// An error that occurred inside a named pipeline stage.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach a pipeline stage tag. Existing tags are preserved so the
    /// innermost stage stays visible in the rendered message.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Parameter(_)
            | Error::Range(_)
            | Error::Contract(_)
            | Error::Palette(_)
            | Error::Json(_) => 2,
            Error::Format(_) | Error::Data(_) | Error::Io(_) => 3,
            Error::Numeric(_) | Error::Divergence { .. } => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
