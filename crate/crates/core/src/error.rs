use std::path::PathBuf;

use thiserror::Error;

use crate::smc::StepDiagnostics;
use crate::trace::{ChoiceAddress, SiteId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("trace exhausted: execution requested choice #{index} but the trace has {len}")]
    TraceExhausted { index: usize, len: usize },

    #[error("structural mismatch at choice #{index}: trace has {expected}, execution produced {found}")]
    StructuralMismatch {
        index: usize,
        expected: ChoiceAddress,
        found: ChoiceAddress,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate constraint: {0}")]
    DegenerateConstraint(String),

    #[error("degenerate particle population at step {step}: every particle has zero weight")]
    DegeneratePopulation {
        step: usize,
        diagnostics: Vec<StepDiagnostics>,
    },

    #[error("no guide network for site {0}")]
    MissingNetwork(SiteId),

    #[error("corrupt training example {id}: {source}")]
    CorruptExample {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("failed to load {entry}: {reason}")]
    Load { entry: String, reason: String },

    #[error("parse error in {context}: {reason}")]
    Parse { context: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            reason: reason.into(),
        }
    }
}
