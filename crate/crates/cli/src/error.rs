use std::fmt;

use cogtree::data::DataError;
use cogtree::eval::EvalError;
use cogtree::experiment::ExperimentError;
use cogtree::losses::LossError;
use cogtree::model::ModelError;
use cogtree::tree::{BuildError, TreeError};

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config values. Exit code 2.
    Config(String),
    /// Unreadable or malformed inputs. Exit code 3.
    Data(String),
    /// Anything that went wrong while computing. Exit code 4.
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Data(m) => write!(f, "data: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidSpec(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::ZeroCount { .. }
            | LossError::ClassNotInTree(_)
            | LossError::TreeSizeMismatch { .. } => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(m) => CliError::Config(m),
            ModelError::Loss(l) => l.into(),
            ModelError::DimensionMismatch { .. }
            | ModelError::Checkpoint(_)
            | ModelError::Dataset(_) => CliError::Data(e.to_string()),
            ModelError::ParameterCount { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::TooManyConcepts { .. } => CliError::Config(e.to_string()),
            BuildError::NoValidHost | BuildError::Tree(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TreeError> for CliError {
    fn from(e: TreeError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(m) => CliError::Config(m),
            ExperimentError::Data(e) => e.into(),
            ExperimentError::Model(e) => e.into(),
            ExperimentError::Build(e) => e.into(),
            ExperimentError::Loss(e) => e.into(),
            ExperimentError::Eval(e @ EvalError::KOutOfRange { .. }) => CliError::Config(e.to_string()),
            ExperimentError::Eval(e) => CliError::Runtime(e.to_string()),
        }
    }
}
