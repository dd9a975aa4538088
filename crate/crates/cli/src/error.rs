use thiserror::Error;

use top_core::eval::EvalError;
use top_core::io::IoError;
use top_core::mos::MosError;
use top_core::objectives::LossError;
use top_core::overlap::ExtractError;
use top_core::sim::SimError;

/// Exit status classes of the `top` binary.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

macro_rules! data_error {
    ($($t:ty => $name:literal),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(format!(concat!($name, ": {}"), e))
            }
        })*
    };
}

data_error! {
    IoError => "IoError",
    ExtractError => "ExtractError",
    SimError => "SimError",
    EvalError => "EvalError",
    LossError => "LossError",
    MosError => "MosError",
    top_core::model::ModelError => "ModelError",
}

pub type Result<T> = std::result::Result<T, CliError>;
