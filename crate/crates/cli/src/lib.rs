//! Pipeline commands behind the `crackprop` binary.

pub mod commands;
pub mod config;

use crackprop::data::DataError;
use crackprop::dic::DicError;
use crackprop::eval::EvalError;
use crackprop::image::ImageError;
use crackprop::network::NetworkError;
use crackprop::speed::SpeedError;
use crackprop::train::TrainError;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Spec(_) | DataError::Split(_) => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<DicError> for CliError {
    fn from(e: DicError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<SpeedError> for CliError {
    fn from(e: SpeedError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::Config(_) => Self::Usage(e.to_string()),
            NetworkError::NonFinite(_) => Self::Numeric(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => Self::Usage(e.to_string()),
            TrainError::NonFinite { .. } | TrainError::NonFiniteGradient { .. } => Self::Numeric(e.to_string()),
            TrainError::Network(n) => n.into(),
            TrainError::Data(d) => d.into(),
            _ => Self::Data(e.to_string()),
        }
    }
}

/// Seed for one pipeline stage, drawn from its own ChaCha stream of the root
/// seed so stages never share random numbers.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    // FNV-1a of the stage name picks the stream
    let stream = stage
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream);
    rng.next_u64()
}
