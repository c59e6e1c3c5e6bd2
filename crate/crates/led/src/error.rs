use std::path::{Path, PathBuf};

use led_core::diffusion::DiffusionError;
use led_core::nn::CheckpointError;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERIC: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{}: {source}", path.display())]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) => exit::USAGE,
            Self::Numeric(_) => exit::NUMERIC,
            _ => exit::DATA,
        }
    }
}

impl From<DiffusionError> for CliError {
    fn from(e: DiffusionError) -> Self {
        match e {
            DiffusionError::NonFinite { .. } => Self::Numeric(e.to_string()),
            DiffusionError::Config(_) | DiffusionError::DepthOutOfRange { .. } => Self::Config(e.to_string()),
            e => Self::Data(e.to_string()),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::Data(e.to_string())
            }
        }
    )*};
}

data_error!(
    led_core::nn::NnError,
    led_core::tensor::TensorError,
    led_core::schedule::ScheduleError,
    led_core::degrade::DegradeError,
    led_core::phantom::PhantomError,
    led_core::metrics::MetricError
);
