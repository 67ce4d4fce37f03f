use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: row {row}, column '{column}': cannot parse '{value}' as a number")]
    Parse { path: PathBuf, row: usize, column: String, value: String },
    #[error("invalid DGP config: {0}")]
    Dgp(String),
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] rdcov_core::Error),
}

impl Error {
    /// Process exit code: 2 for configuration and input problems, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> u8 {
        if self.is_numeric() {
            3
        } else {
            2
        }
    }

    /// Short machine-readable code.
    pub fn code(&self) -> &'static str {
        if self.is_numeric() {
            "numeric"
        } else {
            "config"
        }
    }

    fn is_numeric(&self) -> bool {
        use rdcov_core::Error as E;
        match self {
            Error::Core(e) => matches!(
                e,
                E::InsufficientData { .. }
                    | E::RankDeficient { .. }
                    | E::OneSided
                    | E::Empty
                    | E::NearZeroBias
                    | E::DegenerateVariance
            ),
            _ => false,
        }
    }
}
