use alloc::string::String;
use core::fmt;

use crate::locfit::FitSide;

pub type Result<T> = core::result::Result<T, Error>;

/// Failures raised by the estimation routines.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A scalar argument is outside its domain (non-positive bandwidth,
    /// order out of range, non-finite input, ...).
    Domain(String),
    /// Fewer distinct in-bandwidth points on a side than the polynomial
    /// order requires.
    InsufficientData { side: FitSide, bandwidth: f64 },
    /// A block of the stacked design is collinear under the kernel weights.
    RankDeficient { block: String },
    /// All observations lie on one side of the cutoff.
    OneSided,
    /// The dataset has no observations.
    Empty,
    /// Array lengths disagree.
    DimensionMismatch { expected: usize, found: usize },
    /// Nearest-neighbor variance requested more neighbors than a side holds.
    TooManyNeighbors { requested: usize, available: usize, side: FitSide },
    /// Cluster-robust variance requested without cluster ids.
    MissingClusters,
    /// Plug-in bandwidth with a vanishing bias constant.
    NearZeroBias,
    /// Estimated variance is zero, so no confidence interval can be formed.
    DegenerateVariance,
    /// The requested operation is not defined for this estimator kind.
    Unsupported(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::InsufficientData { side, bandwidth } => write!(
                f,
                "insufficient data: not enough distinct points on the {side} side within bandwidth {bandwidth}"
            ),
            Error::RankDeficient { block } => write!(f, "rank-deficient design: {block}"),
            Error::OneSided => f.write_str("dataset is one-sided: observations are needed on both sides of the cutoff"),
            Error::Empty => f.write_str("dataset has no observations"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected length {expected}, found {found}")
            }
            Error::TooManyNeighbors { requested, available, side } => write!(
                f,
                "nearest-neighbor variance needs {requested} neighbors but the {side} side has only {available}"
            ),
            Error::MissingClusters => f.write_str("cluster-robust variance requested but no cluster ids are present"),
            Error::NearZeroBias => f.write_str(
                "estimated bias constant is zero; use the regularized selector or a manual bandwidth",
            ),
            Error::DegenerateVariance => f.write_str("estimated variance is zero; confidence interval is degenerate"),
            Error::Unsupported(what) => write!(f, "unsupported: {what}"),
        }
    }
}

impl core::error::Error for Error {}
