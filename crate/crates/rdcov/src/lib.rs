//! File formats, simulation designs, Monte Carlo studies, report rendering
//! and the `rdcov` command line, on top of [`rdcov_core`].

pub mod cli;
pub mod dgp;
pub mod error;
pub mod io;
pub mod report;
pub mod study;

pub use dgp::DgpSpec;
pub use error::{Error, Result};
pub use study::{plim_check, run_study, StudyConfig, StudyReport};
