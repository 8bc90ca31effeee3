use thiserror::Error;

use crate::calibration::CalibrationError;
use crate::colorspace::ColorError;
use crate::cube::CubeError;
use crate::display::DisplayError;
use crate::harness::HarnessError;
use crate::scene::SceneError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Fits, optimizations and other numeric work that could not complete.
    Computation,
    /// Unreadable or malformed input and output.
    Format,
    /// Arguments that violate an operation's preconditions.
    Usage,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Color(#[from] ColorError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error(transparent)]
    Display(#[from] DisplayError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io(_) | Error::Cube(_) => ErrorClass::Format,
            Error::Harness(e) => e.class(),
            Error::Display(e) => e.class(),
            Error::Calibration(e) => e.class(),
            Error::Color(_) | Error::Scene(_) => ErrorClass::Usage,
        }
    }
}
