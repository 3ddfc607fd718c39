use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failures raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    /// `data.len()` does not equal the product of the declared shape.
    LengthMismatch {
        shape: Vec<usize>,
        len: usize,
    },
    /// A NaN or infinity appeared. `index` is the flat position (or the
    /// step / sample / layer index, depending on `context`).
    NonFinite {
        context: &'static str,
        index: usize,
    },
    InvalidParameter {
        name: &'static str,
        reason: String,
    },
    UnsupportedShape {
        shape: Vec<usize>,
        reason: &'static str,
    },
    /// CG met a search direction with non-positive curvature twice in a row.
    NotPositiveDefinite {
        iteration: usize,
    },
    SvdNoConvergence {
        sweeps: usize,
    },
    IncompatiblePreconditioner {
        kind: &'static str,
        structure: &'static str,
    },
    /// The requested operation needs a mode the configuration does not have.
    InvalidMode(&'static str),
    /// A grid oracle box leaks probability mass through its boundary.
    BoxTooSmall {
        boundary_mass: f64,
    },
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { expected, found } => {
                write!(f, "shape mismatch: expected {expected:?}, found {found:?}")
            }
            Error::LengthMismatch { shape, len } => {
                write!(f, "data of length {len} does not fit shape {shape:?}")
            }
            Error::NonFinite { context, index } => {
                write!(f, "non-finite value in {context} (index {index})")
            }
            Error::InvalidParameter { name, reason } => write!(f, "invalid {name}: {reason}"),
            Error::UnsupportedShape { shape, reason } => {
                write!(f, "unsupported shape {shape:?}: {reason}")
            }
            Error::NotPositiveDefinite { iteration } => write!(
                f,
                "operator is not positive definite (negative curvature at CG iteration {iteration})"
            ),
            Error::SvdNoConvergence { sweeps } => {
                write!(f, "Jacobi SVD did not converge after {sweeps} sweeps")
            }
            Error::IncompatiblePreconditioner { kind, structure } => write!(
                f,
                "preconditioner `{kind}` cannot be used with a `{structure}` forward model"
            ),
            Error::InvalidMode(what) => write!(f, "invalid mode: {what}"),
            Error::BoxTooSmall { boundary_mass } => write!(
                f,
                "grid box too small: boundary carries {boundary_mass:.3e} of the mass"
            ),
        }
    }
}

impl core::error::Error for Error {}
