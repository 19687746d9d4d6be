use alloc::string::String;
use core::fmt;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter or input failed validation.
    InvalidInput(String),
    /// Lengths or dimensions disagree.
    DimensionMismatch { expected: usize, found: usize },
    /// A field was used with a mesh it is not bound to.
    MeshMismatch,
    /// A point could not be located in the triangulation.
    OutsideDomain { x: f64, y: f64 },
    /// The mesh violates one of its structural invariants.
    InvalidMesh(String),
    /// Conjugate gradients hit a non-positive curvature direction.
    Breakdown { iteration: usize },
    /// An iterative method stopped before reaching its tolerance.
    NotConverged {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },
    /// The active-set iteration revisited an earlier active set.
    ActiveSetCycle { iterations: usize },
    /// Degenerate or invalid geometry (polygons, phantoms).
    Geometry(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::MeshMismatch => write!(f, "field is bound to a different mesh"),
            Error::OutsideDomain { x, y } => write!(f, "point ({x}, {y}) lies outside the mesh"),
            Error::InvalidMesh(msg) => write!(f, "invalid mesh: {msg}"),
            Error::Breakdown { iteration } => {
                write!(f, "conjugate gradient breakdown at iteration {iteration} (operator not SPD)")
            }
            Error::NotConverged {
                method,
                iterations,
                residual,
            } => write!(
                f,
                "{method} did not converge after {iterations} iterations (residual {residual:e})"
            ),
            Error::ActiveSetCycle { iterations } => {
                write!(f, "primal-dual active set cycled after {iterations} iterations")
            }
            Error::Geometry(msg) => write!(f, "geometry error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
