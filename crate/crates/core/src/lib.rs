//! Reconstruction of conductivity inclusions in a semilinear elliptic Neumann
//! problem from boundary data.
//!
//! The crate is `no_std` (with `alloc`) and holds the numerical core:
//! triangulations and adaptation ([`mesh`]), P1 finite elements ([`fem`],
//! [`sparse`]), the forward/linearized/adjoint solvers ([`forward`],
//! [`adjoint`]), the relaxed cost functional and its derivative
//! ([`objective`]), the parabolic obstacle iteration with a primal-dual active
//! set inner solver ([`pdas`], [`pop`]), a sharp-interface shape-gradient
//! comparator ([`shape`]), synthetic data generation ([`data`]) and a
//! derivative verification harness ([`verify`]).
//!
//! File formats, configuration parsing and the command line live in the
//! companion `pfrecon` crate.
#![no_std]
#![deny(rust_2018_idioms)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adjoint;
pub mod cholesky;
pub mod data;
pub mod error;
pub mod fem;
pub mod forward;
pub mod math;
pub mod mesh;
pub mod objective;
pub mod pdas;
pub mod pop;
pub mod shape;
pub mod sparse;
pub mod verify;

pub use error::{Error, Result};
pub use fem::NodalField;
pub use mesh::TriMesh;
pub use sparse::CsrMatrix;
