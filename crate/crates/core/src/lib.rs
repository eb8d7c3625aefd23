//! Matrix-free tensor-product multigrid for the anisotropic Helmholtz
//! pressure-correction equation on a thin spherical shell.

pub mod discretization;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod krylov;
pub mod multigrid;
pub mod par;
pub mod profile_io;
pub mod profiles;
pub mod relaxation;
pub mod theory;
pub mod timing;

pub use error::{Error, Result};
