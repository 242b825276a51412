//! Point data assimilation for finite element models.
//!
//! Observations are represented as P0DG fields on vertex-only meshes and
//! point evaluation is a sparse linear interpolation operator with an exact
//! adjoint, which makes point-misfit functionals differentiable through PDE
//! solves.

pub mod assimilate;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod forward;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod par;
pub mod pointeval;
pub mod reconstruct;
pub mod vom;

pub use error::{Error, Result};
