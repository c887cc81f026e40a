//! Mixed finite elements for the stationary Stokes-Onsager-Stefan-Maxwell
//! equations on planar triangulations.

pub mod error;
pub mod mesh;
pub mod fespace;
pub mod forms;
pub mod linalg;
pub mod mms;
pub mod quadrature;
pub mod solver;
pub mod thermo;

pub use error::{Result, SosmError};
