//! Spectral and dynamical toolkit for the artificial-compressibility
//! approximation of a doubly diffusive Hopf problem, organised around
//! Fourier modes on a periodic strip.

pub mod criticality;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod linalg;
pub mod model;
pub mod par;
pub mod periodic;
pub mod smalleig;
pub mod spectral_survey;
pub mod stokes;

pub use error::{Error, Result};
