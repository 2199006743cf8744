//! Monte Carlo scalar-wave simulation of ghost diffraction with pseudo-thermal
//! speckle light.
//!
//! The crate is organised bottom-up: [`field`] holds grids, fields and speckle
//! statistics, [`propagation`] the paraxial optics, [`speckle`] the source,
//! [`objects`] the test objects, [`correlation`] the intensity-correlation
//! estimators and closed-form references, and [`experiments`] the scenario
//! runners built on top of them.

pub mod error;
pub mod experiments;
pub mod fft;
pub mod io;
pub mod field;
pub mod objects;
pub mod correlation;
pub mod propagation;
pub mod speckle;
pub mod scenario;
pub mod sum;

pub use error::{Error, Result};
