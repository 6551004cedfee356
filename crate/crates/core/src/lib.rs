//! Numerical laboratory for tilted fluids on accelerating closed cosmologies.
//!
//! Modules follow the data flow: parameter algebra, the S^3 spectral frame,
//! homogeneous backgrounds, Euler on a fixed FLRW background, the coupled
//! Einstein-Euler system and finally the diagnostics that turn trajectories
//! into energies and fitted decay rates.

pub mod background;
pub mod diagnostics;
pub mod einstein_euler;
pub mod error;
pub mod euler_flrw;
pub mod params;
pub mod ode;
pub mod s3_frame;

pub use error::{Error, Result};
pub use params::{LinearRational, RateTable, Regime, SoundSpeedParams, classify_regime, derive_params, rate_table};
pub use s3_frame::{BasisLabel, CollocationGrid, S3Spectral, SpectralField, build_grid};
