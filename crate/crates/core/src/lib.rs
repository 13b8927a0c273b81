//! Environment-aware XL-MIMO channel estimation: synthetic scenes, classical
//! estimators, per-grid channel knowledge stores, analytic MMSE denoisers and
//! the plug-and-play estimator that combines them.

pub mod csfm;
pub mod denoise;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod observation;
pub mod pnp;
pub mod prior;
pub mod scene;

pub use error::{Error, Result};
