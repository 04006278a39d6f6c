//! Composite load model simulation, diffusion-based parameter inference,
//! sensitivity analysis, metrics, dataset I/O and the supervised baseline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod clm;
pub mod dataio;
pub mod diffusion;
pub mod error;
pub mod evaluate;
pub mod metrics;
pub mod params;
pub mod qmc;
pub mod seed;
pub mod sensitivity;

pub use error::{CoreError, Result};
pub use params::{ParamSpace, N_PARAMS};
