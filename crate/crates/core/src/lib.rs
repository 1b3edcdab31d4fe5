//! Estimation of forward variance kernels from discretely observed cumulative
//! forward variance.
//!
//! The pipeline: [`simulate`] (or [`ingest`]) produces a
//! [`CumulativeVarianceSurface`]; [`contrast`] minimizes the ε-regularized
//! contrast to estimate the kernel parameters; [`inference`] turns the estimate
//! into a plug-in covariance, studentized statistics and confidence intervals;
//! [`montecarlo`] repeats the whole chain over seeded replications.

pub mod contrast;
pub mod error;
pub mod inference;
pub mod ingest;
pub mod io;
pub mod kernels;
pub mod montecarlo;
pub mod optimize;
pub mod simulate;
pub mod surface;

pub use error::{Error, ErrorClass, Result};
pub use kernels::{Kernel, KernelSpec, ParamBox, ParamVector};
pub use surface::{CumulativeVarianceSurface, MaturityGrid, TimeGrid};
