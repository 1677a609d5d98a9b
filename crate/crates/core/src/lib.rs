//! Minimum S-divergence estimation for continuous models with kernel smoothing
//! of both the data and the model.
//!
//! The crate is organised bottom-up:
//!
//! - [`quadrature`]: the adaptive integration engine everything else uses.
//! - [`divergence`]: the S-divergence family, residuals and the K-function.
//! - [`smoothing`]: kernel density estimates, smoothed models, bandwidth rules.
//! - [`models`]: parametric families and contaminated sampling.
//! - [`estimator`]: MSDE\*, Beran-type MSDE and MDPDE fits.
//! - [`diagnostics`]: influence functions, sandwich covariance, transparency checks.
//! - [`simulation`] and [`tuning`]: Monte-Carlo studies and data-driven `(alpha, lambda)` choice.
//! - [`datasets`]: Short's and Newcomb's measurements and a CSV loader.

pub mod datasets;
pub mod diagnostics;
pub mod divergence;
pub mod error;
pub mod estimator;
pub mod models;
pub mod quadrature;
pub mod simulation;
pub mod smoothing;
pub mod tuning;

pub use divergence::{s_divergence, DensityEvaluator, Mixture, NormalDensity, TuningPair};
pub use error::{Result, SdiveError};
pub use estimator::{FitConfig, FitResult, Init, Method};
pub use models::{DistSpec, NormalMeanModel, NormalModel, ParametricModel};
pub use quadrature::QuadratureSpec;
pub use smoothing::{smooth_data, smooth_model, KernelSpec, SmoothedData};
