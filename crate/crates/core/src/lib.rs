//! Joint outcome/treatment likelihood for longitudinal data with an
//! endogenous binary treatment, fitted by pooled maximum likelihood with
//! subject-clustered sandwich standard errors, plus the GEE comparator and
//! the simulation designs used to compare them.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

pub mod data;
pub mod error;
pub mod gee;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod report;
pub mod scalar;
pub mod sim;
pub mod spline;

pub use data::{load_csv, read_csv, CovariateNames, DesignSpec, LongDataset, ObsRow};
pub use error::{Error, Result};
pub use gee::{fit_gee_independence, GeeFit, GeeVariant};
pub use inference::{fit_lem, predict_mean, prediction_band, wald, FitOptions, FitWarning, LemFit, PredictionBand};
pub use model::{RhoMap, Theta};
pub use report::FitReport;
pub use scalar::Real;

pub type Dataset = data::LongDataset<f64>;
pub type Dataset32 = data::LongDataset<f32>;
pub type Theta64 = model::Theta<f64>;
pub type Theta32 = model::Theta<f32>;
pub type LemFit64 = inference::LemFit<f64>;
pub type LemFit32 = inference::LemFit<f32>;
pub type GeeFit64 = gee::GeeFit<f64>;
pub type GeeFit32 = gee::GeeFit<f32>;
pub type Matrix64 = numerics::Matrix<f64>;
pub type SymMatrix64 = numerics::SymMatrix<f64>;
