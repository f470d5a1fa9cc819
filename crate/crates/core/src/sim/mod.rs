//! Panel simulations of endogenous treatment with optional row deletion,
//! replicate studies comparing the joint model with GEE, and a synthetic
//! age-trend example.

pub mod config;
pub mod demo;
pub mod generate;
pub mod study;

pub use config::{Missingness, Preset, SimConfig};
pub use demo::{age_demo, AgeDemo, AgeDemoConfig};
pub use generate::{apply_missingness, gen_covariates, gen_outcomes, Generator, SimPanel};
pub use study::{run_study, Method, StudySummary};
