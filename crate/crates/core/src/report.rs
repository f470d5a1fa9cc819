//! JSON form of a fitted model, and reloading it for prediction.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gee::{GeeFit, GeeVariant};
use crate::inference::{wald, CoefficientTable, FitWarning, LemFit, LinearPredictorFit};
use crate::model::RhoMap;
use crate::numerics::{Matrix, SymMatrix};
use crate::optim::Termination;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub evaluations: usize,
    /// `‖Σ score‖_∞` at the estimate.
    pub score_inf_norm: f64,
    pub negloglik: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    Lem,
    GeeAdjusted,
    GeeExcluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: FitMethod,
    pub n_subjects: usize,
    pub n_rows: usize,
    pub level: f64,
    pub parameters: Vec<ParameterRow>,
    /// The first `beta_len` parameters are β on the X columns.
    pub beta_len: usize,
    pub x_names: Vec<String>,
    /// Robust covariance, row-major, `parameters.len()` square.
    pub covariance: Vec<f64>,
    pub convergence: Option<Convergence>,
    pub warnings: Vec<FitWarning>,
    pub sigma_y: Option<f64>,
    pub rho: Option<f64>,
    pub rho_map: Option<RhoMap>,
}

fn parameter_rows<F: CoefficientTable<f64>>(fit: &F, level: f64) -> Result<Vec<ParameterRow>> {
    fit.names()
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let w = wald(fit, k, level)?;
            Ok(ParameterRow {
                name,
                estimate: w.estimate,
                se: w.se,
                ci: w.ci,
                p_value: w.p_value,
            })
        })
        .collect()
}

impl FitReport {
    pub fn from_lem(fit: &LemFit<f64>, level: f64) -> Result<Self> {
        Ok(Self {
            method: FitMethod::Lem,
            n_subjects: fit.n_subjects,
            n_rows: fit.n_rows,
            level,
            parameters: parameter_rows(fit, level)?,
            beta_len: fit.theta_hat.beta.len(),
            x_names: fit.x_names.clone(),
            covariance: fit.cov_robust.as_matrix().as_slice().to_vec(),
            convergence: Some(Convergence {
                converged: true,
                termination: fit.optim.termination,
                iterations: fit.optim.iterations,
                evaluations: fit.optim.evaluations,
                score_inf_norm: fit.score_inf_norm,
                negloglik: fit.negloglik,
            }),
            warnings: fit.warnings.clone(),
            sigma_y: Some(fit.sigma_y()),
            rho: Some(fit.rho()),
            rho_map: Some(fit.theta_hat.rho_map),
        })
    }

    pub fn from_gee(fit: &GeeFit<f64>, level: f64) -> Result<Self> {
        Ok(Self {
            method: match fit.variant {
                GeeVariant::TreatmentAdjusted => FitMethod::GeeAdjusted,
                GeeVariant::TreatmentExcluded => FitMethod::GeeExcluded,
            },
            n_subjects: fit.n_subjects,
            n_rows: fit.n_rows,
            level,
            parameters: parameter_rows(fit, level)?,
            beta_len: fit.jx,
            x_names: fit.names[..fit.jx].to_vec(),
            covariance: fit.cov_robust.as_matrix().as_slice().to_vec(),
            convergence: None,
            warnings: Vec::new(),
            sigma_y: None,
            rho: None,
            rho_map: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let r: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        r.predictor()?;
        Ok(r)
    }

    /// Aligned coefficient table.
    pub fn to_text(&self) -> String {
        let pct = self.level * 100.0;
        let width = self.parameters.iter().map(|p| p.name.len()).max().unwrap_or(4).max(9);
        let mut out = format!(
            "{:<width$} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
            "parameter",
            "estimate",
            "robust_se",
            format!("{pct:.0}%_lo"),
            format!("{pct:.0}%_hi"),
            "p"
        );
        for p in &self.parameters {
            out.push_str(&format!(
                "{:<width$} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.3e}\n",
                p.name, p.estimate, p.se, p.ci.0, p.ci.1, p.p_value
            ));
        }
        out
    }

    /// β and its covariance block, for predictions.
    pub fn predictor(&self) -> Result<StoredPredictor> {
        let p = self.parameters.len();
        if self.covariance.len() != p * p {
            return Err(Error::DimensionMismatch {
                expected: p * p,
                got: self.covariance.len(),
            });
        }
        if self.beta_len == 0 || self.beta_len > p || self.x_names.len() != self.beta_len {
            return Err(Error::InvalidData(format!(
                "beta_len {} inconsistent with {} parameters and {} x names",
                self.beta_len,
                p,
                self.x_names.len()
            )));
        }
        let full = SymMatrix::symmetrize(&Matrix::from_row_slice(p, p, &self.covariance)?)?;
        Ok(StoredPredictor {
            beta: self.parameters[..self.beta_len].iter().map(|r| r.estimate).collect(),
            cov: full.block(0..self.beta_len)?,
        })
    }
}

/// β with its covariance, detached from the fit that produced them.
#[derive(Debug, Clone)]
pub struct StoredPredictor {
    pub beta: Vec<f64>,
    pub cov: SymMatrix<f64>,
}

impl LinearPredictorFit<f64> for StoredPredictor {
    fn beta(&self) -> &[f64] {
        &self.beta
    }

    fn beta_cov(&self) -> Result<SymMatrix<f64>> {
        Ok(self.cov.clone())
    }
}
