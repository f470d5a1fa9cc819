use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, Matrix, SymMatrix};

/// Latent covariates `O_1 … O_7` drawn at every time point.
pub const N_COVARIATES: usize = 7;
/// Coefficients in each of X, Z and W (intercept plus four covariates).
pub const N_COEF: usize = 5;

/// Row deletion applied after generation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Missingness {
    #[default]
    None,
    /// Second visit dropped with probability 1/3, third with 1/2.
    Mcar,
    /// Each row dropped with probability `expit(−1 + 0.2·Σⱼ O_j)`.
    Covariate,
    /// Each row dropped with probability 0.1, 0.4 or 0.7 by outcome bin
    /// `Y ≤ −1`, `−1 < Y ≤ 2`, `Y > 2`.
    Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Sim1,
    Sim2,
    Sim3,
    Sim4,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim1" => Ok(Self::Sim1),
            "sim2" => Ok(Self::Sim2),
            "sim3" => Ok(Self::Sim3),
            "sim4" => Ok(Self::Sim4),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset {other:?} (expected sim1, sim2, sim3 or sim4)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_subjects: usize,
    pub n_times: usize,
    /// Correlation of different covariates at the same visit.
    pub corr_same_time: f64,
    /// Correlation of one covariate with itself across visits.
    pub corr_same_variable: f64,
    /// Correlation of different covariates at different visits.
    pub corr_cross: f64,
    pub sigma_y2: f64,
    /// Within-subject correlation of outcome errors.
    pub rho_y: f64,
    /// Same-visit correlation of outcome and treatment errors.
    pub rho: f64,
    /// Cross-visit correlation of outcome and treatment errors.
    pub rho_ay: f64,
    /// Within-subject correlation of treatment errors.
    pub rho_a: f64,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub eta: Vec<f64>,
    pub missingness: Missingness,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_subjects: 500,
            n_times: 3,
            corr_same_time: 0.20,
            corr_same_variable: 0.30,
            corr_cross: 0.10,
            sigma_y2: 1.0,
            rho_y: 0.60,
            rho: 0.50,
            rho_ay: 0.20,
            rho_a: 0.50,
            beta: vec![0.0, 1.0, 1.0, 1.0, 1.0],
            alpha: vec![0.0, 1.0, 1.0, 1.0, 1.0],
            eta: vec![0.0, 0.2, 0.2, 0.2, 0.2],
            missingness: Missingness::None,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn preset(p: Preset) -> Self {
        let missingness = match p {
            Preset::Sim1 => Missingness::None,
            Preset::Sim2 => Missingness::Mcar,
            Preset::Sim3 => Missingness::Covariate,
            Preset::Sim4 => Missingness::Outcome,
        };
        Self {
            missingness,
            ..Self::default()
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Index of covariate `j` at visit `t` in the stacked covariate vector.
    pub fn covariate_index(t: usize, j: usize) -> usize {
        t * N_COVARIATES + j
    }

    /// Correlation matrix of the `7T` stacked covariates.
    pub fn covariate_correlation(&self) -> Result<SymMatrix<f64>> {
        let n = N_COVARIATES * self.n_times;
        SymMatrix::from_fn(n, |a, b| {
            let (ta, ja) = (a / N_COVARIATES, a % N_COVARIATES);
            let (tb, jb) = (b / N_COVARIATES, b % N_COVARIATES);
            match (ta == tb, ja == jb) {
                (true, true) => 1.0,
                (true, false) => self.corr_same_time,
                (false, true) => self.corr_same_variable,
                (false, false) => self.corr_cross,
            }
        })
    }

    /// Covariance of `(ε_1 … ε_T, γ_1 … γ_T)`; treatment errors have unit
    /// variance.
    pub fn error_covariance(&self) -> Result<SymMatrix<f64>> {
        let t = self.n_times;
        let var = self.sigma_y2;
        let sd = var.sqrt();
        SymMatrix::from_fn(2 * t, |a, b| {
            let same = a % t == b % t;
            match (a < t, b < t) {
                (true, true) => {
                    if same {
                        var
                    } else {
                        self.rho_y * var
                    }
                }
                (false, false) => {
                    if same {
                        1.0
                    } else {
                        self.rho_a
                    }
                }
                _ => {
                    if same {
                        self.rho * sd
                    } else {
                        self.rho_ay * sd
                    }
                }
            }
        })
    }

    pub(crate) fn factors(&self) -> Result<(Matrix<f64>, Matrix<f64>)> {
        Ok((
            cholesky(&self.covariate_correlation()?)?,
            cholesky(&self.error_covariance()?)?,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_subjects == 0 {
            return bad("n_subjects must be at least 1".into());
        }
        if self.n_times == 0 {
            return bad("n_times must be at least 1".into());
        }
        if self.missingness == Missingness::Mcar && self.n_times != 3 {
            return bad(format!("mcar missingness needs n_times = 3, got {}", self.n_times));
        }
        for (name, v) in [("beta", &self.beta), ("alpha", &self.alpha), ("eta", &self.eta)] {
            if v.len() != N_COEF {
                return bad(format!("{name} needs {N_COEF} entries, got {}", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(format!("{name} has non-finite entries"));
            }
        }
        if !(self.sigma_y2 > 0.0 && self.sigma_y2.is_finite()) {
            return bad("sigma_y2 must be positive".into());
        }
        for (name, r) in [
            ("corr_same_time", self.corr_same_time),
            ("corr_same_variable", self.corr_same_variable),
            ("corr_cross", self.corr_cross),
            ("rho_y", self.rho_y),
            ("rho", self.rho),
            ("rho_ay", self.rho_ay),
            ("rho_a", self.rho_a),
        ] {
            if !(r > -1.0 && r < 1.0) {
                return bad(format!("{name} must lie in (-1, 1), got {r}"));
            }
        }
        self.factors().map(|_| ())
    }
}
