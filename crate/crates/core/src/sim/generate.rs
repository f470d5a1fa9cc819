use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{Missingness, SimConfig, N_COEF, N_COVARIATES};
use crate::data::{CovariateNames, LongDataset, ObsRow, RawObs};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Positions of the covariates entering X, Z and W (after the intercept),
/// zero-based into `O_1 … O_7`.
pub const X_COVARIATES: [usize; 4] = [0, 3, 4, 6];
pub const Z_COVARIATES: [usize; 4] = [1, 3, 5, 6];
pub const W_COVARIATES: [usize; 4] = [2, 4, 5, 6];

/// One subject's covariates, one array per visit.
pub type SubjectCovariates = Vec<[f64; N_COVARIATES]>;

/// Generated data together with the latent quantities behind it.
#[derive(Debug, Clone)]
pub struct SimPanel {
    pub data: LongDataset<f64>,
    pub covariates: Vec<SubjectCovariates>,
    /// Outcome errors, `[subject][visit]`.
    pub epsilon: Vec<Vec<f64>>,
    /// Treatment-index errors, `[subject][visit]`.
    pub gamma: Vec<Vec<f64>>,
}

pub fn design_names() -> CovariateNames {
    let names = |idx: &[usize]| idx.iter().map(|j| format!("O{}", j + 1)).collect::<Vec<_>>();
    CovariateNames::with_intercepts(&names(&X_COVARIATES), &names(&Z_COVARIATES), &names(&W_COVARIATES))
}

fn lower_times_normal<R: Rng + ?Sized>(l: &Matrix<f64>, rng: &mut R) -> Vec<f64> {
    let n = l.nrows();
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    (0..n).map(|i| (0..=i).map(|k| l[(i, k)] * z[k]).sum()).collect()
}

fn with_intercept(o: &[f64; N_COVARIATES], idx: &[usize; 4]) -> Vec<f64> {
    std::iter::once(1.0).chain(idx.iter().map(|&j| o[j])).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws data from a validated configuration; Cholesky factors are
/// computed once.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: SimConfig,
    cov_factor: Matrix<f64>,
    err_factor: Matrix<f64>,
}

impl Generator {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let (cov_factor, err_factor) = cfg.factors()?;
        Ok(Self {
            cfg: cfg.clone(),
            cov_factor,
            err_factor,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn covariates<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<SubjectCovariates> {
        (0..self.cfg.n_subjects)
            .map(|_| {
                let v = lower_times_normal(&self.cov_factor, rng);
                (0..self.cfg.n_times)
                    .map(|t| std::array::from_fn(|j| v[SimConfig::covariate_index(t, j)]))
                    .collect()
            })
            .collect()
    }

    pub fn outcomes<R: Rng + ?Sized>(&self, covariates: Vec<SubjectCovariates>, rng: &mut R) -> Result<SimPanel> {
        let t_max = self.cfg.n_times;
        if covariates.iter().any(|c| c.len() != t_max) {
            return Err(Error::InvalidData(format!("every subject needs {t_max} visits")));
        }
        let mut obs = Vec::with_capacity(covariates.len() * t_max);
        let mut epsilon = Vec::with_capacity(covariates.len());
        let mut gamma = Vec::with_capacity(covariates.len());
        for (i, subj) in covariates.iter().enumerate() {
            let e = lower_times_normal(&self.err_factor, rng);
            let (eps, gam) = e.split_at(t_max);
            for (t, o) in subj.iter().enumerate() {
                let x = with_intercept(o, &X_COVARIATES);
                let z = with_intercept(o, &Z_COVARIATES);
                let w = with_intercept(o, &W_COVARIATES);
                let treated = dot(&z, &self.cfg.alpha) + gam[t] > 0.0;
                let a = if treated { 1.0 } else { 0.0 };
                let y = dot(&x, &self.cfg.beta) + a * dot(&w, &self.cfg.eta) + eps[t];
                obs.push(RawObs {
                    subject: format!("{}", i + 1),
                    time: (t + 1) as u32,
                    y,
                    treated,
                    x,
                    z,
                    w,
                });
            }
            epsilon.push(eps.to_vec());
            gamma.push(gam.to_vec());
        }
        Ok(SimPanel {
            data: LongDataset::from_observations(design_names(), obs)?,
            covariates,
            epsilon,
            gamma,
        })
    }

    pub fn panel<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SimPanel> {
        let cov = self.covariates(rng);
        self.outcomes(cov, rng)
    }
}

pub fn gen_covariates<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<Vec<SubjectCovariates>> {
    Ok(Generator::new(cfg)?.covariates(rng))
}

pub fn gen_outcomes<R: Rng + ?Sized>(
    covariates: Vec<SubjectCovariates>,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<SimPanel> {
    Generator::new(cfg)?.outcomes(covariates, rng)
}

fn expit(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Sum of the seven latent covariates, read back from the fixed design.
fn covariate_total(row: &ObsRow<f64>) -> f64 {
    // X = (1, O1, O4, O5, O7), Z = (1, O2, O4, O6, O7), W = (1, O3, O5, O6, O7)
    row.x[1] + row.z[1] + row.w[1] + row.x[2] + row.x[3] + row.z[3] + row.x[4]
}

/// Probability that `row` is deleted under `mechanism`.
pub fn deletion_probability(row: &ObsRow<f64>, mechanism: Missingness) -> f64 {
    match mechanism {
        Missingness::None => 0.0,
        Missingness::Mcar => match row.time {
            2 => 1.0 / 3.0,
            3 => 0.5,
            _ => 0.0,
        },
        Missingness::Covariate => expit(-1.0 + 0.2 * covariate_total(row)),
        Missingness::Outcome => {
            if row.y <= -1.0 {
                0.1
            } else if row.y <= 2.0 {
                0.4
            } else {
                0.7
            }
        }
    }
}

/// Deletes rows of a generated panel; one uniform draw per row in storage
/// order.
pub fn apply_missingness<R: Rng + ?Sized>(
    d: &LongDataset<f64>,
    mechanism: Missingness,
    rng: &mut R,
) -> Result<LongDataset<f64>> {
    if mechanism == Missingness::None {
        return Ok(d.clone());
    }
    if d.dims() != (N_COEF, N_COEF, N_COEF) {
        return Err(Error::InvalidData("missingness needs the simulation design".into()));
    }
    d.filter_rows(|r| {
        let u: f64 = rng.random();
        u >= deletion_probability(r, mechanism)
    })
}
