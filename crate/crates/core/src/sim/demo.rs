//! Synthetic longitudinal data with a nonlinear age trend and a treatment
//! that lowers the outcome, is more common at older ages, and is taken up
//! preferentially by subjects with high outcome errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use crate::data::{CovariateNames, LongDataset, RawObs};
use crate::error::{Error, Result};
use crate::numerics::cholesky;
use crate::spline::{ncs_basis, ncs_column_names};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgeDemoConfig {
    pub n_subjects: usize,
    pub n_times: usize,
    /// Age (decades) at the first visit is uniform on this range.
    pub baseline_age: (f64, f64),
    /// Decades between visits.
    pub visit_gap: f64,
    pub knots: Vec<f64>,
    /// Natural-history coefficients on `(1, ns(age))`.
    pub beta: Vec<f64>,
    /// Treatment index coefficients on `(1, age, z1)`.
    pub alpha: Vec<f64>,
    pub treatment_effect: f64,
    pub rho: f64,
    pub seed: u64,
}

impl Default for AgeDemoConfig {
    fn default() -> Self {
        Self {
            n_subjects: 500,
            n_times: 3,
            baseline_age: (4.5, 8.0),
            visit_gap: 0.5,
            knots: vec![5.5, 7.0, 8.5],
            // rises by 1 per decade below the first knot, falls by 0.35
            // per decade beyond the last
            beta: vec![-5.0, 1.0, -0.3],
            alpha: vec![-6.5, 0.9, 0.5],
            treatment_effect: -1.5,
            rho: 0.5,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgeDemo {
    pub data: LongDataset<f64>,
    pub config: AgeDemoConfig,
}

impl AgeDemoConfig {
    pub fn age_range(&self) -> (f64, f64) {
        (
            self.baseline_age.0,
            self.baseline_age.1 + self.visit_gap * self.n_times.saturating_sub(1) as f64,
        )
    }

    /// Natural-history mean at `age`.
    pub fn truth(&self, age: f64) -> Result<f64> {
        let b = ncs_basis(age, &self.knots)?;
        Ok(self.beta[0] + b.iter().zip(&self.beta[1..]).map(|(x, c)| x * c).sum::<f64>())
    }

    fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.n_times == 0 {
            return Err(Error::InvalidConfig("demo needs subjects and visits".into()));
        }
        if self.beta.len() != self.knots.len() {
            return Err(Error::InvalidConfig(format!(
                "beta needs {} entries for {} knots",
                self.knots.len(),
                self.knots.len()
            )));
        }
        if self.alpha.len() != 3 {
            return Err(Error::InvalidConfig("alpha needs 3 entries".into()));
        }
        if !(self.baseline_age.0 < self.baseline_age.1) {
            return Err(Error::InvalidConfig("baseline age range is empty".into()));
        }
        ncs_basis(self.baseline_age.0, &self.knots).map(|_| ())
    }
}

pub fn age_demo(cfg: &AgeDemoConfig) -> Result<AgeDemo> {
    cfg.validate()?;
    let t_max = cfg.n_times;
    let errors = SimConfig {
        n_times: t_max,
        rho_y: 0.5,
        rho: cfg.rho,
        rho_ay: 0.2,
        rho_a: 0.5,
        ..SimConfig::default()
    };
    let l = cholesky(&errors.error_covariance()?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x_names = ncs_column_names("age", cfg.knots.len());
    let names = CovariateNames::with_intercepts(&x_names, &["age".into(), "z1".into()], &[]);
    let mut obs = Vec::with_capacity(cfg.n_subjects * t_max);
    for i in 0..cfg.n_subjects {
        let base = rng.random_range(cfg.baseline_age.0..cfg.baseline_age.1);
        let z: Vec<f64> = (0..2 * t_max).map(|_| rng.sample(StandardNormal)).collect();
        let e: Vec<f64> = (0..2 * t_max).map(|r| (0..=r).map(|k| l[(r, k)] * z[k]).sum()).collect();
        for t in 0..t_max {
            let age = base + cfg.visit_gap * t as f64;
            let z1: f64 = rng.sample(StandardNormal);
            let index = cfg.alpha[0] + cfg.alpha[1] * age + cfg.alpha[2] * z1 + e[t_max + t];
            let treated = index > 0.0;
            let y = cfg.truth(age)? + if treated { cfg.treatment_effect } else { 0.0 } + e[t];
            let mut x = vec![1.0];
            x.extend(ncs_basis(age, &cfg.knots)?);
            obs.push(RawObs {
                subject: format!("{}", i + 1),
                time: (t + 1) as u32,
                y,
                treated,
                x,
                z: vec![1.0, age, z1],
                w: vec![1.0],
            });
        }
    }
    Ok(AgeDemo {
        data: LongDataset::from_observations(names, obs)?,
        config: cfg.clone(),
    })
}
