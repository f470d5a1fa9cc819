//! Bivariate-normal treatment-effects likelihood for one observation, its
//! analytic score, and the pooled (working-independence) sums.
//!
//! Structural model for row `(y, A, x, z, w)`:
//!
//! ```text
//! y  = xᵀβ + (wᵀη)·A + ε
//! A* = zᵀα + γ,        A = 1(A* > 0)
//! (ε, γ) ~ N(0, [[σ², ρσ], [ρσ, 1]])
//! ```
//!
//! With `r = y − xᵀβ − (wᵀη)A` and `u = r/σ`, the contribution is
//!
//! ```text
//! ℓ = log φ(u) − log σ + log Φ( s · (zᵀα + ρu) / √(1−ρ²) ),   s = +1 if A = 1 else −1
//! ```
//!
//! Parameters are optimised unconstrained: `σ = exp(log_sigma_y)` and
//! `ρ = map(varrho)`.

use serde::{Deserialize, Serialize};

use crate::data::{CovariateNames, LongDataset, ObsRow};
use crate::error::{Error, Result};
use crate::numerics::{inverse_mills, log_std_normal_cdf, log_std_normal_pdf};
use crate::scalar::{CompensatedSum, Real};

/// Bijection from the real line onto the correlation interval (−1, 1).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMap {
    /// `ρ = 2/(1 + e^{−ϱ}) − 1 = tanh(ϱ/2)`
    #[default]
    Logistic,
    /// `ρ = 2·atan(ϱ)/π`
    Arctan,
}

impl RhoMap {
    pub fn rho<T: Real>(self, varrho: T) -> T {
        match self {
            RhoMap::Logistic => (varrho / T::lit(2.0)).tanh(),
            RhoMap::Arctan => T::lit(2.0) * varrho.atan() / T::PI(),
        }
    }

    pub fn varrho<T: Real>(self, rho: T) -> T {
        match self {
            RhoMap::Logistic => T::lit(2.0) * rho.atanh(),
            RhoMap::Arctan => (rho * T::PI() / T::lit(2.0)).tan(),
        }
    }

    /// `dρ/dϱ`.
    pub fn derivative<T: Real>(self, varrho: T) -> T {
        match self {
            RhoMap::Logistic => self.one_minus_rho_sq(varrho) / T::lit(2.0),
            RhoMap::Arctan => T::lit(2.0) / (T::PI() * (T::one() + varrho * varrho)),
        }
    }

    /// `1 − ρ²` computed without cancellation as `|ρ| → 1`.
    pub fn one_minus_rho_sq<T: Real>(self, varrho: T) -> T {
        match self {
            RhoMap::Logistic => {
                let c = (varrho / T::lit(2.0)).cosh();
                (c * c).recip()
            }
            RhoMap::Arctan => {
                let rho = self.rho(varrho);
                // 1 − |ρ| = 2·atan(1/|ϱ|)/π
                let comp = T::lit(2.0) * varrho.abs().recip().atan() / T::PI();
                comp * (T::one() + rho.abs())
            }
        }
    }
}

/// Logistic correlation map `ρ = 2/(1 + e^{−ϱ}) − 1`.
pub fn rho_of_varrho<T: Real>(varrho: T) -> T {
    RhoMap::Logistic.rho(varrho)
}

/// Inverse of [`rho_of_varrho`].
pub fn varrho_of_rho<T: Real>(rho: T) -> T {
    RhoMap::Logistic.varrho(rho)
}

/// Full parameter vector in its unconstrained parameterisation.
///
/// Flattened order: `β (J_X) | η (J_W) | α (J_Z) | log σ_Y | ϱ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta<T> {
    pub beta: Vec<T>,
    pub eta: Vec<T>,
    pub alpha: Vec<T>,
    pub log_sigma_y: T,
    pub varrho: T,
    #[serde(default)]
    pub rho_map: RhoMap,
}

impl<T: Real> Theta<T> {
    pub fn zeros(jx: usize, jz: usize, jw: usize) -> Self {
        Self {
            beta: vec![T::zero(); jx],
            eta: vec![T::zero(); jw],
            alpha: vec![T::zero(); jz],
            log_sigma_y: T::zero(),
            varrho: T::zero(),
            rho_map: RhoMap::Logistic,
        }
    }

    /// Builds θ from natural-scale σ_Y and ρ.
    pub fn from_natural(beta: Vec<T>, eta: Vec<T>, alpha: Vec<T>, sigma_y: T, rho: T) -> Self {
        Self {
            beta,
            eta,
            alpha,
            log_sigma_y: sigma_y.ln(),
            varrho: varrho_of_rho(rho),
            rho_map: RhoMap::Logistic,
        }
    }

    pub fn dim(&self) -> usize {
        self.beta.len() + self.eta.len() + self.alpha.len() + 2
    }

    pub fn sigma_y(&self) -> T {
        self.log_sigma_y.exp()
    }

    pub fn rho(&self) -> T {
        self.rho_map.rho(self.varrho)
    }

    pub fn layout(&self) -> ThetaLayout {
        ThetaLayout::new(self.beta.len(), self.alpha.len(), self.eta.len())
    }

    pub fn to_vec(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.eta);
        v.extend_from_slice(&self.alpha);
        v.push(self.log_sigma_y);
        v.push(self.varrho);
        v
    }

    /// Inverse of [`Theta::to_vec`] for the given layout.
    pub fn from_slice(layout: ThetaLayout, v: &[T], rho_map: RhoMap) -> Result<Self> {
        if v.len() != layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.dim(),
                got: v.len(),
            });
        }
        Ok(Self {
            beta: v[layout.beta()].to_vec(),
            eta: v[layout.eta()].to_vec(),
            alpha: v[layout.alpha()].to_vec(),
            log_sigma_y: v[layout.log_sigma_y()],
            varrho: v[layout.varrho()],
            rho_map,
        })
    }

    fn check_dims(&self, d: &LongDataset<T>) -> Result<()> {
        let (jx, jz, jw) = d.dims();
        let want = ThetaLayout::new(jx, jz, jw);
        if self.layout() != want {
            return Err(Error::DimensionMismatch {
                expected: want.dim(),
                got: self.dim(),
            });
        }
        Ok(())
    }
}

/// Index ranges of each block inside the flattened θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaLayout {
    pub jx: usize,
    pub jz: usize,
    pub jw: usize,
}

impl ThetaLayout {
    pub fn new(jx: usize, jz: usize, jw: usize) -> Self {
        Self { jx, jz, jw }
    }

    pub fn dim(&self) -> usize {
        self.jx + self.jw + self.jz + 2
    }

    pub fn beta(&self) -> std::ops::Range<usize> {
        0..self.jx
    }

    pub fn eta(&self) -> std::ops::Range<usize> {
        self.jx..self.jx + self.jw
    }

    pub fn alpha(&self) -> std::ops::Range<usize> {
        self.jx + self.jw..self.jx + self.jw + self.jz
    }

    pub fn log_sigma_y(&self) -> usize {
        self.jx + self.jw + self.jz
    }

    pub fn varrho(&self) -> usize {
        self.log_sigma_y() + 1
    }

    /// `beta[col]`, `eta[col]`, `alpha[col]`, `log_sigma_y`, `varrho`.
    pub fn parameter_names(&self, names: &CovariateNames) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend(names.x.iter().map(|n| format!("beta[{n}]")));
        out.extend(names.w.iter().map(|n| format!("eta[{n}]")));
        out.extend(names.z.iter().map(|n| format!("alpha[{n}]")));
        out.push("log_sigma_y".into());
        out.push("varrho".into());
        out
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Quantities shared by the log-likelihood and its score.
struct RowTerms<T> {
    u: T,
    sign: T,
    mean_index: T,
    probit_arg: T,
}

/// Per-θ constants, so pooled loops do not recompute them per row.
struct ThetaConsts<T> {
    sigma: T,
    rho: T,
    one_minus_rho_sq: T,
    sqrt_q: T,
    drho: T,
}

impl<T: Real> ThetaConsts<T> {
    fn new(theta: &Theta<T>) -> Self {
        let q = theta.rho_map.one_minus_rho_sq(theta.varrho);
        Self {
            sigma: theta.sigma_y(),
            rho: theta.rho(),
            one_minus_rho_sq: q,
            sqrt_q: q.sqrt(),
            drho: theta.rho_map.derivative(theta.varrho),
        }
    }
}

fn row_terms<T: Real>(theta: &Theta<T>, c: &ThetaConsts<T>, row: &ObsRow<T>) -> RowTerms<T> {
    let a = row.a();
    let residual = row.y - dot(&row.x, &theta.beta) - a * dot(&row.w, &theta.eta);
    let u = residual / c.sigma;
    let sign = if row.treated { T::one() } else { -T::one() };
    let mean_index = dot(&row.z, &theta.alpha) + c.rho * u;
    RowTerms {
        u,
        sign,
        mean_index,
        probit_arg: sign * mean_index / c.sqrt_q,
    }
}

fn loglik_from_terms<T: Real>(theta: &Theta<T>, t: &RowTerms<T>) -> T {
    log_std_normal_pdf(t.u) - theta.log_sigma_y + log_std_normal_cdf(t.probit_arg)
}

/// Log-likelihood contribution of one observation.
pub fn obs_loglik<T: Real>(theta: &Theta<T>, row: &ObsRow<T>) -> T {
    let c = ThetaConsts::new(theta);
    loglik_from_terms(theta, &row_terms(theta, &c, row))
}

/// Writes `∂ℓ/∂θ` (unconstrained coordinates) into `grad` and returns ℓ.
fn loglik_and_score_into<T: Real>(
    theta: &Theta<T>,
    c: &ThetaConsts<T>,
    row: &ObsRow<T>,
    grad: &mut [T],
) -> T {
    let t = row_terms(theta, c, row);
    let ll = loglik_from_terms(theta, &t);
    let lambda = inverse_mills(t.probit_arg);
    let lam_s = lambda * t.sign;

    // ∂ℓ/∂r: Gaussian part −u/σ, probit part λ·s·ρ/(σ√(1−ρ²))
    let d_resid = (-t.u + lam_s * c.rho / c.sqrt_q) / c.sigma;
    let a = row.a();
    let (jx, jw) = (theta.beta.len(), theta.eta.len());
    let mut k = 0;
    for &xj in &row.x {
        grad[k] = -d_resid * xj;
        k += 1;
    }
    for &wj in &row.w {
        grad[k] = -d_resid * a * wj;
        k += 1;
    }
    debug_assert_eq!(k, jx + jw);
    let d_index = lam_s / c.sqrt_q;
    for &zj in &row.z {
        grad[k] = d_index * zj;
        k += 1;
    }
    // ∂u/∂log σ = −u
    grad[k] = t.u * t.u - T::one() - lam_s * c.rho * t.u / c.sqrt_q;
    // ∂/∂ρ of s·(zᵀα + ρu)/√(1−ρ²) = s·(u + ρ·m/(1−ρ²))/√(1−ρ²)
    let d_rho = lam_s * (t.u + c.rho * t.mean_index / c.one_minus_rho_sq) / c.sqrt_q;
    grad[k + 1] = d_rho * c.drho;
    ll
}

/// Analytic gradient of [`obs_loglik`] in the unconstrained coordinates,
/// flattened as in [`Theta::to_vec`].
pub fn obs_score<T: Real>(theta: &Theta<T>, row: &ObsRow<T>) -> Vec<T> {
    let c = ThetaConsts::new(theta);
    let mut g = vec![T::zero(); theta.dim()];
    loglik_and_score_into(theta, &c, row, &mut g);
    g
}

/// Negative pooled log-likelihood and its gradient, summed over every row
/// of every subject (working independence). Sums are compensated.
pub fn pooled_negloglik_and_score<T: Real>(theta: &Theta<T>, d: &LongDataset<T>) -> Result<(T, Vec<T>)> {
    theta.check_dims(d)?;
    let c = ThetaConsts::new(theta);
    let p = theta.dim();
    let mut buf = vec![T::zero(); p];
    let mut ll = CompensatedSum::new();
    let mut grad = vec![CompensatedSum::new(); p];
    for row in d.rows() {
        ll.add(loglik_and_score_into(theta, &c, row, &mut buf));
        for (acc, &g) in grad.iter_mut().zip(&buf) {
            acc.add(g);
        }
    }
    let value = -ll.value();
    let grad: Vec<T> = grad.iter().map(|g| -g.value()).collect();
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLikelihood);
    }
    Ok((value, grad))
}

/// Pooled log-likelihood only.
pub fn pooled_loglik<T: Real>(theta: &Theta<T>, d: &LongDataset<T>) -> Result<T> {
    theta.check_dims(d)?;
    let c = ThetaConsts::new(theta);
    let v = d
        .rows()
        .iter()
        .map(|r| loglik_from_terms(theta, &row_terms(theta, &c, r)))
        .collect::<CompensatedSum<T>>()
        .value();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLikelihood)
    }
}

/// Score summed within each subject: `Uᵢ(θ) = Σ_t ∂ℓ_it/∂θ`.
pub fn subject_scores<T: Real>(theta: &Theta<T>, d: &LongDataset<T>) -> Result<Vec<Vec<T>>> {
    theta.check_dims(d)?;
    let c = ThetaConsts::new(theta);
    let p = theta.dim();
    let mut buf = vec![T::zero(); p];
    let mut out = Vec::with_capacity(d.n_subjects());
    for cluster in d.clusters() {
        let mut acc = vec![CompensatedSum::new(); p];
        for row in cluster {
            loglik_and_score_into(theta, &c, row, &mut buf);
            for (a, &g) in acc.iter_mut().zip(&buf) {
                a.add(g);
            }
        }
        let u: Vec<T> = acc.iter().map(|a| a.value()).collect();
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLikelihood);
        }
        out.push(u);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RawObs;

    fn row(y: f64, treated: bool, x: Vec<f64>, z: Vec<f64>, w: Vec<f64>) -> ObsRow<f64> {
        ObsRow {
            subject: 0,
            time: 0,
            y,
            treated,
            x,
            z,
            w,
        }
    }

    #[test]
    fn rho_map_values() {
        assert_eq!(rho_of_varrho(0.0_f64), 0.0);
        assert!((rho_of_varrho(1.0_f64) - 0.4621171572600098).abs() < 1e-16);
        // same value via the printed logistic form
        assert!((rho_of_varrho(1.0_f64) - (2.0 / (1.0 + (-1.0_f64).exp()) - 1.0)).abs() < 1e-15);
        assert!(rho_of_varrho(40.0_f64) > 1.0 - 1e-12);
        let mut prev = -1.0;
        for i in -200..=200 {
            let r = rho_of_varrho(i as f64 * 0.05);
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn rho_round_trip() {
        for map in [RhoMap::Logistic, RhoMap::Arctan] {
            for i in 0..=1998 {
                let rho = -0.999 + i as f64 * 0.001;
                let back = map.rho(map.varrho(rho));
                assert!((back - rho).abs() < 1e-12, "{map:?} rho={rho}");
            }
        }
    }

    #[test]
    fn one_minus_rho_sq_is_accurate() {
        for map in [RhoMap::Logistic, RhoMap::Arctan] {
            for v in [-3.0_f64, -0.2, 0.0, 0.7, 5.0] {
                let r = map.rho(v);
                assert!((map.one_minus_rho_sq(v) - (1.0 - r * r)).abs() < 1e-14);
            }
            assert!(map.one_minus_rho_sq(60.0_f64) > 0.0);
        }
    }

    #[test]
    fn trivial_theta_loglik() {
        let theta = Theta::<f64>::zeros(1, 1, 1);
        let r = row(0.0, true, vec![1.0], vec![1.0], vec![1.0]);
        let ll = obs_loglik(&theta, &r);
        assert!((ll + 1.6120857137646178).abs() < 1e-15);
    }

    #[test]
    fn factorises_at_zero_correlation() {
        let theta = Theta::from_natural(vec![0.3, -1.0], vec![0.5], vec![0.2, 0.7], 1.7, 0.0);
        for (y, a) in [(0.4, true), (-2.0, false), (3.3, true)] {
            let r = row(y, a, vec![1.0, 0.8], vec![1.0, -1.2], vec![1.0]);
            let resid = y - 0.3 + 0.8 - if a { 0.5 } else { 0.0 };
            let sd = 1.7_f64;
            let gauss = -0.5 * (resid / sd).powi(2) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
            let index = 0.2 - 1.2 * 0.7;
            let p1 = 0.5 * libm::erfc(-index / std::f64::consts::SQRT_2);
            let probit = if a { p1.ln() } else { (1.0 - p1).ln() };
            assert!((obs_loglik(&theta, &r) - gauss - probit).abs() < 1e-12);
        }
    }

    /// Independent oracle: p(y) · P(A = 1 | y) from the conditional
    /// distribution of γ given ε, written out directly.
    #[test]
    fn matches_conditional_decomposition() {
        let theta = Theta::from_natural(vec![1.0, 1.0], vec![0.2], vec![0.0, 1.0], 2.0, 0.5);
        let r = row(3.0, true, vec![1.0, 2.0], vec![1.0, -1.0], vec![1.0]);
        let (sigma, rho) = (2.0_f64, 0.5_f64);
        let eps = 3.0 - (1.0 + 2.0) - 0.2;
        let dens = (-(eps * eps) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        // γ | ε ~ N(ρ ε/σ, 1 − ρ²); A = 1 ⇔ γ > −zᵀα
        let za = -1.0;
        let cond_mean = rho * eps / sigma;
        let cond_sd = (1.0 - rho * rho).sqrt();
        let p_treated = 0.5 * libm::erfc(-((za + cond_mean) / cond_sd) / std::f64::consts::SQRT_2);
        let oracle = (dens * p_treated).ln();
        assert!((obs_loglik(&theta, &r) - oracle).abs() < 1e-10);
    }

    fn finite_difference(theta: &Theta<f64>, r: &ObsRow<f64>) -> Vec<f64> {
        let v = theta.to_vec();
        (0..v.len())
            .map(|k| {
                let h = 1e-6 * v[k].abs().max(1.0);
                let mut up = v.clone();
                let mut dn = v.clone();
                up[k] += h;
                dn[k] -= h;
                let tu = Theta::from_slice(theta.layout(), &up, theta.rho_map).unwrap();
                let td = Theta::from_slice(theta.layout(), &dn, theta.rho_map).unwrap();
                (obs_loglik(&tu, r) - obs_loglik(&td, r)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn score_matches_finite_differences_both_maps() {
        for map in [RhoMap::Logistic, RhoMap::Arctan] {
            for (y, a, vr) in [(0.3, true, 0.8), (-1.5, false, -1.1), (4.0, true, 2.5), (-6.0, true, -0.3)] {
                let mut theta = Theta::from_natural(vec![0.2, 0.9], vec![-0.4, 0.3], vec![0.1, 1.3], 1.4, 0.0);
                theta.varrho = vr;
                theta.rho_map = map;
                let r = row(y, a, vec![1.0, 0.6], vec![1.0, -0.9], vec![1.0, 1.7]);
                let an = obs_score(&theta, &r);
                let fd = finite_difference(&theta, &r);
                for (k, (x, f)) in an.iter().zip(&fd).enumerate() {
                    let rel = (x - f).abs() / f.abs().max(1e-3);
                    assert!(rel < 1e-6, "{map:?} k={k} analytic={x} fd={f}");
                }
            }
        }
    }

    #[test]
    fn beta_score_at_zero_correlation() {
        let theta = Theta::from_natural(vec![0.5, 1.0], vec![0.1], vec![0.3, -0.2], 1.5, 0.0);
        let r = row(2.0, true, vec![1.0, 0.4], vec![1.0, 2.0], vec![1.0]);
        let resid = 2.0 - 0.5 - 0.4 - 0.1;
        let g = obs_score(&theta, &r);
        assert!((g[0] - resid / 2.25).abs() < 1e-14);
        assert!((g[1] - resid / 2.25 * 0.4).abs() < 1e-14);
    }

    fn tiny_dataset() -> LongDataset<f64> {
        let names = CovariateNames::with_intercepts(&["x1".into()], &["z1".into()], &[]);
        let obs = (0..6)
            .map(|i| RawObs {
                subject: format!("{}", i / 2),
                time: (i % 2) as u32,
                y: i as f64 * 0.7 - 1.0,
                treated: i % 3 == 0,
                x: vec![1.0, (i as f64).sin()],
                z: vec![1.0, (i as f64).cos()],
                w: vec![1.0],
            })
            .collect();
        LongDataset::from_observations(names, obs).unwrap()
    }

    #[test]
    fn pooled_is_sum_of_rows() {
        let d = tiny_dataset();
        let theta = Theta::from_natural(vec![0.1, 0.2], vec![0.3], vec![-0.1, 0.4], 1.2, 0.3);
        let (f, g) = pooled_negloglik_and_score(&theta, &d).unwrap();
        let f_rows: f64 = d.rows().iter().map(|r| obs_loglik(&theta, r)).sum();
        assert!((f + f_rows).abs() < 1e-12);
        let subj = subject_scores(&theta, &d).unwrap();
        assert_eq!(subj.len(), 3);
        for k in 0..theta.dim() {
            let s: f64 = subj.iter().map(|u| u[k]).sum();
            assert!((s + g[k]).abs() < 1e-12);
        }
        assert!((pooled_loglik(&theta, &d).unwrap() + f).abs() < 1e-12);
    }

    #[test]
    fn single_row_and_doubling() {
        let d = tiny_dataset();
        let theta = Theta::from_natural(vec![0.1, 0.2], vec![0.3], vec![-0.1, 0.4], 1.2, 0.3);
        let one = d.filter_rows(|r| r.subject == 0 && r.time == 0).unwrap();
        let (f1, g1) = pooled_negloglik_and_score(&theta, &one).unwrap();
        assert_eq!(f1, -obs_loglik(&theta, &one.rows()[0]));
        let s1 = obs_score(&theta, &one.rows()[0]);
        for (a, b) in g1.iter().zip(&s1) {
            assert_eq!(*a, -b);
        }

        let mut obs = d.to_observations();
        let mut copy = d.to_observations();
        for o in &mut copy {
            o.subject.push_str("-copy");
        }
        obs.extend(copy);
        let doubled = LongDataset::from_observations(d.names().clone(), obs).unwrap();
        let (f, g) = pooled_negloglik_and_score(&theta, &d).unwrap();
        let (f2, g2) = pooled_negloglik_and_score(&theta, &doubled).unwrap();
        assert!((f2 - 2.0 * f).abs() <= 1e-14 * f.abs());
        for (a, b) in g2.iter().zip(&g) {
            assert!((a - 2.0 * b).abs() <= 1e-13 * b.abs().max(1.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let d = tiny_dataset();
        let theta = Theta::<f64>::zeros(3, 2, 1);
        assert!(matches!(
            pooled_negloglik_and_score(&theta, &d),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn extreme_index_stays_finite() {
        let theta = Theta::from_natural(vec![0.0], vec![0.0], vec![-60.0], 1.0, 0.95);
        let r = row(0.0, true, vec![1.0], vec![1.0], vec![1.0]);
        let ll = obs_loglik(&theta, &r);
        assert!(ll.is_finite());
        assert!(obs_score(&theta, &r).iter().all(|g| g.is_finite()));
    }

    #[test]
    fn single_precision_tracks_double() {
        let theta = Theta::from_natural(vec![0.2, 0.9], vec![-0.4], vec![0.1, 1.3], 1.4, 0.4);
        let r = row(0.3, true, vec![1.0, 0.6], vec![1.0, -0.9], vec![1.0]);
        let t32 = Theta::<f32> {
            beta: theta.beta.iter().map(|&v| v as f32).collect(),
            eta: theta.eta.iter().map(|&v| v as f32).collect(),
            alpha: theta.alpha.iter().map(|&v| v as f32).collect(),
            log_sigma_y: theta.log_sigma_y as f32,
            varrho: theta.varrho as f32,
            rho_map: RhoMap::Logistic,
        };
        let r32 = ObsRow {
            subject: 0,
            time: 0,
            y: 0.3f32,
            treated: true,
            x: vec![1.0, 0.6],
            z: vec![1.0, -0.9],
            w: vec![1.0],
        };
        let a = obs_loglik(&theta, &r);
        let b = obs_loglik(&t32, &r32) as f64;
        assert!((a - b).abs() < 1e-5);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;
        use statrs::distribution::{Continuous, Normal};

        /// Φ by the everywhere-positive erf series; statrs' erfc is only
        /// good to about 1e-10 relative, too coarse for this comparison.
        fn phi_series(x: f64) -> f64 {
            let t = x / std::f64::consts::SQRT_2;
            let mut term = t;
            let mut total = t;
            let mut n = 0.0;
            while term.abs() > 1e-20 * total.abs() {
                n += 1.0;
                term *= 2.0 * t * t / (2.0 * n + 1.0);
                total += term;
            }
            0.5 * (1.0 + 2.0 / std::f64::consts::PI.sqrt() * (-t * t).exp() * total)
        }

        fn rows_strategy() -> impl Strategy<Value = Vec<(f64, bool, f64, f64, f64)>> {
            prop::collection::vec((-4.0..4.0f64, any::<bool>(), -2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64), 1..12)
        }

        fn make_rows(spec: &[(f64, bool, f64, f64, f64)]) -> Vec<ObsRow<f64>> {
            spec.iter()
                .map(|&(y, a, x1, z1, w1)| row(y, a, vec![1.0, x1], vec![1.0, z1], vec![1.0, w1]))
                .collect()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn factorises_into_regression_and_probit(
                spec in rows_strategy(),
                b in prop::array::uniform2(-2.0..2.0f64),
                e in prop::array::uniform2(-1.0..1.0f64),
                al in prop::array::uniform2(-1.5..1.5f64),
                sigma in 0.3..3.0f64,
            ) {
                let theta = Theta::from_natural(b.to_vec(), e.to_vec(), al.to_vec(), sigma, 0.0);
                                let reg = Normal::new(0.0, sigma).unwrap();
                for r in make_rows(&spec) {
                    let mean = b[0] + b[1] * r.x[1] + r.a() * (e[0] + e[1] * r.w[1]);
                    let gauss = reg.pdf(r.y - mean).ln();
                    let idx = al[0] + al[1] * r.z[1];
                    let probit = if r.treated { phi_series(idx) } else { phi_series(-idx) }.ln();
                    prop_assert!((obs_loglik(&theta, &r) - gauss - probit).abs() < 1e-10);
                }
            }

            #[test]
            fn rescaling_outcome_shifts_loglik(
                spec in rows_strategy(),
                b in prop::array::uniform2(-2.0..2.0f64),
                e in prop::array::uniform2(-1.0..1.0f64),
                al in prop::array::uniform2(-1.5..1.5f64),
                sigma in 0.3..3.0f64,
                rho in -0.9..0.9f64,
                c in 0.1..10.0f64,
            ) {
                let rows = make_rows(&spec);
                let theta = Theta::from_natural(b.to_vec(), e.to_vec(), al.to_vec(), sigma, rho);
                let scaled_theta = Theta::from_natural(
                    b.iter().map(|v| v * c).collect(),
                    e.iter().map(|v| v * c).collect(),
                    al.to_vec(),
                    sigma * c,
                    rho,
                );
                let base: f64 = rows.iter().map(|r| obs_loglik(&theta, r)).sum();
                let scaled: f64 = rows
                    .iter()
                    .map(|r| {
                        let mut r2 = r.clone();
                        r2.y *= c;
                        obs_loglik(&scaled_theta, &r2)
                    })
                    .sum();
                let want = base - rows.len() as f64 * c.ln();
                prop_assert!((scaled - want).abs() < 1e-9 * (1.0 + want.abs()));
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(20))]

            #[test]
            fn score_consistent_with_finite_differences(
                spec in prop::collection::vec((-4.0..4.0f64, any::<bool>(), -2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64), 5),
                b in prop::array::uniform2(-2.0..2.0f64),
                e in prop::array::uniform2(-1.0..1.0f64),
                al in prop::array::uniform2(-1.5..1.5f64),
                log_sigma in -1.0..1.0f64,
                varrho in -3.0..3.0f64,
            ) {
                let mut theta = Theta::from_natural(b.to_vec(), e.to_vec(), al.to_vec(), 1.0, 0.0);
                theta.log_sigma_y = log_sigma;
                theta.varrho = varrho;
                for r in make_rows(&spec) {
                    let an = obs_score(&theta, &r);
                    let fd = finite_difference(&theta, &r);
                    for (x, f) in an.iter().zip(&fd) {
                        prop_assert!((x - f).abs() / f.abs().max(1.0) < 1e-6, "analytic={} fd={}", x, f);
                    }
                }
            }
        }
    }
}
