//! Fitting the joint outcome/treatment model: start values, BFGS on the
//! pooled likelihood, cluster-robust and model-based covariance, Wald
//! summaries and linear predictions.

use serde::{Deserialize, Serialize};

use crate::data::{check_overlap, CovariateGroup, LongDataset};
use crate::error::{Error, Result};
use crate::model::{pooled_negloglik_and_score, subject_scores, RhoMap, Theta, ThetaLayout};
use crate::numerics::{
    column_rank, inverse_mills, log_std_normal_cdf, solve_sym, std_normal_cdf, std_normal_quantile, Matrix,
    SymMatrix,
};
use crate::optim::{minimize_bfgs, BfgsOptions, OptimProblem, OptimResult, Termination};
use crate::scalar::{CompensatedSum, Real};

const PROBIT_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy)]
pub struct FitOptions<T> {
    /// Target for `‖Σ score‖_∞` at the solution.
    pub tol: T,
    pub max_iter: usize,
    pub rho_map: RhoMap,
    /// Abort with [`Error::NoOverlap`] instead of warning.
    pub strict_overlap: bool,
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-6).max(T::DEFAULT_GRAD_TOL),
            max_iter: 500,
            rho_map: RhoMap::Logistic,
            strict_overlap: false,
        }
    }
}

/// Non-fatal conditions recorded on a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitWarning {
    /// The outcome ranges of the two arms do not intersect.
    NoOutcomeOverlap {
        untreated: (f64, f64),
        treated: (f64, f64),
    },
    /// One subject only: the robust covariance is unreliable.
    SingleCluster,
    /// Subjects contribute several rows, so the model-based covariance
    /// ignores within-subject dependence.
    LongitudinalFisher,
    /// Covariance evaluated away from a score root.
    ScoreNotNearZero { score_inf_norm: f64 },
    /// The line search could not improve on rounding noise; the point was
    /// accepted because the score was already small.
    LineSearchStalled { score_inf_norm: f64 },
}

#[derive(Debug, Clone)]
pub struct LemFit<T> {
    pub theta_hat: Theta<T>,
    /// Cluster-robust sandwich covariance of the unconstrained θ.
    pub cov_robust: SymMatrix<T>,
    /// Inverse observed information.
    pub cov_model: Option<SymMatrix<T>>,
    pub optim: OptimResult<T>,
    pub negloglik: T,
    pub score_inf_norm: T,
    pub n_subjects: usize,
    pub n_rows: usize,
    pub parameter_names: Vec<String>,
    pub x_names: Vec<String>,
    pub warnings: Vec<FitWarning>,
}

/// Estimates with a robust covariance, for Wald summaries.
pub trait CoefficientTable<T: Real> {
    fn estimates(&self) -> Vec<T>;
    fn names(&self) -> Vec<String>;
    fn robust_cov(&self) -> &SymMatrix<T>;
}

/// Fits with a natural-history coefficient vector β on the X columns.
pub trait LinearPredictorFit<T: Real> {
    fn beta(&self) -> &[T];
    fn beta_cov(&self) -> Result<SymMatrix<T>>;
}

impl<T: Real> CoefficientTable<T> for LemFit<T> {
    fn estimates(&self) -> Vec<T> {
        self.theta_hat.to_vec()
    }

    fn names(&self) -> Vec<String> {
        self.parameter_names.clone()
    }

    fn robust_cov(&self) -> &SymMatrix<T> {
        &self.cov_robust
    }
}

impl<T: Real> LinearPredictorFit<T> for LemFit<T> {
    fn beta(&self) -> &[T] {
        &self.theta_hat.beta
    }

    fn beta_cov(&self) -> Result<SymMatrix<T>> {
        self.cov_robust.block(self.theta_hat.layout().beta())
    }
}

impl<T: Real> LemFit<T> {
    pub fn layout(&self) -> ThetaLayout {
        self.theta_hat.layout()
    }

    pub fn sigma_y(&self) -> T {
        self.theta_hat.sigma_y()
    }

    pub fn rho(&self) -> T {
        self.theta_hat.rho()
    }
}

fn ols<T: Real>(design: &Matrix<T>, y: &[T]) -> Result<Vec<T>> {
    let p = design.ncols();
    let mut xtx = Matrix::zeros(p, p);
    let mut xty = Matrix::zeros(p, 1);
    for i in 0..design.nrows() {
        let r = design.row(i);
        for a in 0..p {
            xty[(a, 0)] = xty[(a, 0)] + r[a] * y[i];
            for b in 0..=a {
                xtx[(a, b)] = xtx[(a, b)] + r[a] * r[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(b, a)] = xtx[(a, b)];
        }
    }
    let sol = solve_sym(&SymMatrix::new(xtx)?, &xty)?;
    Ok(sol.column(0))
}

/// Outcome design `[X, W∘A]`.
fn outcome_design<T: Real>(d: &LongDataset<T>) -> Matrix<T> {
    let (jx, _, jw) = d.dims();
    let mut m = Matrix::zeros(d.n_rows(), jx + jw);
    for (i, r) in d.rows().iter().enumerate() {
        for j in 0..jx {
            m[(i, j)] = r.x[j];
        }
        let a = r.a();
        for j in 0..jw {
            m[(i, jx + j)] = a * r.w[j];
        }
    }
    m
}

fn probit_loglik<T: Real>(z: &Matrix<T>, treated: &[bool], alpha: &[T]) -> T {
    (0..z.nrows())
        .map(|i| {
            let idx: T = z.row(i).iter().zip(alpha).map(|(&a, &b)| a * b).sum();
            log_std_normal_cdf(if treated[i] { idx } else { -idx })
        })
        .collect::<CompensatedSum<T>>()
        .value()
}

/// Probit maximum likelihood by Fisher scoring with step halving.
fn probit_fit<T: Real>(z: &Matrix<T>, treated: &[bool]) -> Result<Vec<T>> {
    let p = z.ncols();
    let mut alpha = vec![T::zero(); p];
    let mut ll = probit_loglik(z, treated, &alpha);
    for _ in 0..PROBIT_MAX_ITER {
        let mut info = Matrix::zeros(p, p);
        let mut score = Matrix::zeros(p, 1);
        for i in 0..z.nrows() {
            let r = z.row(i);
            let idx: T = r.iter().zip(&alpha).map(|(&a, &b)| a * b).sum();
            let s = if treated[i] { T::one() } else { -T::one() };
            let g = s * inverse_mills(s * idx);
            // φ²/(Φ(1−Φ)) written through both Mills ratios
            let w = inverse_mills(idx) * inverse_mills(-idx);
            for a in 0..p {
                score[(a, 0)] = score[(a, 0)] + g * r[a];
                for b in 0..=a {
                    info[(a, b)] = info[(a, b)] + w * r[a] * r[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        let step = solve_sym(&SymMatrix::new(info)?, &score)?.column(0);
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<T> = alpha.iter().zip(&step).map(|(&a, &s)| a + t * s).collect();
            let cand_ll = probit_loglik(z, treated, &cand);
            if cand_ll.is_finite() && cand_ll >= ll {
                alpha = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t = t / T::lit(2.0);
        }
        let size = step.iter().fold(T::zero(), |m, s| m.max(s.abs())) * t;
        if !accepted || size < T::lit(1e-10).max(T::epsilon().sqrt()) {
            break;
        }
    }
    Ok(alpha)
}

/// Start values: least squares of Y on `[X, W∘A]` for β, η and σ_Y; probit
/// of A on Z for α; ϱ = 0.
pub fn initialize<T: Real>(d: &LongDataset<T>) -> Result<Theta<T>> {
    let (jx, jz, jw) = d.dims();
    let design = outcome_design(d);
    if column_rank(&design) < design.ncols() {
        return Err(Error::SingularDesign("outcome design [X, W*A]".into()));
    }
    let z = d.design(CovariateGroup::Z);
    if column_rank(&z) < jz {
        return Err(Error::SingularDesign("treatment design Z".into()));
    }
    let y = d.outcomes();
    let coef = ols(&design, &y)?;
    let fitted = design.matvec(&coef)?;
    let rss = y
        .iter()
        .zip(&fitted)
        .map(|(&a, &b)| (a - b) * (a - b))
        .collect::<CompensatedSum<T>>()
        .value();
    let dof = if d.n_rows() > coef.len() {
        d.n_rows() - coef.len()
    } else {
        d.n_rows()
    };
    let sd = (rss / T::from_usize_lossy(dof)).sqrt();
    let sd = if sd > T::zero() && sd.is_finite() {
        sd
    } else {
        T::one()
    };
    let treated: Vec<bool> = d.rows().iter().map(|r| r.treated).collect();
    let alpha = probit_fit(&z, &treated)?;
    Ok(Theta {
        beta: coef[..jx].to_vec(),
        eta: coef[jx..jx + jw].to_vec(),
        alpha,
        log_sigma_y: sd.ln(),
        varrho: T::zero(),
        rho_map: RhoMap::Logistic,
    })
}

/// Maximises the pooled likelihood from [`initialize`]'s start values.
pub fn fit_lem<T: Real>(d: &LongDataset<T>, opts: &FitOptions<T>) -> Result<LemFit<T>> {
    let (untreated, treated) = d.arm_counts();
    if untreated == 0 || treated == 0 {
        return Err(Error::OneArmEmpty);
    }
    let mut start = initialize(d)?;
    start.rho_map = opts.rho_map;
    fit_lem_from(d, opts, &start)
}

/// As [`fit_lem`] from a caller-supplied start.
pub fn fit_lem_from<T: Real>(d: &LongDataset<T>, opts: &FitOptions<T>, start: &Theta<T>) -> Result<LemFit<T>> {
    let overlap = check_overlap(d)?;
    let mut warnings = Vec::new();
    if !overlap.overlap {
        if opts.strict_overlap {
            return Err(Error::NoOverlap);
        }
        warnings.push(FitWarning::NoOutcomeOverlap {
            untreated: overlap.untreated,
            treated: overlap.treated,
        });
    }
    let layout = {
        let (jx, jz, jw) = d.dims();
        ThetaLayout::new(jx, jz, jw)
    };
    if start.layout() != layout {
        return Err(Error::DimensionMismatch {
            expected: layout.dim(),
            got: start.dim(),
        });
    }
    let rho_map = start.rho_map;

    // The optimiser sees the mean so that its tolerance and step scaling do
    // not depend on the number of rows.
    let n = T::from_usize_lossy(d.n_rows());
    let eval = |v: &[T]| {
        let Ok(theta) = Theta::from_slice(layout, v, rho_map) else {
            return (T::infinity(), vec![T::nan(); v.len()]);
        };
        match pooled_negloglik_and_score(&theta, d) {
            Ok((f, g)) => (f / n, g.into_iter().map(|x| x / n).collect()),
            Err(_) => (T::infinity(), vec![T::nan(); v.len()]),
        }
    };
    let bfgs = BfgsOptions {
        tol: opts.tol / n,
        max_iter: opts.max_iter,
        ..BfgsOptions::default()
    };
    let mut problem = OptimProblem::new(layout.dim(), eval);
    let optim = minimize_bfgs(&mut problem, &start.to_vec(), &bfgs)?;
    let theta_hat = Theta::from_slice(layout, &optim.argmin, rho_map)?;
    let (negloglik, grad) = pooled_negloglik_and_score(&theta_hat, d)?;
    let score_inf_norm = grad.iter().fold(T::zero(), |m, g| m.max(g.abs()));

    let stall_tol = T::lit(1e-6).max(T::epsilon().sqrt());
    match optim.termination {
        Termination::Converged => {}
        Termination::LineSearchFailure if score_inf_norm <= stall_tol * (T::one() + negloglik.abs()) => {
            warnings.push(FitWarning::LineSearchStalled {
                score_inf_norm: score_inf_norm.to_f64_lossy(),
            });
        }
        other => {
            return Err(Error::NoConvergence(format!(
                "{other:?} after {} iterations ({} evaluations); |score|_inf = {:e}, negloglik = {:e}",
                optim.iterations,
                optim.evaluations,
                score_inf_norm.to_f64_lossy(),
                negloglik.to_f64_lossy()
            )));
        }
    }

    if score_inf_norm > T::lit(1e-4) {
        warnings.push(FitWarning::ScoreNotNearZero {
            score_inf_norm: score_inf_norm.to_f64_lossy(),
        });
    }
    if d.n_subjects() == 1 {
        warnings.push(FitWarning::SingleCluster);
    }
    if d.cluster_sizes().iter().any(|&s| s > 1) {
        warnings.push(FitWarning::LongitudinalFisher);
    }

    let bread = score_jacobian(&theta_hat, d)?;
    let bread_inv = bread.inverse()?;
    let cov_robust = sandwich_from_parts(&bread_inv, &meat(&theta_hat, d)?)?;
    let cov_model = Some(bread_inv.scale(-T::one()));

    Ok(LemFit {
        parameter_names: layout.parameter_names(d.names()),
        x_names: d.names().x.clone(),
        theta_hat,
        cov_robust,
        cov_model,
        optim,
        negloglik,
        score_inf_norm,
        n_subjects: d.n_subjects(),
        n_rows: d.n_rows(),
        warnings,
    })
}

/// `∂U/∂θ` for the pooled log-likelihood score `U`, by central differences
/// of the analytic score with step `1e-5·max(1, |θ_k|)`, symmetrised.
pub fn score_jacobian<T: Real>(theta: &Theta<T>, d: &LongDataset<T>) -> Result<SymMatrix<T>> {
    let p = theta.dim();
    let base = theta.to_vec();
    let layout = theta.layout();
    let mut jac = Matrix::zeros(p, p);
    for k in 0..p {
        let h = T::lit(1e-5) * base[k].abs().max(T::one());
        let mut up = base.clone();
        let mut dn = base.clone();
        up[k] = up[k] + h;
        dn[k] = dn[k] - h;
        let (_, gu) = pooled_negloglik_and_score(&Theta::from_slice(layout, &up, theta.rho_map)?, d)?;
        let (_, gd) = pooled_negloglik_and_score(&Theta::from_slice(layout, &dn, theta.rho_map)?, d)?;
        // gradients are of the negative log-likelihood
        let width = (up[k] - dn[k]).recip();
        for i in 0..p {
            jac[(i, k)] = (gd[i] - gu[i]) * width;
        }
    }
    SymMatrix::symmetrize(&jac)
}

/// `Σᵢ Uᵢ Uᵢᵀ` over subjects.
pub fn meat<T: Real>(theta: &Theta<T>, d: &LongDataset<T>) -> Result<SymMatrix<T>> {
    let scores = subject_scores(theta, d)?;
    let p = theta.dim();
    let mut acc = vec![CompensatedSum::new(); p * p];
    for u in &scores {
        for i in 0..p {
            for j in 0..=i {
                acc[i * p + j].add(u[i] * u[j]);
            }
        }
    }
    SymMatrix::from_fn(p, |i, j| {
        let (a, b) = if j <= i { (i, j) } else { (j, i) };
        acc[a * p + b].value()
    })
}

fn sandwich_from_parts<T: Real>(bread_inv: &SymMatrix<T>, meat: &SymMatrix<T>) -> Result<SymMatrix<T>> {
    let b = bread_inv.as_matrix();
    let v = b.matmul(meat.as_matrix())?.matmul(b)?;
    SymMatrix::symmetrize(&v)
}

/// Cluster-robust covariance `B⁻¹ M B⁻ᵀ` with subjects as clusters.
pub fn sandwich_cov<T: Real>(theta: &Theta<T>, d: &LongDataset<T>) -> Result<SymMatrix<T>> {
    let bread_inv = score_jacobian(theta, d)?.inverse()?;
    sandwich_from_parts(&bread_inv, &meat(theta, d)?)
}

/// Inverse observed information `(−∂U/∂θ)⁻¹`.
pub fn fisher_cov<T: Real>(theta: &Theta<T>, d: &LongDataset<T>) -> Result<SymMatrix<T>> {
    score_jacobian(theta, d)?.scale(-T::one()).inverse()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Wald<T> {
    pub estimate: T,
    pub se: T,
    pub ci: (T, T),
    pub p_value: T,
}

/// Normal-theory interval and two-sided test of coefficient `index` against
/// zero, using the robust covariance.
pub fn wald<T: Real, F: CoefficientTable<T> + ?Sized>(fit: &F, index: usize, level: T) -> Result<Wald<T>> {
    if !(level > T::zero() && level < T::one()) {
        return Err(Error::InvalidConfig(format!(
            "confidence level must be in (0, 1), got {}",
            level.to_f64_lossy()
        )));
    }
    let est = fit.estimates();
    if index >= est.len() {
        return Err(Error::IndexOutOfRange {
            index,
            len: est.len(),
        });
    }
    let estimate = est[index];
    let se = fit.robust_cov()[(index, index)].max(T::zero()).sqrt();
    Ok(wald_from(estimate, se, level))
}

fn wald_from<T: Real>(estimate: T, se: T, level: T) -> Wald<T> {
    let q = std_normal_quantile(T::one() - (T::one() - level) / T::lit(2.0));
    let z = if estimate == T::zero() { T::zero() } else { estimate / se };
    Wald {
        estimate,
        se,
        ci: (estimate - q * se, estimate + q * se),
        p_value: T::lit(2.0) * std_normal_cdf(-z.abs()),
    }
}

/// `xᵀβ̂` with standard error `√(xᵀ V_ββ x)`.
pub fn predict_mean<T: Real, F: LinearPredictorFit<T> + ?Sized>(fit: &F, xrow: &[T]) -> Result<(T, T)> {
    let beta = fit.beta();
    if xrow.len() != beta.len() {
        return Err(Error::DimensionMismatch {
            expected: beta.len(),
            got: xrow.len(),
        });
    }
    let est = xrow.iter().zip(beta).map(|(&a, &b)| a * b).collect::<CompensatedSum<T>>().value();
    let var = fit.beta_cov()?.quadratic_form(xrow)?;
    Ok((est, var.max(T::zero()).sqrt()))
}

/// Pointwise normal-theory band for `xᵀβ̂` along a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionBand<T> {
    pub grid: Vec<T>,
    pub estimate: Vec<T>,
    pub se: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

/// `rows[i]` is the X row at `grid[i]`.
pub fn prediction_band<T: Real, F: LinearPredictorFit<T> + ?Sized>(
    fit: &F,
    grid: &[T],
    rows: &[Vec<T>],
    level: T,
) -> Result<PredictionBand<T>> {
    if grid.len() != rows.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: rows.len(),
        });
    }
    let mut band = PredictionBand {
        grid: grid.to_vec(),
        estimate: Vec::with_capacity(grid.len()),
        se: Vec::with_capacity(grid.len()),
        lower: Vec::with_capacity(grid.len()),
        upper: Vec::with_capacity(grid.len()),
    };
    for r in rows {
        let (est, se) = predict_mean(fit, r)?;
        let w = wald_from(est, se, level);
        band.estimate.push(est);
        band.se.push(se);
        band.lower.push(w.ci.0);
        band.upper.push(w.ci.1);
    }
    Ok(band)
}
