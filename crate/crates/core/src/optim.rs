//! Unconstrained BFGS minimisation with a strong-Wolfe line search.
//!
//! The inverse-Hessian approximation starts at the identity, is rescaled by
//! `sᵀy / yᵀy` after the first accepted step, and is only updated when the
//! curvature pair satisfies `yᵀs > 1e-10·‖y‖‖s‖`, which keeps it positive
//! definite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Real;

/// Objective with its gradient, evaluated together.
pub struct OptimProblem<F> {
    dim: usize,
    eval: F,
}

impl<F> OptimProblem<F> {
    /// `eval(x)` returns `(f(x), ∇f(x))`; the gradient must have length `dim`.
    pub fn new(dim: usize, eval: F) -> Self {
        Self { dim, eval }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions<T> {
    /// Stop once `‖∇f‖_∞ ≤ tol`.
    pub tol: T,
    pub max_iter: usize,
    /// Sufficient-decrease constant.
    pub c1: T,
    /// Curvature constant.
    pub c2: T,
    /// Function evaluations allowed in one line search.
    pub max_line_search_evals: usize,
}

impl<T: Real> Default for BfgsOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::DEFAULT_GRAD_TOL,
            max_iter: 500,
            c1: T::lit(1e-4),
            c2: T::lit(0.9),
            max_line_search_evals: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterExceeded,
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct OptimResult<T> {
    pub argmin: Vec<T>,
    pub objective_value: T,
    pub gradient: Vec<T>,
    pub gradient_inf_norm: T,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub termination: Termination,
}

/// How a line-search step was accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acceptance {
    StrongWolfe,
    /// Function decrease below rounding noise; accepted on the derivative
    /// conditions alone (Hager–Zhang approximate Wolfe).
    ApproximateWolfe,
}

/// One accepted iteration, handed to the observer of
/// [`minimize_bfgs_observed`].
#[derive(Debug, Clone)]
pub struct StepRecord<T> {
    pub iteration: usize,
    pub f_before: T,
    pub f_after: T,
    pub step_length: T,
    /// `∇f(x)ᵀd` at the start of the step.
    pub directional_derivative: T,
    pub gradient_inf_norm: T,
    pub acceptance: Acceptance,
}

pub fn minimize_bfgs<T, F>(
    problem: &mut OptimProblem<F>,
    start: &[T],
    opts: &BfgsOptions<T>,
) -> Result<OptimResult<T>>
where
    T: Real,
    F: FnMut(&[T]) -> (T, Vec<T>),
{
    minimize_bfgs_observed(problem, start, opts, |_| {})
}

/// As [`minimize_bfgs`], calling `observer` after every accepted step.
///
/// Running out of iterations or failing a line search is not an error: the
/// best point found is returned with `converged = false` and the reason in
/// `termination`.
pub fn minimize_bfgs_observed<T, F, O>(
    problem: &mut OptimProblem<F>,
    start: &[T],
    opts: &BfgsOptions<T>,
    mut observer: O,
) -> Result<OptimResult<T>>
where
    T: Real,
    F: FnMut(&[T]) -> (T, Vec<T>),
    O: FnMut(&StepRecord<T>),
{
    let n = problem.dim;
    if start.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: start.len(),
        });
    }
    if !(opts.tol > T::zero()) {
        return Err(Error::InvalidConfig("gradient tolerance must be positive".into()));
    }

    let mut x = start.to_vec();
    let (mut f, mut g) = (problem.eval)(&x);
    let mut evaluations = 1;
    if g.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: g.len(),
        });
    }
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLikelihood);
    }

    let finish = |x: Vec<T>, f: T, g: Vec<T>, iterations, evaluations, termination| {
        let gradient_inf_norm = inf_norm(&g);
        OptimResult {
            argmin: x,
            objective_value: f,
            gradient: g,
            gradient_inf_norm,
            iterations,
            evaluations,
            converged: termination == Termination::Converged,
            termination,
        }
    };

    if inf_norm(&g) <= opts.tol {
        return Ok(finish(x, f, g, 0, evaluations, Termination::Converged));
    }

    let mut h = Matrix::<T>::identity(n);
    let mut fresh = true;
    for iter in 1..=opts.max_iter {
        let mut d = neg_matvec(&h, &g);
        let mut slope = dot(&g, &d);
        if !(slope < T::zero()) {
            h = Matrix::identity(n);
            fresh = true;
            d = g.iter().map(|&v| -v).collect();
            slope = -dot(&g, &g);
        }
        let alpha0 = if fresh {
            T::one().min(dot(&g, &g).sqrt().recip())
        } else {
            T::one()
        };

        let search = LineSearch {
            x: &x,
            d: &d,
            f0: f,
            slope0: slope,
            opts,
        };
        let outcome = search.run(&mut problem.eval, alpha0);
        evaluations += outcome.evaluations;

        let Some((probe, acceptance)) = outcome.accepted else {
            if fresh {
                return Ok(finish(x, f, g, iter - 1, evaluations, Termination::LineSearchFailure));
            }
            // Retry from a steepest-descent model before giving up.
            h = Matrix::identity(n);
            fresh = true;
            continue;
        };

        let s: Vec<T> = probe.x.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = probe.g.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        observer(&StepRecord {
            iteration: iter,
            f_before: f,
            f_after: probe.f,
            step_length: probe.alpha,
            directional_derivative: slope,
            gradient_inf_norm: inf_norm(&probe.g),
            acceptance,
        });
        x = probe.x;
        f = probe.f;
        g = probe.g;

        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if fresh && sy > T::zero() && yy > T::zero() {
            h = Matrix::identity(n).scale(sy / yy);
        }
        fresh = false;
        if sy > T::lit(1e-10) * yy.sqrt() * dot(&s, &s).sqrt() {
            bfgs_update(&mut h, &s, &y, sy);
        }

        if inf_norm(&g) <= opts.tol {
            return Ok(finish(x, f, g, iter, evaluations, Termination::Converged));
        }
    }
    Ok(finish(x, f, g, opts.max_iter, evaluations, Termination::MaxIterExceeded))
}

/// `H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ` with `ρ = 1/sᵀy`.
fn bfgs_update<T: Real>(h: &mut Matrix<T>, s: &[T], y: &[T], sy: T) {
    let n = s.len();
    let hy: Vec<T> = (0..n).map(|i| dot(h.row(i), y)).collect();
    let yhy = dot(y, &hy);
    let a = (sy + yhy) / (sy * sy);
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] = h[(i, j)] + a * s[i] * s[j] - (hy[i] * s[j] + s[i] * hy[j]) / sy;
        }
    }
}

struct Probe<T> {
    alpha: T,
    x: Vec<T>,
    f: T,
    g: Vec<T>,
    slope: T,
}

impl<T: Real> Probe<T> {
    fn is_finite(&self) -> bool {
        self.f.is_finite() && self.slope.is_finite()
    }
}

struct LineSearch<'a, T> {
    x: &'a [T],
    d: &'a [T],
    f0: T,
    slope0: T,
    opts: &'a BfgsOptions<T>,
}

struct LineSearchOutcome<T> {
    accepted: Option<(Probe<T>, Acceptance)>,
    evaluations: usize,
}

impl<'a, T: Real> LineSearch<'a, T> {
    fn probe<F: FnMut(&[T]) -> (T, Vec<T>)>(&self, eval: &mut F, alpha: T) -> Probe<T> {
        let x: Vec<T> = self
            .x
            .iter()
            .zip(self.d)
            .map(|(&xi, &di)| xi + alpha * di)
            .collect();
        let (f, g) = eval(&x);
        let slope = dot(&g, self.d);
        Probe {
            alpha,
            x,
            f: if f.is_nan() { T::infinity() } else { f },
            g,
            slope,
        }
    }

    fn armijo_fails(&self, p: &Probe<T>) -> bool {
        !p.is_finite() || p.f > self.f0 + self.opts.c1 * p.alpha * self.slope0
    }

    fn strong_curvature(&self, p: &Probe<T>) -> bool {
        p.slope.abs() <= -self.opts.c2 * self.slope0
    }

    /// Decrease lost in rounding, but the derivative has flattened enough.
    fn approximate_wolfe(&self, p: &Probe<T>) -> bool {
        let noise = T::lit(100.0) * T::epsilon() * (T::one() + self.f0.abs());
        p.is_finite()
            && p.f <= self.f0 + noise
            && p.slope >= self.opts.c2 * self.slope0
            && p.slope <= (T::lit(2.0) * self.opts.c1 - T::one()) * self.slope0
    }

    fn run<F: FnMut(&[T]) -> (T, Vec<T>)>(&self, eval: &mut F, alpha0: T) -> LineSearchOutcome<T> {
        let budget = self.opts.max_line_search_evals;
        let mut evaluations = 0;
        let mut prev = Probe {
            alpha: T::zero(),
            x: self.x.to_vec(),
            f: self.f0,
            g: Vec::new(),
            slope: self.slope0,
        };
        let mut alpha = alpha0;
        while evaluations < budget {
            let p = self.probe(eval, alpha);
            evaluations += 1;
            if self.armijo_fails(&p) || (prev.alpha > T::zero() && p.f >= prev.f) {
                if self.approximate_wolfe(&p) {
                    return LineSearchOutcome {
                        accepted: Some((p, Acceptance::ApproximateWolfe)),
                        evaluations,
                    };
                }
                return self.zoom(eval, prev, p, evaluations);
            }
            if self.strong_curvature(&p) {
                return LineSearchOutcome {
                    accepted: Some((p, Acceptance::StrongWolfe)),
                    evaluations,
                };
            }
            if p.slope >= T::zero() {
                return self.zoom(eval, p, prev, evaluations);
            }
            alpha = p.alpha * T::lit(2.0);
            prev = p;
        }
        LineSearchOutcome {
            accepted: None,
            evaluations,
        }
    }

    /// Shrinks the bracket `[lo, hi]` (possibly `lo.alpha > hi.alpha`);
    /// `lo` always satisfies sufficient decrease.
    fn zoom<F: FnMut(&[T]) -> (T, Vec<T>)>(
        &self,
        eval: &mut F,
        mut lo: Probe<T>,
        mut hi: Probe<T>,
        mut evaluations: usize,
    ) -> LineSearchOutcome<T> {
        let budget = self.opts.max_line_search_evals;
        while evaluations < budget {
            let width = (hi.alpha - lo.alpha).abs();
            if width <= T::epsilon() * lo.alpha.abs().max(hi.alpha.abs()) {
                break;
            }
            let alpha = interpolate(&lo, &hi);
            let p = self.probe(eval, alpha);
            evaluations += 1;
            if self.armijo_fails(&p) || p.f >= lo.f {
                if self.approximate_wolfe(&p) {
                    return LineSearchOutcome {
                        accepted: Some((p, Acceptance::ApproximateWolfe)),
                        evaluations,
                    };
                }
                hi = p;
            } else {
                if self.strong_curvature(&p) {
                    return LineSearchOutcome {
                        accepted: Some((p, Acceptance::StrongWolfe)),
                        evaluations,
                    };
                }
                if p.slope * (hi.alpha - lo.alpha) >= T::zero() {
                    hi = lo;
                }
                lo = p;
            }
        }
        LineSearchOutcome {
            accepted: None,
            evaluations,
        }
    }
}

/// Safeguarded cubic interpolation inside the bracket, bisection otherwise.
fn interpolate<T: Real>(lo: &Probe<T>, hi: &Probe<T>) -> T {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = (a + b) / T::lit(2.0);
    if !hi.is_finite() {
        return mid;
    }
    let d1 = lo.slope + hi.slope - T::lit(3.0) * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < T::zero() {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + T::lit(2.0) * d2);
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = (right - left) * T::lit(0.1);
    if t.is_finite() && t > left + margin && t < right - margin {
        t
    } else {
        mid
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
fn inf_norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

fn neg_matvec<T: Real>(h: &Matrix<T>, g: &[T]) -> Vec<T> {
    (0..h.nrows()).map(|i| -dot(h.row(i), g)).collect()
}
