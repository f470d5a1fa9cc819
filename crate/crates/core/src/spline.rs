//! Natural cubic spline basis in truncated-power form.
//!
//! For knots `ξ_1 < … < ξ_K` the basis has `K − 1` columns: `x` itself and
//! `K − 2` curvature terms `d_k(x) − d_{K−1}(x)` with
//! `d_k(x) = [(x − ξ_k)₊³ − (x − ξ_K)₊³] / (ξ_K − ξ_k)`. The cubic and
//! quadratic parts cancel beyond `ξ_K`, so each column is linear outside
//! the boundary knots. No intercept column is produced.

use crate::error::{Error, Result};
use crate::scalar::Real;

fn pos_cube<T: Real>(v: T) -> T {
    if v > T::zero() {
        v * v * v
    } else {
        T::zero()
    }
}

fn check_knots<T: Real>(knots: &[T]) -> Result<()> {
    if knots.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "natural spline needs at least 3 knots, got {}",
            knots.len()
        )));
    }
    if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::UnsortedKnots);
    }
    Ok(())
}

/// Basis row of length `K − 1` at `x`.
pub fn ncs_basis<T: Real>(x: T, knots: &[T]) -> Result<Vec<T>> {
    check_knots(knots)?;
    Ok(basis_unchecked(x, knots))
}

fn basis_unchecked<T: Real>(x: T, knots: &[T]) -> Vec<T> {
    let k = knots.len();
    let last = knots[k - 1];
    let d = |j: usize| (pos_cube(x - knots[j]) - pos_cube(x - last)) / (last - knots[j]);
    let d_pen = d(k - 2);
    let mut out = Vec::with_capacity(k - 1);
    out.push(x);
    for j in 0..k - 2 {
        out.push(d(j) - d_pen);
    }
    out
}

/// Basis rows for every value in `xs`.
pub fn ncs_basis_matrix<T: Real>(xs: &[T], knots: &[T]) -> Result<Vec<Vec<T>>> {
    check_knots(knots)?;
    Ok(xs.iter().map(|&x| basis_unchecked(x, knots)).collect())
}

/// Column names `{prefix}_ns1 … {prefix}_ns{K−1}`.
pub fn ncs_column_names(prefix: &str, n_knots: usize) -> Vec<String> {
    (1..n_knots).map(|j| format!("{prefix}_ns{j}")).collect()
}
