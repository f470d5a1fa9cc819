//! Special functions and small dense linear algebra.
//!
//! Everything here is pure and reentrant; matrices never exceed the
//! parameter dimension of a fit, so plain O(n³) routines are used.

mod linalg;
mod special;

pub use linalg::{cholesky, column_rank, solve_sym, Matrix, SymMatrix};
pub use special::{
    inverse_mills, log_std_normal_cdf, log_std_normal_pdf, std_normal_cdf, std_normal_pdf,
    std_normal_quantile, LOG_CDF_TAIL_CROSSOVER,
};
