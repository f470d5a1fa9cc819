//! Linear working-independence GEE with a Liang–Zeger cluster-robust
//! covariance: the usual comparator that treats treatment as exogenous.

use serde::{Deserialize, Serialize};

use crate::data::{LongDataset, ObsRow};
use crate::error::{Error, Result};
use crate::inference::{CoefficientTable, LinearPredictorFit};
use crate::numerics::{column_rank, Matrix, SymMatrix};
use crate::scalar::{CompensatedSum, Real};

pub const TREATMENT_COLUMN: &str = "treatment";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeeVariant {
    /// Regress Y on `[X, A]` over all rows.
    TreatmentAdjusted,
    /// Regress Y on X over untreated rows only.
    TreatmentExcluded,
}

#[derive(Debug, Clone)]
pub struct GeeFit<T> {
    pub coef: Vec<T>,
    pub names: Vec<String>,
    pub cov_robust: SymMatrix<T>,
    pub n_subjects: usize,
    pub n_rows: usize,
    pub variant: GeeVariant,
    /// Number of X columns; `coef[..jx]` is β.
    pub jx: usize,
}

impl<T: Real> CoefficientTable<T> for GeeFit<T> {
    fn estimates(&self) -> Vec<T> {
        self.coef.clone()
    }

    fn names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn robust_cov(&self) -> &SymMatrix<T> {
        &self.cov_robust
    }
}

impl<T: Real> LinearPredictorFit<T> for GeeFit<T> {
    fn beta(&self) -> &[T] {
        &self.coef[..self.jx]
    }

    fn beta_cov(&self) -> Result<SymMatrix<T>> {
        self.cov_robust.block(0..self.jx)
    }
}

fn regressors<T: Real>(row: &ObsRow<T>, variant: GeeVariant) -> Vec<T> {
    let mut v = row.x.clone();
    if variant == GeeVariant::TreatmentAdjusted {
        v.push(row.a());
    }
    v
}

pub fn fit_gee_independence<T: Real>(d: &LongDataset<T>, variant: GeeVariant) -> Result<GeeFit<T>> {
    let kept = match variant {
        GeeVariant::TreatmentAdjusted => d.clone(),
        GeeVariant::TreatmentExcluded => match d.filter_rows(|r| !r.treated) {
            Ok(k) if k.n_rows() > 0 => k,
            _ => return Err(Error::AllRowsExcluded),
        },
    };
    let (jx, _, _) = kept.dims();
    let p = jx + usize::from(variant == GeeVariant::TreatmentAdjusted);

    let design = Matrix::from_fn(kept.n_rows(), p, |i, j| regressors(&kept.rows()[i], variant)[j]);
    if column_rank(&design) < p {
        return Err(Error::SingularDesign(format!("{variant:?} regressors")));
    }

    let mut xtx = vec![CompensatedSum::new(); p * p];
    let mut xty = vec![CompensatedSum::new(); p];
    for (i, r) in kept.rows().iter().enumerate() {
        let x = design.row(i);
        for a in 0..p {
            xty[a].add(x[a] * r.y);
            for b in 0..p {
                xtx[a * p + b].add(x[a] * x[b]);
            }
        }
    }
    let bread = SymMatrix::symmetrize(&Matrix::from_fn(p, p, |a, b| xtx[a * p + b].value()))?;
    let bread_inv = bread.inverse()?;
    let rhs: Vec<T> = xty.iter().map(|s| s.value()).collect();
    let coef = bread_inv.as_matrix().matvec(&rhs)?;

    let mut meat = vec![CompensatedSum::new(); p * p];
    let mut offset = 0;
    for cluster in kept.clusters() {
        let mut u = vec![T::zero(); p];
        for (k, r) in cluster.iter().enumerate() {
            let x = design.row(offset + k);
            let resid = r.y - x.iter().zip(&coef).map(|(&a, &b)| a * b).sum::<T>();
            for a in 0..p {
                u[a] = u[a] + x[a] * resid;
            }
        }
        offset += cluster.len();
        for a in 0..p {
            for b in 0..p {
                meat[a * p + b].add(u[a] * u[b]);
            }
        }
    }
    let meat = Matrix::from_fn(p, p, |a, b| meat[a * p + b].value());
    let b = bread_inv.as_matrix();
    let cov_robust = SymMatrix::symmetrize(&b.matmul(&meat)?.matmul(b)?)?;

    let mut names = kept.names().x.clone();
    if variant == GeeVariant::TreatmentAdjusted {
        names.push(TREATMENT_COLUMN.into());
    }
    Ok(GeeFit {
        coef,
        names,
        cov_robust,
        n_subjects: kept.n_subjects(),
        n_rows: kept.n_rows(),
        variant,
        jx,
    })
}
