//! Long-format panel data: one row per (subject, visit), ragged clusters.
//!
//! A missing visit is simply an absent row. Covariate groups X (outcome
//! model), Z (treatment model) and W (effect modifiers) may share columns;
//! each carries a leading intercept column of ones.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{column_rank, Matrix};
use crate::scalar::Real;

/// Name used for the intercept column of every covariate group.
pub const INTERCEPT: &str = "(Intercept)";

/// One observation of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsRow<T> {
    /// Index into the dataset's subject list.
    pub subject: usize,
    pub time: u32,
    pub y: T,
    pub treated: bool,
    pub x: Vec<T>,
    pub z: Vec<T>,
    pub w: Vec<T>,
}

impl<T: Real> ObsRow<T> {
    /// Treatment as a 0/1 scalar.
    #[inline]
    pub fn a(&self) -> T {
        if self.treated {
            T::one()
        } else {
            T::zero()
        }
    }
}

/// An observation before grouping: subject identified by its label.
#[derive(Debug, Clone, PartialEq)]
pub struct RawObs<T> {
    pub subject: String,
    pub time: u32,
    pub y: T,
    pub treated: bool,
    pub x: Vec<T>,
    pub z: Vec<T>,
    pub w: Vec<T>,
}

/// Column names of the three covariate groups, intercept included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateNames {
    pub x: Vec<String>,
    pub z: Vec<String>,
    pub w: Vec<String>,
}

impl CovariateNames {
    /// Prepends the intercept to each list of user column names.
    pub fn with_intercepts(x: &[String], z: &[String], w: &[String]) -> Self {
        let add = |cols: &[String]| {
            std::iter::once(INTERCEPT.to_string())
                .chain(cols.iter().cloned())
                .collect()
        };
        Self {
            x: add(x),
            z: add(z),
            w: add(w),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateGroup {
    X,
    Z,
    W,
}

/// Which CSV columns hold what.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub subject: String,
    pub time: String,
    pub outcome: String,
    pub treatment: String,
    #[serde(default)]
    pub x: Vec<String>,
    #[serde(default)]
    pub z: Vec<String>,
    #[serde(default)]
    pub w: Vec<String>,
}

impl DesignSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Immutable validated panel dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LongDataset<T> {
    subject_ids: Vec<String>,
    rows: Vec<ObsRow<T>>,
    clusters: Vec<Range<usize>>,
    names: CovariateNames,
}

impl<T: Real> LongDataset<T> {
    /// Groups observations by subject (in order of first appearance) and
    /// sorts each subject's rows by time.
    pub fn from_observations(names: CovariateNames, obs: Vec<RawObs<T>>) -> Result<Self> {
        let dims = (names.x.len(), names.z.len(), names.w.len());
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(Error::InvalidData("every covariate group needs an intercept".into()));
        }
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut subject_ids = Vec::new();
        let mut grouped: Vec<Vec<ObsRow<T>>> = Vec::new();

        for (k, o) in obs.into_iter().enumerate() {
            let lens = (o.x.len(), o.z.len(), o.w.len());
            if lens != dims {
                return Err(Error::InvalidData(format!(
                    "observation {k}: covariate lengths {lens:?}, expected {dims:?}"
                )));
            }
            if !o.y.is_finite() || [&o.x, &o.z, &o.w].iter().any(|v| v.iter().any(|c| !c.is_finite())) {
                return Err(Error::InvalidData(format!("observation {k}: non-finite value")));
            }
            if o.x[0] != T::one() || o.z[0] != T::one() || o.w[0] != T::one() {
                return Err(Error::InvalidData(format!(
                    "observation {k}: leading covariate entries must be 1"
                )));
            }
            let s = *index.entry(o.subject.clone()).or_insert_with(|| {
                subject_ids.push(o.subject.clone());
                grouped.push(Vec::new());
                subject_ids.len() - 1
            });
            grouped[s].push(ObsRow {
                subject: s,
                time: o.time,
                y: o.y,
                treated: o.treated,
                x: o.x,
                z: o.z,
                w: o.w,
            });
        }
        if subject_ids.is_empty() {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }

        let mut rows = Vec::new();
        let mut clusters = Vec::with_capacity(grouped.len());
        for (s, mut g) in grouped.into_iter().enumerate() {
            g.sort_by_key(|r| r.time);
            if let Some(w) = g.windows(2).find(|w| w[0].time == w[1].time) {
                return Err(Error::DuplicateObservation {
                    subject: subject_ids[s].clone(),
                    time: w[0].time,
                });
            }
            let start = rows.len();
            rows.extend(g);
            clusters.push(start..rows.len());
        }
        Ok(Self {
            subject_ids,
            rows,
            clusters,
            names,
        })
    }

    pub fn rows(&self) -> &[ObsRow<T>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn names(&self) -> &CovariateNames {
        &self.names
    }

    /// `(J_X, J_Z, J_W)`, intercepts included.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.names.x.len(), self.names.z.len(), self.names.w.len())
    }

    /// Rows of each subject, in subject order.
    pub fn clusters(&self) -> impl Iterator<Item = &[ObsRow<T>]> + '_ {
        self.clusters.iter().map(move |r| &self.rows[r.clone()])
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|r| r.len()).collect()
    }

    /// `(untreated, treated)` row counts.
    pub fn arm_counts(&self) -> (usize, usize) {
        let treated = self.rows.iter().filter(|r| r.treated).count();
        (self.rows.len() - treated, treated)
    }

    pub fn to_observations(&self) -> Vec<RawObs<T>> {
        self.rows
            .iter()
            .map(|r| RawObs {
                subject: self.subject_ids[r.subject].clone(),
                time: r.time,
                y: r.y,
                treated: r.treated,
                x: r.x.clone(),
                z: r.z.clone(),
                w: r.w.clone(),
            })
            .collect()
    }

    /// Keeps rows satisfying `keep`; subjects left without rows disappear.
    pub fn filter_rows(&self, mut keep: impl FnMut(&ObsRow<T>) -> bool) -> Result<Self> {
        let obs = self
            .rows
            .iter()
            .zip(self.to_observations())
            .filter(|(r, _)| keep(r))
            .map(|(_, o)| o)
            .collect();
        Self::from_observations(self.names.clone(), obs)
    }

    /// Stacked design matrix of one covariate group.
    pub fn design(&self, group: CovariateGroup) -> Matrix<T> {
        let cols = match group {
            CovariateGroup::X => self.names.x.len(),
            CovariateGroup::Z => self.names.z.len(),
            CovariateGroup::W => self.names.w.len(),
        };
        Matrix::from_fn(self.rows.len(), cols, |i, j| {
            let r = &self.rows[i];
            match group {
                CovariateGroup::X => r.x[j],
                CovariateGroup::Z => r.z[j],
                CovariateGroup::W => r.w[j],
            }
        })
    }

    pub fn outcomes(&self) -> Vec<T> {
        self.rows.iter().map(|r| r.y).collect()
    }

    /// Converts to another scalar precision.
    pub fn cast<U: Real>(&self) -> LongDataset<U> {
        let conv = |v: &[T]| v.iter().map(|&c| U::lit(c.to_f64_lossy())).collect();
        LongDataset {
            subject_ids: self.subject_ids.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| ObsRow {
                    subject: r.subject,
                    time: r.time,
                    y: U::lit(r.y.to_f64_lossy()),
                    treated: r.treated,
                    x: conv(&r.x),
                    z: conv(&r.z),
                    w: conv(&r.w),
                })
                .collect(),
            clusters: self.clusters.clone(),
            names: self.names.clone(),
        }
    }
}

/// Reads a long-format CSV file.
pub fn load_csv(path: impl AsRef<Path>, spec: &DesignSpec) -> Result<LongDataset<f64>> {
    let file = std::fs::File::open(path)?;
    read_csv(file, spec)
}

/// Reads long-format CSV from any reader; header row required.
pub fn read_csv<R: Read>(reader: R, spec: &DesignSpec) -> Result<LongDataset<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let subject_c = col(&spec.subject)?;
    let time_c = col(&spec.time)?;
    let y_c = col(&spec.outcome)?;
    let a_c = col(&spec.treatment)?;
    let cols_of = |names: &[String]| names.iter().map(|n| col(n)).collect::<Result<Vec<_>>>();
    let (x_c, z_c, w_c) = (cols_of(&spec.x)?, cols_of(&spec.z)?, cols_of(&spec.w)?);

    let mut obs = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let number = |c: usize| -> Result<f64> {
            let s = cell(c);
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    column: header[c].to_string(),
                    message: format!("`{s}` is not a finite number"),
                }),
            }
        };
        let time = cell(time_c).parse::<u32>().map_err(|_| Error::Parse {
            row,
            column: header[time_c].to_string(),
            message: format!("`{}` is not a nonnegative integer", cell(time_c)),
        })?;
        let a = number(a_c)?;
        let treated = if a == 0.0 {
            false
        } else if a == 1.0 {
            true
        } else {
            return Err(Error::NonBinaryTreatment { row, value: a });
        };
        let group = |cols: &[usize]| -> Result<Vec<f64>> {
            std::iter::once(Ok(1.0))
                .chain(cols.iter().map(|&c| number(c)))
                .collect()
        };
        obs.push(RawObs {
            subject: cell(subject_c).to_string(),
            time,
            y: number(y_c)?,
            treated,
            x: group(&x_c)?,
            z: group(&z_c)?,
            w: group(&w_c)?,
        });
    }
    let names = CovariateNames::with_intercepts(&spec.x, &spec.z, &spec.w);
    LongDataset::from_observations(names, obs)
}

/// Writes a dataset back to long-format CSV, one column per distinct
/// covariate name (intercepts omitted). Returns the matching spec.
pub fn write_csv<W: Write, T: Real>(
    d: &LongDataset<T>,
    writer: W,
    columns: &DesignSpec,
) -> Result<DesignSpec> {
    let names = d.names();
    let strip = |v: &[String]| v[1..].to_vec();
    let mut distinct: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for n in strip(&names.x).into_iter().chain(strip(&names.z)).chain(strip(&names.w)) {
        if seen.insert(n.clone()) {
            distinct.push(n);
        }
    }

    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![
        columns.subject.clone(),
        columns.time.clone(),
        columns.outcome.clone(),
        columns.treatment.clone(),
    ];
    header.extend(distinct.iter().cloned());
    wtr.write_record(&header)?;

    for r in d.rows() {
        let mut values: BTreeMap<&str, T> = BTreeMap::new();
        for (group, vals) in [(&names.x, &r.x), (&names.z, &r.z), (&names.w, &r.w)] {
            for (n, &v) in group.iter().zip(vals.iter()).skip(1) {
                if let Some(&prev) = values.get(n.as_str()) {
                    if prev != v {
                        return Err(Error::InvalidData(format!(
                            "column `{n}` differs between covariate groups"
                        )));
                    }
                }
                values.insert(n.as_str(), v);
            }
        }
        let mut rec = vec![
            d.subject_ids()[r.subject].clone(),
            r.time.to_string(),
            format_real(r.y),
            if r.treated { "1".into() } else { "0".into() },
        ];
        rec.extend(distinct.iter().map(|n| format_real(values[n.as_str()])));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(DesignSpec {
        x: strip(&names.x),
        z: strip(&names.z),
        w: strip(&names.w),
        ..columns.clone()
    })
}

/// Shortest representation that parses back to the same `f64`.
fn format_real<T: Real>(v: T) -> String {
    format!("{}", v.to_f64_lossy())
}

/// Outcome ranges of the two treatment arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapReport {
    pub untreated: (f64, f64),
    pub treated: (f64, f64),
    /// Whether the open intervals `(min, max)` of the arms intersect.
    pub overlap: bool,
}

/// Outcome overlap condition: the open ranges of Y in the two arms must
/// intersect for the likelihood to have an interior maximum.
pub fn check_overlap<T: Real>(d: &LongDataset<T>) -> Result<OverlapReport> {
    let range = |treated: bool| {
        d.rows()
            .iter()
            .filter(|r| r.treated == treated)
            .map(|r| r.y.to_f64_lossy())
            .fold(None, |acc: Option<(f64, f64)>, y| match acc {
                None => Some((y, y)),
                Some((lo, hi)) => Some((lo.min(y), hi.max(y))),
            })
    };
    let (Some(untreated), Some(treated)) = (range(false), range(true)) else {
        return Err(Error::OneArmEmpty);
    };
    let overlap = untreated.0.max(treated.0) < untreated.1.min(treated.1);
    Ok(OverlapReport {
        untreated,
        treated,
        overlap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GroupRank {
    pub columns: usize,
    pub rank: usize,
    pub deficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSizeSummary {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    /// cluster size → number of subjects
    pub histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub x: GroupRank,
    pub z: GroupRank,
    pub w: GroupRank,
    pub untreated_rows: usize,
    pub treated_rows: usize,
    pub n_subjects: usize,
    pub cluster_sizes: ClusterSizeSummary,
}

impl ValidationReport {
    pub fn full_rank(&self) -> bool {
        !(self.x.deficient || self.z.deficient || self.w.deficient)
    }
}

/// Report-only structural checks: design ranks, arm sizes and the
/// cluster-size distribution.
pub fn validate<T: Real>(d: &LongDataset<T>) -> ValidationReport {
    let rank = |g| {
        let m = d.design(g);
        let r = column_rank(&m);
        GroupRank {
            columns: m.ncols(),
            rank: r,
            deficient: r < m.ncols(),
        }
    };
    let sizes = d.cluster_sizes();
    let mut histogram = BTreeMap::new();
    for &s in &sizes {
        *histogram.entry(s).or_insert(0) += 1;
    }
    let (untreated_rows, treated_rows) = d.arm_counts();
    ValidationReport {
        x: rank(CovariateGroup::X),
        z: rank(CovariateGroup::Z),
        w: rank(CovariateGroup::W),
        untreated_rows,
        treated_rows,
        n_subjects: d.n_subjects(),
        cluster_sizes: ClusterSizeSummary {
            min: sizes.iter().copied().min().unwrap_or(0),
            max: sizes.iter().copied().max().unwrap_or(0),
            mean: sizes.iter().sum::<usize>() as f64 / sizes.len().max(1) as f64,
            histogram,
        },
    }
}
