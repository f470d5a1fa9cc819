use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::generate::{apply_missingness, Generator};
use crate::error::{Error, Result};
use crate::gee::{fit_gee_independence, GeeVariant};
use crate::inference::{fit_lem, FitOptions, LinearPredictorFit};
use crate::numerics::std_normal_quantile;
use crate::scalar::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Lem,
    GeeAdjusted,
    GeeExcluded,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Lem => "LEM",
            Method::GeeAdjusted => "GEE",
            Method::GeeExcluded => "GEE-excl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefSummary {
    pub name: String,
    pub truth: f64,
    pub mean: Option<f64>,
    /// Standard deviation of the estimates across replicates.
    pub ese: Option<f64>,
    /// Mean robust standard error.
    pub mean_se: Option<f64>,
    /// Share of 95% Wald intervals containing the truth.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub successes: usize,
    pub failures: usize,
    pub coefficients: Vec<CoefSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub config: SimConfig,
    pub n_reps: usize,
    /// Replicates whose data could not be generated at all.
    pub generation_failures: usize,
    /// Mean share of generated rows removed by the missingness mechanism.
    pub mean_deletion_rate: f64,
    pub methods: Vec<MethodSummary>,
}

/// β estimates and robust SEs of one method on one replicate.
type BetaDraw = Vec<(f64, f64)>;

struct Replicate {
    deletion_rate: Option<f64>,
    draws: Vec<Option<BetaDraw>>,
}

fn beta_draw<F: LinearPredictorFit<f64>>(fit: &F) -> Option<BetaDraw> {
    let cov = fit.beta_cov().ok()?;
    let out: BetaDraw = fit
        .beta()
        .iter()
        .enumerate()
        .map(|(j, &b)| (b, cov[(j, j)].max(0.0).sqrt()))
        .collect();
    out.iter().all(|(b, s)| b.is_finite() && s.is_finite()).then_some(out)
}

fn run_replicate(gen: &Generator, rep: usize, methods: &[Method]) -> Replicate {
    let cfg = gen.config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(rep as u64);
    let data = gen
        .panel(&mut rng)
        .and_then(|p| {
            let full = p.data.n_rows();
            apply_missingness(&p.data, cfg.missingness, &mut rng).map(|d| (full, d))
        });
    let Ok((full, d)) = data else {
        return Replicate {
            deletion_rate: None,
            draws: vec![None; methods.len()],
        };
    };
    let draws = methods
        .iter()
        .map(|m| match m {
            Method::Lem => fit_lem(&d, &FitOptions::default()).ok().and_then(|f| beta_draw(&f)),
            Method::GeeAdjusted => fit_gee_independence(&d, GeeVariant::TreatmentAdjusted)
                .ok()
                .and_then(|f| beta_draw(&f)),
            Method::GeeExcluded => fit_gee_independence(&d, GeeVariant::TreatmentExcluded)
                .ok()
                .and_then(|f| beta_draw(&f)),
        })
        .collect();
    Replicate {
        deletion_rate: Some(1.0 - d.n_rows() as f64 / full as f64),
        draws,
    }
}

fn summarize(method: Method, truth: &[f64], draws: &[&BetaDraw], failures: usize) -> MethodSummary {
    let z = std_normal_quantile(0.975_f64);
    let n = draws.len();
    let coefficients = truth
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let mean_of = |f: &dyn Fn(&(f64, f64)) -> f64| {
                (n > 0).then(|| draws.iter().map(|d| f(&d[j])).collect::<CompensatedSum<f64>>().value() / n as f64)
            };
            let mean = mean_of(&|&(b, _)| b);
            let ese = mean.filter(|_| n > 1).map(|m| {
                let ss = draws.iter().map(|d| (d[j].0 - m).powi(2)).collect::<CompensatedSum<f64>>().value();
                (ss / (n - 1) as f64).sqrt()
            });
            CoefSummary {
                name: format!("beta{j}"),
                truth: t,
                mean,
                ese,
                mean_se: mean_of(&|&(_, s)| s),
                coverage: mean_of(&|&(b, s)| if (b - t).abs() <= z * s { 1.0 } else { 0.0 }),
            }
        })
        .collect();
    MethodSummary {
        method,
        successes: n,
        failures,
        coefficients,
    }
}

/// Runs `n_reps` replicates and aggregates β summaries per method.
///
/// Replicate `r` draws from its own ChaCha8 stream `r` under `cfg.seed`, and
/// results are folded in replicate order, so the summary does not depend on
/// `threads`.
pub fn run_study(cfg: &SimConfig, n_reps: usize, methods: &[Method], threads: Option<usize>) -> Result<StudySummary> {
    if n_reps == 0 {
        return Err(Error::InvalidConfig("at least one replicate is required".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods requested".into()));
    }
    let gen = Generator::new(cfg)?;
    let work = || {
        (0..n_reps)
            .into_par_iter()
            .map(|rep| run_replicate(&gen, rep, methods))
            .collect::<Vec<_>>()
    };
    let reps = match threads {
        Some(0) => return Err(Error::InvalidConfig("thread count must be positive".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let rates: Vec<f64> = reps.iter().filter_map(|r| r.deletion_rate).collect();
    let mean_deletion_rate = if rates.is_empty() {
        0.0
    } else {
        rates.iter().copied().collect::<CompensatedSum<f64>>().value() / rates.len() as f64
    };
    let methods = methods
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let ok: Vec<&BetaDraw> = reps.iter().filter_map(|r| r.draws[k].as_ref()).collect();
            summarize(m, &cfg.beta, &ok, n_reps - ok.len())
        })
        .collect();
    Ok(StudySummary {
        config: cfg.clone(),
        n_reps,
        generation_failures: n_reps - rates.len(),
        mean_deletion_rate,
        methods,
    })
}

fn cell(v: Option<f64>, width: usize, prec: usize) -> String {
    match v {
        Some(x) => format!("{x:>width$.prec$}"),
        None => format!("{:>width$}", "-"),
    }
}

impl StudySummary {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    /// Aligned table: one row per coefficient, a block of Est/ESE/SE/CP
    /// columns per method.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let c = &self.config;
        let _ = writeln!(
            out,
            "missingness={:?} N={} T={} replicates={} mean deletion rate={:.3}",
            c.missingness, c.n_subjects, c.n_times, self.n_reps, self.mean_deletion_rate
        );
        let block = 31;
        let _ = write!(out, "{:<8}{:>7}", "", "");
        for m in &self.methods {
            let _ = write!(out, "  {:<block$}", m.method.label());
        }
        out.push('\n');
        let _ = write!(out, "{:<8}{:>7}", "param", "truth");
        for _ in &self.methods {
            let _ = write!(out, "  {:>7} {:>7} {:>7} {:>6}", "Est", "ESE", "SE", "CP");
        }
        out.push('\n');
        let n_coef = self.config.beta.len();
        for j in 0..n_coef {
            let _ = write!(out, "{:<8}{:>7.2}", format!("beta{j}"), self.config.beta[j]);
            for m in &self.methods {
                let s = &m.coefficients[j];
                let _ = write!(
                    out,
                    "  {} {} {} {}",
                    cell(s.mean, 7, 3),
                    cell(s.ese, 7, 3),
                    cell(s.mean_se, 7, 3),
                    cell(s.coverage, 6, 3)
                );
            }
            out.push('\n');
        }
        for m in &self.methods {
            let _ = writeln!(out, "{}: {} fits, {} failures", m.method.label(), m.successes, m.failures);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut out = String::from("method,parameter,truth,mean,ese,mean_se,coverage,successes,failures\n");
        for m in &self.methods {
            for s in &m.coefficients {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    m.method.label(),
                    s.name,
                    s.truth,
                    opt(s.mean),
                    opt(s.ese),
                    opt(s.mean_se),
                    opt(s.coverage),
                    m.successes,
                    m.failures
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::Preset;

    fn small(p: Preset) -> SimConfig {
        SimConfig {
            n_subjects: 150,
            seed: 42,
            ..SimConfig::preset(p)
        }
    }

    #[test]
    fn single_replicate_has_no_ese() {
        let s = run_study(&small(Preset::Sim1), 1, &[Method::Lem, Method::GeeAdjusted], Some(1)).unwrap();
        for m in &s.methods {
            assert_eq!(m.successes + m.failures, 1);
            for c in &m.coefficients {
                assert_eq!(c.ese, None);
            }
        }
        assert!(s.to_text().contains(" -"));
        assert!(s.to_csv().lines().count() == 11);
    }

    #[test]
    fn bit_identical_across_threads() {
        let cfg = small(Preset::Sim2);
        let methods = [Method::Lem, Method::GeeAdjusted, Method::GeeExcluded];
        let a = run_study(&cfg, 6, &methods, Some(1)).unwrap();
        let b = run_study(&cfg, 6, &methods, Some(3)).unwrap();
        let c = run_study(&cfg, 6, &methods, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.mean_deletion_rate > 0.2 && a.mean_deletion_rate < 0.4);
        let d = run_study(&SimConfig { seed: 43, ..cfg }, 6, &methods, Some(2)).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn rejects_degenerate_requests() {
        let cfg = small(Preset::Sim1);
        assert!(run_study(&cfg, 0, &[Method::Lem], None).is_err());
        assert!(run_study(&cfg, 1, &[], None).is_err());
        assert!(run_study(&cfg, 1, &[Method::Lem], Some(0)).is_err());
    }

    #[test]
    fn coverage_is_a_proportion() {
        let s = run_study(&small(Preset::Sim4), 4, &[Method::Lem, Method::GeeAdjusted], Some(2)).unwrap();
        for m in &s.methods {
            for c in &m.coefficients {
                if let Some(cp) = c.coverage {
                    assert!((0.0..=1.0).contains(&cp));
                }
                if let Some(e) = c.ese {
                    assert!(e > 0.0);
                }
            }
        }
    }
}
