use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use lem::data::{load_csv, write_csv, DesignSpec};
use lem::gee::{fit_gee_independence, GeeVariant};
use lem::inference::{fit_lem, prediction_band, FitOptions};
use lem::model::RhoMap;
use lem::report::FitReport;
use lem::sim::{age_demo, run_study, AgeDemoConfig, Method, Preset, SimConfig};
use lem::spline::{ncs_basis, ncs_column_names};
use lem::Error;

use crate::manifest::{ConfigHash, Run};
use crate::{DemoArgs, FitArgs, MethodArg, PredictArgs, PresetArg, RhoMapArg, SimulateArgs};

/// 1 for bad input or configuration, 2 for numerical failure.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    let lem_err = e.chain().find_map(|c| c.downcast_ref::<Error>());
    match lem_err {
        Some(
            Error::NoConvergence(_)
            | Error::NonFiniteLikelihood
            | Error::SingularMatrix
            | Error::LineSearchFailure { .. },
        ) => 2,
        _ => 1,
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

pub fn fit(a: FitArgs) -> Result<()> {
    let mut run = Run::start("fit");
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(Error::InvalidConfig(format!("--level must be in (0, 1), got {}", a.level)).into());
    }
    let spec = DesignSpec::from_json_file(&a.spec).with_context(|| format!("reading spec {}", a.spec.display()))?;
    let data = load_csv(&a.data, &spec).with_context(|| format!("loading {}", a.data.display()))?;

    let report = match a.method {
        MethodArg::Lem => {
            let opts = FitOptions {
                max_iter: a.max_iter,
                rho_map: match a.rho_map {
                    RhoMapArg::Logistic => RhoMap::Logistic,
                    RhoMapArg::Arctan => RhoMap::Arctan,
                },
                strict_overlap: a.strict_overlap,
                ..FitOptions::default()
            };
            FitReport::from_lem(&fit_lem(&data, &opts)?, a.level)?
        }
        MethodArg::GeeAdjusted => FitReport::from_gee(&fit_gee_independence(&data, GeeVariant::TreatmentAdjusted)?, a.level)?,
        MethodArg::GeeExcluded => FitReport::from_gee(&fit_gee_independence(&data, GeeVariant::TreatmentExcluded)?, a.level)?,
    };

    print!("{}", report.to_text());
    if let (Some(s), Some(r)) = (report.sigma_y, report.rho) {
        println!("sigma_y = {s:.4}, rho = {r:.4}");
    }
    println!("subjects = {}, rows = {}", report.n_subjects, report.n_rows);
    for w in &report.warnings {
        eprintln!("warning: {}", serde_json::to_string(w)?);
    }

    run.write(a.out.join("fit.json"), report.to_json()?.as_bytes())?;
    let mut hash = ConfigHash::new();
    hash.add("method", format!("{:?}", a.method).as_bytes())
        .add("options", format!("{:?}|{}|{}|{}", a.rho_map, a.strict_overlap, a.max_iter, a.level).as_bytes())
        .add("spec", &read_bytes(&a.spec)?)
        .add("data", &read_bytes(&a.data)?);
    run.finish(&a.out, hash.finish(), None)?;
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut run = Run::start("simulate");
    let mut cfg = match (&a.preset, &a.config) {
        (Some(p), _) => SimConfig::preset(match p {
            PresetArg::Sim1 => Preset::Sim1,
            PresetArg::Sim2 => Preset::Sim2,
            PresetArg::Sim3 => Preset::Sim3,
            PresetArg::Sim4 => Preset::Sim4,
        }),
        (None, Some(path)) => {
            SimConfig::from_json_file(path).with_context(|| format!("reading config {}", path.display()))?
        }
        (None, None) => bail!(Error::InvalidConfig("either --preset or --config is required".into())),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n_subjects {
        cfg.n_subjects = n;
    }
    cfg.validate()?;
    let methods: Vec<Method> = a
        .methods
        .iter()
        .map(|m| match m {
            MethodArg::Lem => Method::Lem,
            MethodArg::GeeAdjusted => Method::GeeAdjusted,
            MethodArg::GeeExcluded => Method::GeeExcluded,
        })
        .collect();

    let summary = run_study(&cfg, a.reps, &methods, a.threads)?;
    let text = summary.to_text();
    print!("{text}");

    let cfg_json = serde_json::to_string_pretty(&cfg)?;
    run.write(a.out.join("config.json"), cfg_json.as_bytes())?;
    run.write(a.out.join("summary.txt"), text.as_bytes())?;
    run.write(a.out.join("summary.csv"), summary.to_csv().as_bytes())?;
    run.write(a.out.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    let mut hash = ConfigHash::new();
    hash.add("config", cfg_json.as_bytes())
        .add("reps", &(a.reps as u64).to_le_bytes())
        .add("methods", format!("{methods:?}").as_bytes());
    run.finish(&a.out, hash.finish(), Some(cfg.seed))?;
    Ok(())
}

fn parse_range(s: &str) -> Option<Result<Vec<f64>>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return None;
    }
    Some((|| {
        let lo: f64 = parts[0].trim().parse().context("grid start")?;
        let hi: f64 = parts[1].trim().parse().context("grid end")?;
        let n: usize = parts[2].trim().parse().context("grid count")?;
        if n == 0 || !lo.is_finite() || !hi.is_finite() || (n > 1 && hi <= lo) {
            bail!(Error::InvalidConfig(format!("invalid grid range {s:?}")));
        }
        Ok(if n == 1 {
            vec![lo]
        } else {
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        })
    })())
}

fn read_grid_csv(path: &Path, column: Option<&str>) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading grid {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let idx = match column {
        Some(c) => headers
            .iter()
            .position(|h| h == c)
            .ok_or_else(|| Error::MissingColumn(c.into()))?,
        None => 0,
    };
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(idx).unwrap_or("");
        let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
            row: i + 1,
            column: headers.get(idx).unwrap_or("").to_string(),
            message: format!("not a number: {cell:?}"),
        })?;
        out.push(v);
    }
    if out.is_empty() {
        bail!(Error::InvalidData("grid file has no rows".into()));
    }
    Ok(out)
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let mut run = Run::start("predict");
    if !(a.level > 0.0 && a.level < 1.0) {
        bail!(Error::InvalidConfig(format!("--level must be in (0, 1), got {}", a.level)));
    }
    let report = FitReport::from_json_file(&a.fit).with_context(|| format!("reading fit {}", a.fit.display()))?;
    let predictor = report.predictor()?;
    let grid = match parse_range(&a.grid) {
        Some(r) => r?,
        None => read_grid_csv(Path::new(&a.grid), a.grid_column.as_deref())?,
    };

    let mut fixed: BTreeMap<String, f64> = BTreeMap::new();
    for s in &a.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects NAME=VALUE, got {s:?}")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("--set {k}: not a number")))?;
        fixed.insert(k.trim().to_string(), v);
    }
    let varying: Vec<String> = match &a.knots {
        Some(k) => {
            ncs_basis(0.0, k)?;
            ncs_column_names(&a.variable, k.len())
        }
        None => vec![a.variable.clone()],
    };

    let mut rows = Vec::with_capacity(grid.len());
    for &g in &grid {
        let values = match &a.knots {
            Some(k) => ncs_basis(g, k)?,
            None => vec![g],
        };
        let row = report
            .x_names
            .iter()
            .map(|name| {
                if name == lem::data::INTERCEPT {
                    Ok(1.0)
                } else if let Some(p) = varying.iter().position(|v| v == name) {
                    Ok(values[p])
                } else if let Some(&v) = fixed.get(name) {
                    Ok(v)
                } else {
                    Err(anyhow!(Error::InvalidConfig(format!(
                        "X column `{name}` is neither a grid column ({}) nor given with --set",
                        varying.join(", ")
                    ))))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    for v in &varying {
        if !report.x_names.contains(v) {
            bail!(Error::MissingColumn(format!("{v} (not an X column of the fit)")));
        }
    }
    for k in fixed.keys() {
        if !report.x_names.contains(k) {
            bail!(Error::MissingColumn(format!("{k} (given with --set)")));
        }
    }

    let band = prediction_band(&predictor, &grid, &rows, a.level)?;
    let mut out = String::from("grid,estimate,se,lower,upper\n");
    for i in 0..grid.len() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            band.grid[i], band.estimate[i], band.se[i], band.lower[i], band.upper[i]
        ));
    }
    run.write(a.out.join("prediction.csv"), out.as_bytes())?;
    println!("wrote {} grid points to {}", grid.len(), a.out.join("prediction.csv").display());
    let mut hash = ConfigHash::new();
    hash.add("fit", &read_bytes(&a.fit)?)
        .add("grid", format!("{grid:?}").as_bytes())
        .add("knots", format!("{:?}|{}|{:?}|{}", a.knots, a.variable, fixed, a.level).as_bytes());
    run.finish(&a.out, hash.finish(), None)?;
    Ok(())
}

pub fn demo(a: DemoArgs) -> Result<()> {
    let mut run = Run::start("demo");
    let mut cfg = AgeDemoConfig::default();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n_subjects {
        cfg.n_subjects = n;
    }
    let demo = age_demo(&cfg)?;
    let columns = DesignSpec {
        subject: "id".into(),
        time: "visit".into(),
        outcome: "y".into(),
        treatment: "treated".into(),
        x: vec![],
        z: vec![],
        w: vec![],
    };
    let mut csv_bytes = Vec::new();
    let spec = write_csv(&demo.data, &mut csv_bytes, &columns)?;
    run.write(a.out.join("demo.csv"), &csv_bytes)?;
    run.write(a.out.join("spec.json"), serde_json::to_string_pretty(&spec)?.as_bytes())?;

    let (lo, hi) = cfg.age_range();
    let mut truth = String::from("age,truth\n");
    for i in 0..=90 {
        let age = lo + (hi - lo) * i as f64 / 90.0;
        truth.push_str(&format!("{age},{}\n", cfg.truth(age)?));
    }
    run.write(a.out.join("truth.csv"), truth.as_bytes())?;
    let cfg_json = serde_json::to_string_pretty(&cfg)?;
    run.write(a.out.join("demo_config.json"), cfg_json.as_bytes())?;
    println!(
        "wrote {} rows for {} subjects to {}; knots {:?}",
        demo.data.n_rows(),
        demo.data.n_subjects(),
        a.out.display(),
        cfg.knots
    );
    let mut hash = ConfigHash::new();
    hash.add("config", cfg_json.as_bytes());
    run.finish(&a.out, hash.finish(), Some(cfg.seed))?;
    Ok(())
}
