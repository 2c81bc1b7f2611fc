//! `sweep`: reruns a configuration with one parameter varied and collects
//! one aggregate row per value.

use std::path::Path;

use anyhow::Result;
use clap::ValueEnum;
use serde_json::{json, Value};

use crate::config::{ConfigError, RunConfig};
use crate::output::{Artifacts, MANIFEST};
use crate::run::{config_hash, run, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Parameter {
    #[value(name = "dt")]
    Dt,
    #[value(name = "n_max")]
    NMax,
    #[value(name = "J")]
    J,
    #[value(name = "cells")]
    Cells,
}

impl Parameter {
    pub fn name(self) -> &'static str {
        match self {
            Parameter::Dt => "dt",
            Parameter::NMax => "n_max",
            Parameter::J => "J",
            Parameter::Cells => "cells",
        }
    }
}

fn count(value: f64, what: &str) -> Result<u64, ConfigError> {
    if value >= 0.0 && value.fract() == 0.0 && value < 1e9 {
        Ok(value as u64)
    } else {
        Err(ConfigError::new("sweep", format!("{what} must be a nonnegative integer, got {value}")))
    }
}

/// `doc` with `parameter` set to `value`.
pub fn apply(doc: &Value, parameter: Parameter, value: f64) -> Result<Value> {
    let config = RunConfig::from_value(doc)?;
    let mut doc = doc.clone();
    match parameter {
        Parameter::Dt => doc["time"]["dt"] = json!(value),
        Parameter::NMax => {
            let mut schedule: Vec<f64> = config.solver.n_schedule.iter().copied().filter(|n| *n < value).collect();
            schedule.push(value);
            if doc.get("solver").is_none() {
                doc["solver"] = json!({});
            }
            doc["solver"]["n_schedule"] = json!(schedule);
        }
        Parameter::J => doc["noise"]["terms"] = json!(count(value, "J")?),
        Parameter::Cells => {
            let n = count(value, "cells")?;
            doc["grid"]["cells"] = json!(vec![n; config.grid.dimension]);
        }
    }
    Ok(doc)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 }
}

fn row(parameter: Parameter, value: f64, s: &Summary, checks: &[String]) -> String {
    let obstacle: Vec<_> = s.seeds.iter().filter_map(|x| x.obstacle.as_ref()).collect();
    let opt = |f: &dyn Fn(&crate::run::ObstacleSummary) -> f64| {
        if obstacle.is_empty() { String::new() } else { mean(obstacle.iter().map(|o| f(o))).to_string() }
    };
    let mut cells = vec![
        parameter.name().to_string(),
        value.to_string(),
        s.steps.to_string(),
        s.nodes.to_string(),
        opt(&|o| o.skorokhod_gap),
        opt(&|o| o.max_violation),
        opt(&|o| o.total_mass),
        mean(s.seeds.iter().map(|x| x.ledger_residual.abs())).to_string(),
    ];
    for name in checks {
        let line = s.checks.iter().find(|c| &c.check == name).expect("every configured check is reported");
        cells.push(line.measured.to_string());
    }
    cells.join(",")
}

pub struct SweepReport {
    pub failed_checks: usize,
}

/// Runs every value into `out/<parameter>-<index>` and writes
/// `out/sweep.csv` with seed means of the Skorokhod gap, the obstacle
/// violation, the measure mass and `|ledger residual|`, plus the measured
/// value of each configured check.
pub fn sweep(doc: &Value, parameter: Parameter, values: &[f64], out: &Path, force: bool) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(ConfigError::new("sweep", "no values").into());
    }
    let config = RunConfig::from_value(doc)?;
    let checks = config.checks.names.clone();
    let mut artifacts = Artifacts::create(out)?;
    let mut csv = String::from("parameter,value,steps,nodes,skorokhod_gap,max_violation,total_mass,ledger_residual");
    for name in &checks {
        csv.push_str(&format!(",{name}"));
    }
    csv.push('\n');
    let mut failed = 0;
    for (i, v) in values.iter().enumerate() {
        let sub = format!("{}-{i}", parameter.name());
        let modified = apply(doc, parameter, *v)?;
        let report = run(&modified, &artifacts.root().join(&sub), force)?;
        failed += report.summary.failed_checks();
        csv.push_str(&row(parameter, *v, &report.summary, &checks));
        csv.push('\n');
        artifacts.adopt(&sub, &report.files);
        artifacts.record(&format!("{sub}/{MANIFEST}"))?;
    }
    artifacts.write("sweep.csv", csv.as_bytes())?;
    artifacts.finish(&config_hash(doc))?;
    Ok(SweepReport { failed_checks: failed })
}
