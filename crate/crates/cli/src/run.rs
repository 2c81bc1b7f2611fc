//! `run`: solve every configured seed, run the requested checks and write
//! the artifacts.

use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use ospde_core::verify::{check_comparison, ito_ledger, run_named_check, ComparisonMode};
use ospde_core::{
    solve, solve_obstacle, CheckReport, ContractionVerdict, PenaltyLevel, ProblemSpec, SamplePath, Verdict,
};

use crate::config::RunConfig;
use crate::output::{sha256_hex, Artifacts, ManifestEntry};

#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub ledger_residual: f64,
    pub ledger_residual_without_measure: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme_defect: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<ObstacleSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObstacleSummary {
    pub n: f64,
    pub total_mass: f64,
    pub skorokhod_gap: f64,
    pub max_violation: f64,
    pub picard_iterations: usize,
    pub picard_gap: f64,
    pub levels: Vec<PenaltyLevel>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub check: String,
    pub verdict: Verdict,
    pub measured: f64,
    pub tolerance: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config_sha256: String,
    pub nodes: usize,
    pub steps: usize,
    pub dt: f64,
    pub horizon: f64,
    pub noise_terms: usize,
    pub phi: String,
    pub contraction: ContractionVerdict,
    pub safety_margin: f64,
    pub forced: bool,
    pub seeds: Vec<SeedSummary>,
    pub checks: Vec<CheckLine>,
}

impl Summary {
    pub fn failed_checks(&self) -> usize {
        self.checks.iter().filter(|c| c.verdict == Verdict::Fail).count()
    }
}

pub struct RunReport {
    pub summary: Summary,
    pub files: Vec<ManifestEntry>,
}

/// Hash of the canonical (key-sorted, compact) form of the document.
pub fn config_hash(doc: &Value) -> String {
    sha256_hex(&serde_json::to_vec(doc).expect("JSON value serializes"))
}

struct SeedOutput {
    summary: SeedSummary,
    trajectory: String,
    measure: Option<String>,
    ledger: String,
}

fn solve_seed(config: &RunConfig, spec: &ProblemSpec, seed: u64) -> Result<SeedOutput> {
    let time = spec.time();
    let path = SamplePath::generate(seed, spec.noise_terms(), time.dt(), time.steps())?;
    let phi = config.phi();
    let grid = spec.operator().grid();
    let (trajectory, measure, obstacle) = if spec.obstacle().is_none() {
        (solve(spec, &path)?, None, None)
    } else {
        let sol = solve_obstacle(spec, &path, &config.solver).with_context(|| format!("obstacle solve, seed {seed}"))?;
        let summary = ObstacleSummary {
            n: sol.n,
            total_mass: sol.measure.total_mass(),
            skorokhod_gap: sol.skorokhod_gap(),
            max_violation: sol.max_violation(),
            picard_iterations: sol.picard_iterations,
            picard_gap: sol.picard_gap,
            levels: sol.levels.clone(),
        };
        (sol.trajectory, Some(sol.measure), Some(summary))
    };
    let ledger = ito_ledger(spec, &trajectory, measure.as_ref(), &path, &phi)?;
    Ok(SeedOutput {
        summary: SeedSummary {
            seed,
            ledger_residual: ledger.residual,
            ledger_residual_without_measure: ledger.residual_without_measure,
            scheme_defect: ledger.scheme_defect,
            obstacle,
        },
        trajectory: trajectory.to_csv(),
        measure: measure.map(|m| m.to_csv(grid)),
        ledger: ledger.to_csv(),
    })
}

fn run_check(name: &str, config: &RunConfig, spec: &ProblemSpec, force: bool) -> Result<CheckReport> {
    let params = config.check_params();
    let report = match name {
        "comparison-linear" | "comparison-obstacle" => {
            let upper = config.upper_problem(force)?;
            let mode = if name == "comparison-linear" { ComparisonMode::Linear } else { ComparisonMode::Obstacle };
            let lower = if mode == ComparisonMode::Linear {
                spec.with_obstacle(ospde_core::Obstacle::None)?
            } else {
                spec.clone()
            };
            let upper = if mode == ComparisonMode::Linear { upper.with_obstacle(ospde_core::Obstacle::None)? } else { upper };
            check_comparison(&lower, &upper, mode, &params)?
        }
        "ito-identity" => ospde_core::verify::check_ito_identity(spec, &config.phi(), &params)?,
        "apriori-linear" | "kappa-estimate" => {
            run_named_check(name, &spec.with_obstacle(ospde_core::Obstacle::None)?, &params)?
        }
        other => run_named_check(other, spec, &params)?,
    };
    Ok(report)
}

/// Runs the document `doc` into `out`.
pub fn run(doc: &Value, out: &Path, force: bool) -> Result<RunReport> {
    let config = RunConfig::from_value(doc)?;
    let spec = config.problem(force)?;
    let contraction = spec.contraction();
    if force && contraction.margin <= spec.safety_margin() {
        eprintln!(
            "WARNING: --force: the contraction property is not verified (margin {} <= required {}); \
             Picard iteration and the checks may not be meaningful",
            contraction.margin,
            spec.safety_margin()
        );
    }
    let hash = config_hash(doc);
    let mut artifacts = Artifacts::create(out)?;

    let seeds = config.seeds();
    let outputs: Vec<SeedOutput> =
        seeds.par_iter().map(|s| solve_seed(&config, &spec, *s)).collect::<Result<_>>()?;
    if config.output.fields {
        for o in &outputs {
            let seed = o.summary.seed;
            artifacts.write(&format!("trajectory_seed{seed}.csv"), o.trajectory.as_bytes())?;
            artifacts.write(&format!("ledger_seed{seed}.csv"), o.ledger.as_bytes())?;
            if let Some(m) = &o.measure {
                artifacts.write(&format!("measure_seed{seed}.csv"), m.as_bytes())?;
            }
        }
    }

    let mut checks = Vec::new();
    let mut aggregate = String::from("check,verdict,measured,tolerance,margin\n");
    for name in &config.checks.names {
        let report = run_check(name, &config, &spec, force).with_context(|| format!("check `{name}`"))?;
        artifacts.write_json(&format!("check_{name}.json"), &report)?;
        let verdict = match report.verdict {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        };
        aggregate.push_str(&format!("{name},{verdict},{},{},{}\n", report.measured, report.tolerance, report.margin));
        checks.push(CheckLine {
            check: name.clone(),
            verdict: report.verdict,
            measured: report.measured,
            tolerance: report.tolerance,
            margin: report.margin,
        });
    }
    artifacts.write("checks.csv", aggregate.as_bytes())?;

    let time = spec.time();
    let summary = Summary {
        config_sha256: hash.clone(),
        nodes: spec.operator().len(),
        steps: time.steps(),
        dt: time.dt(),
        horizon: time.horizon(),
        noise_terms: spec.noise_terms(),
        phi: config.checks.phi.clone(),
        contraction,
        safety_margin: spec.safety_margin(),
        forced: spec.is_forced(),
        seeds: outputs.into_iter().map(|o| o.summary).collect(),
        checks,
    };
    artifacts.write_json("summary.json", &summary)?;
    let files = artifacts.finish(&hash)?;
    Ok(RunReport { summary, files })
}
