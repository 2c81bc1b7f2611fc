//! Run configuration: one JSON document, validated block by block.

use std::fmt;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use ospde_core::verify::{Phi, CHECK_NAMES, MIN_PATHS};
use ospde_core::{
    assemble_operator, build_grid, Builtin, CheckParams, Coefficient, CoefficientSet, DrivenObstacle,
    EllipticCoefficients, Error, LipschitzConstants, Obstacle, ProblemSpec, Profile, SolverOptions, TimeGrid,
};

pub const BLOCKS: &[&str] = &["grid", "time", "noise", "coefficients", "initial", "obstacle", "solver", "checks", "output"];

/// A configuration problem, tagged with the block it was found in.
#[derive(Debug)]
pub struct ConfigError {
    pub block: &'static str,
    pub message: String,
}

impl ConfigError {
    pub fn new(block: &'static str, message: impl fmt::Display) -> Self {
        Self { block, message: message.to_string() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config block `{}`: {}", self.block, self.message)
    }
}

impl std::error::Error for ConfigError {}

type Checked<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Diffusion {
    Constant { value: f64 },
    /// Scalar field `a(x) I` with declared ellipticity bounds.
    Field { profile: Profile, lambda: f64, upper: f64 },
}

impl Default for Diffusion {
    fn default() -> Self {
        Diffusion::Constant { value: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dimension: usize,
    pub extents: Vec<f64>,
    pub cells: Vec<usize>,
    #[serde(default)]
    pub diffusion: Diffusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "default_terms")]
    pub terms: usize,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub seed_count: Option<usize>,
    #[serde(default)]
    pub base_seed: u64,
}

fn default_terms() -> usize {
    8
}

impl NoiseConfig {
    pub fn seeds(&self) -> Vec<u64> {
        match (&self.seeds, self.seed_count) {
            (Some(s), _) => s.clone(),
            (None, Some(n)) => (0..n as u64).map(|i| self.base_seed.wrapping_add(i)).collect(),
            (None, None) => vec![self.base_seed],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsConfig {
    #[serde(default = "zero")]
    pub f: Builtin,
    /// One entry per axis; empty means zero.
    #[serde(default)]
    pub g: Vec<Builtin>,
    #[serde(default)]
    pub h: Vec<Builtin>,
    #[serde(default = "zero")]
    pub l: Builtin,
    #[serde(default)]
    pub constants: LipschitzConstants,
    #[serde(default = "default_margin")]
    pub safety_margin: f64,
}

fn zero() -> Builtin {
    Builtin::Zero
}

fn default_margin() -> f64 {
    ospde_core::problem::DEFAULT_SAFETY_MARGIN
}

impl Default for CoefficientsConfig {
    fn default() -> Self {
        Self {
            f: Builtin::Zero,
            g: Vec::new(),
            h: Vec::new(),
            l: Builtin::Zero,
            constants: LipschitzConstants::default(),
            safety_margin: default_margin(),
        }
    }
}

impl CoefficientsConfig {
    fn build(&self, dimension: usize, block: &'static str) -> Checked<CoefficientSet> {
        for b in std::iter::once(&self.f).chain(&self.g).chain(&self.h).chain(std::iter::once(&self.l)) {
            b.validate().map_err(|e| ConfigError::new(block, e))?;
        }
        let g = if self.g.is_empty() {
            vec![Coefficient::zero(); dimension]
        } else if self.g.len() == dimension {
            self.g.iter().map(Builtin::build).collect()
        } else {
            return Err(ConfigError::new(block, format!("g needs {dimension} components, got {}", self.g.len())));
        };
        Ok(CoefficientSet::zero(dimension)
            .with_f(self.f.build())
            .with_g(g)
            .with_h(self.h.iter().map(Builtin::build).collect())
            .with_l(self.l.build())
            .with_constants(self.constants))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObstacleConfig {
    #[default]
    None,
    Static {
        profile: Profile,
    },
    /// `S = S' + offset` with `S'` solving the state-free equation given by
    /// `coefficients` from `initial`.
    Driven {
        coefficients: CoefficientsConfig,
        initial: Profile,
        #[serde(default)]
        offset: f64,
    },
}

/// Shifts turning the configured problem into the upper problem of the
/// comparison checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    pub initial: f64,
    pub f: f64,
    pub l: f64,
    pub obstacle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    #[serde(default)]
    pub names: Vec<String>,
    /// Defaults to the noise seeds.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Penalization level of obstacle checks; defaults to the last entry of
    /// the solver schedule.
    #[serde(default)]
    pub n: Option<f64>,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_phi")]
    pub phi: String,
    #[serde(default)]
    pub comparison: ComparisonConfig,
}

fn default_levels() -> usize {
    3
}

fn default_pairs() -> usize {
    100
}

fn default_phi() -> String {
    "square".into()
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            seeds: None,
            levels: default_levels(),
            n: None,
            pairs: default_pairs(),
            phi: default_phi(),
            comparison: ComparisonConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<String>,
    /// Write per-seed trajectory, measure and ledger CSVs.
    #[serde(default = "yes")]
    pub fields: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, fields: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub noise: NoiseConfig,
    pub coefficients: CoefficientsConfig,
    pub initial: Profile,
    pub obstacle: ObstacleConfig,
    pub solver: SolverOptions,
    pub checks: ChecksConfig,
    pub output: OutputConfig,
}

fn block<T: DeserializeOwned>(doc: &serde_json::Map<String, Value>, name: &'static str) -> Checked<Option<T>> {
    doc.get(name)
        .map(|v| serde_json::from_value(v.clone()).map_err(|e| ConfigError::new(name, e)))
        .transpose()
}

fn required<T: DeserializeOwned>(doc: &serde_json::Map<String, Value>, name: &'static str) -> Checked<T> {
    block(doc, name)?.ok_or_else(|| ConfigError::new(name, "missing"))
}

impl RunConfig {
    /// Parses the document and checks everything that needs no solve.
    pub fn from_value(doc: &Value) -> Checked<Self> {
        let map = doc.as_object().ok_or_else(|| ConfigError::new("document", "expected a JSON object"))?;
        if let Some(unknown) = map.keys().find(|k| !BLOCKS.contains(&k.as_str())) {
            return Err(ConfigError::new(
                "document",
                format!("unknown block `{unknown}` (expected one of {})", BLOCKS.join(", ")),
            ));
        }
        let config = Self {
            grid: required(map, "grid")?,
            time: required(map, "time")?,
            noise: required(map, "noise")?,
            coefficients: block(map, "coefficients")?.unwrap_or_default(),
            initial: required(map, "initial")?,
            obstacle: block(map, "obstacle")?.unwrap_or_default(),
            solver: block(map, "solver")?.unwrap_or_default(),
            checks: block(map, "checks")?.unwrap_or_default(),
            output: block(map, "output")?.unwrap_or_default(),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Checked<()> {
        self.solver.validate().map_err(|e| ConfigError::new("solver", e))?;
        TimeGrid::from_horizon(self.time.horizon, self.time.dt).map_err(|e| ConfigError::new("time", e))?;
        if self.noise.seeds().is_empty() {
            return Err(ConfigError::new("noise", "no seeds"));
        }
        if self.noise.seeds.is_some() && self.noise.seed_count.is_some() {
            return Err(ConfigError::new("noise", "give either `seeds` or `seed_count`, not both"));
        }
        let checks = &self.checks;
        if let Some(bad) = checks.names.iter().find(|n| !CHECK_NAMES.contains(&n.as_str())) {
            return Err(ConfigError::new("checks", format!("unknown check `{bad}` (known: {})", CHECK_NAMES.join(", "))));
        }
        Phi::from_name(&checks.phi).map_err(|e| ConfigError::new("checks", e))?;
        let estimates = ["apriori-linear", "apriori-driver", "kappa-estimate"];
        if checks.names.iter().any(|n| estimates.contains(&n.as_str())) && 2 * checks.pairs < MIN_PATHS {
            return Err(ConfigError::new(
                "checks",
                format!("estimate checks need at least {MIN_PATHS} paths, `pairs` = {} gives {}", checks.pairs, 2 * checks.pairs),
            ));
        }
        let has = |name: &str| checks.names.iter().any(|n| n == name);
        if has("apriori-driver") && !matches!(self.obstacle, ObstacleConfig::Driven { .. }) {
            return Err(ConfigError::new("checks", "apriori-driver needs a driven obstacle"));
        }
        if has("comparison-obstacle") && matches!(self.obstacle, ObstacleConfig::None) {
            return Err(ConfigError::new("checks", "comparison-obstacle needs an obstacle"));
        }
        let c = &checks.comparison;
        if [c.initial, c.f, c.l, c.obstacle].iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(ConfigError::new("checks", "comparison shifts must be finite and nonnegative"));
        }
        if checks.levels < 2 && (has("ito-identity") || has("weak-form")) {
            return Err(ConfigError::new("checks", "refinement checks need `levels` >= 2"));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.noise.seeds()
    }

    pub fn check_params(&self) -> CheckParams {
        CheckParams {
            seeds: self.checks.seeds.clone().unwrap_or_else(|| self.seeds()),
            levels: self.checks.levels,
            n: self.checks.n.unwrap_or_else(|| *self.solver.n_schedule.last().expect("validated schedule")),
            pairs: self.checks.pairs,
        }
    }

    pub fn phi(&self) -> Phi {
        Phi::from_name(&self.checks.phi).expect("validated phi")
    }

    /// Assembles the problem. `force` skips the contraction gate.
    pub fn problem(&self, force: bool) -> Checked<ProblemSpec> {
        self.problem_shifted(force, &ComparisonConfig::default())
    }

    /// Upper problem of the comparison checks.
    pub fn upper_problem(&self, force: bool) -> Checked<ProblemSpec> {
        self.problem_shifted(force, &self.checks.comparison)
    }

    fn problem_shifted(&self, force: bool, shift: &ComparisonConfig) -> Checked<ProblemSpec> {
        let g = &self.grid;
        let grid = build_grid(g.dimension, &g.extents, &g.cells).map_err(|e| ConfigError::new("grid", e))?;
        let diffusion = match &g.diffusion {
            Diffusion::Constant { value } => EllipticCoefficients::isotropic(&grid, *value),
            Diffusion::Field { profile, lambda, upper } => {
                EllipticCoefficients::scalar_field(&grid, |x| profile.eval(x), *lambda, *upper)
            }
        }
        .map_err(|e| ConfigError::new("grid", e))?;
        let op = Arc::new(assemble_operator(&grid, &diffusion).map_err(|e| ConfigError::new("grid", e))?);
        let time = TimeGrid::from_horizon(self.time.horizon, self.time.dt).map_err(|e| ConfigError::new("time", e))?;

        let mut coefficients = self.coefficients.build(g.dimension, "coefficients")?;
        coefficients.f = shifted(coefficients.f, shift.f);
        coefficients.l = shifted(coefficients.l, shift.l);
        let initial: Vec<f64> = self.initial.sample(&grid).iter().map(|v| v + shift.initial).collect();
        let obstacle = match &self.obstacle {
            ObstacleConfig::None => Obstacle::None,
            ObstacleConfig::Static { profile } => {
                Obstacle::Static(profile.sample(&grid).iter().map(|v| v + shift.obstacle).collect())
            }
            ObstacleConfig::Driven { coefficients, initial, offset } => {
                let driver = coefficients.build(g.dimension, "obstacle")?;
                Obstacle::Driven(DrivenObstacle {
                    coefficients: driver,
                    initial: initial.sample(&grid).iter().map(|v| v + shift.obstacle).collect(),
                    offset: *offset,
                })
            }
        };
        ProblemSpec::builder(op, time)
            .coefficients(coefficients)
            .initial(initial)
            .obstacle(obstacle)
            .noise_terms(self.noise.terms)
            .safety_margin(self.coefficients.safety_margin)
            .force(force)
            .build()
            .map_err(|e| ConfigError::new(error_block(&e), e))
    }
}

fn shifted(c: Coefficient, by: f64) -> Coefficient {
    if by == 0.0 {
        return c;
    }
    let name = format!("{} + {by}", c.name());
    Coefficient::from_fn(name, move |p| c.eval(p) + by)
}

fn error_block(e: &Error) -> &'static str {
    match e {
        Error::InvalidGrid(_) | Error::Ellipticity { .. } | Error::NonDiagonalTensor(_) => "grid",
        Error::InvalidTime(_) => "time",
        Error::InvalidNoise(_) => "noise",
        Error::ObstacleAboveInitial { .. } | Error::InvalidObstacle(_) => "obstacle",
        Error::DimensionMismatch { what, .. } if what.contains("initial") => "initial",
        Error::DimensionMismatch { what, .. } if what.contains("obstacle") => "obstacle",
        Error::NonFinite { what, .. } if what.contains("initial") => "initial",
        Error::NonFinite { what, .. } if what.contains("obstacle") => "obstacle",
        _ => "coefficients",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> Value {
        json!({
            "grid": {"dimension": 1, "extents": [1.0], "cells": [8]},
            "time": {"horizon": 0.1, "dt": 0.01},
            "noise": {"terms": 1, "seeds": [0, 1]},
            "initial": {"kind": "constant", "value": 0.5}
        })
    }

    #[test]
    fn minimal_document_builds() {
        let c = RunConfig::from_value(&minimal()).unwrap();
        assert_eq!(c.seeds(), vec![0, 1]);
        assert_eq!(c.check_params().n, 1e4);
        let p = c.problem(false).unwrap();
        assert_eq!(p.time().steps(), 10);
        assert!(p.initial().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn unknown_keys_name_their_block() {
        let mut doc = minimal();
        doc["time"]["step"] = json!(0.1);
        let e = RunConfig::from_value(&doc).unwrap_err();
        assert_eq!(e.block, "time");
        let mut doc = minimal();
        doc["plots"] = json!({});
        assert_eq!(RunConfig::from_value(&doc).unwrap_err().block, "document");
        let mut doc = minimal();
        doc["coefficients"] = json!({"f": {"kind": "cubic"}});
        assert_eq!(RunConfig::from_value(&doc).unwrap_err().block, "coefficients");
    }

    #[test]
    fn horizon_must_be_a_multiple_of_dt() {
        let mut doc = minimal();
        doc["time"]["dt"] = json!(0.03);
        assert_eq!(RunConfig::from_value(&doc).unwrap_err().block, "time");
    }

    #[test]
    fn contraction_failure_is_a_coefficients_error() {
        let mut doc = minimal();
        doc["coefficients"] = json!({"constants": {"C": 0.0, "alpha": 1.0, "beta": 1.0, "theta": 0.0}});
        let c = RunConfig::from_value(&doc).unwrap();
        let e = c.problem(false).unwrap_err();
        assert_eq!(e.block, "coefficients");
        assert!(e.to_string().contains("contraction property"));
        assert!(c.problem(true).is_ok());
    }

    #[test]
    fn check_requirements() {
        let mut doc = minimal();
        doc["checks"] = json!({"names": ["apriori-linear"], "pairs": 10});
        assert_eq!(RunConfig::from_value(&doc).unwrap_err().block, "checks");
        doc["checks"] = json!({"names": ["comparison-obstacle"]});
        assert_eq!(RunConfig::from_value(&doc).unwrap_err().block, "checks");
        doc["checks"] = json!({"names": ["energy"]});
        assert_eq!(RunConfig::from_value(&doc).unwrap_err().block, "checks");
    }

    #[test]
    fn upper_problem_is_shifted() {
        let mut doc = minimal();
        doc["obstacle"] = json!({"mode": "static", "profile": {"kind": "constant", "value": 0.0}});
        doc["checks"] = json!({"comparison": {"initial": 0.25, "obstacle": 0.1}});
        let c = RunConfig::from_value(&doc).unwrap();
        let (lo, hi) = (c.problem(false).unwrap(), c.upper_problem(false).unwrap());
        assert!(hi.initial().iter().zip(lo.initial()).all(|(a, b)| a - b == 0.25));
        assert_eq!(hi.obstacle().initial().unwrap()[0], 0.1);
        assert!(hi.coefficients().f.same_as(&lo.coefficients().f));
    }

    #[test]
    fn seed_count_expands() {
        let mut doc = minimal();
        doc["noise"] = json!({"terms": 2, "seed_count": 3, "base_seed": 10});
        assert_eq!(RunConfig::from_value(&doc).unwrap().seeds(), vec![10, 11, 12]);
    }
}
