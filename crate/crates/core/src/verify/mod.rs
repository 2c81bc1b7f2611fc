//! Property checks on solved trajectories: energy ledgers, weak-form
//! residuals, a priori estimate ratios and comparison.
//!
//! Every check is deterministic given its seeds. Refinement studies draw
//! the finest path once and sum its increments down to the coarser grids,
//! so all resolutions see the same Brownian trajectory.

mod comparison;
mod estimates;
mod ledger;
mod weak_form;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

pub use comparison::{check_comparison, ComparisonMode};
pub use estimates::{check_apriori_estimate, check_kappa_estimate, EstimateKind, EstimateSample, MIN_PATHS, STABILITY_TOLERANCE};
pub use ledger::{check_ito_identity, ito_ledger, ItoLedger, LedgerRow, Phi};
pub use weak_form::{check_weak_form, weak_form_residual, TestFunction, TimeProfile, WeakFormResidual};

use crate::error::{Error, Result};
use crate::linear::{solve, FieldTrajectory};
use crate::noise::SamplePath;
use crate::obstacle::{solve_penalized, RegularMeasure};
use crate::problem::ProblemSpec;

/// Names accepted by [`run_named_check`] and the command line.
pub const CHECK_NAMES: &[&str] = &[
    "ito-identity",
    "weak-form",
    "apriori-linear",
    "apriori-driver",
    "kappa-estimate",
    "comparison-linear",
    "comparison-obstacle",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Direction in which `measured` is compared with `tolerance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendPoint {
    /// Refinement parameter: `dt` or `n`.
    pub parameter: &'static str,
    pub value: f64,
    pub measured: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub verdict: Verdict,
    pub measured: f64,
    pub tolerance: f64,
    pub bound: Bound,
    /// Nonnegative exactly when the check passes.
    pub margin: f64,
    pub trend: Vec<TrendPoint>,
    pub paths: usize,
    pub seeds: Vec<u64>,
    pub details: BTreeMap<String, f64>,
}

impl CheckReport {
    pub fn new(check: impl Into<String>, measured: f64, tolerance: f64, bound: Bound) -> Self {
        let margin = match bound {
            Bound::AtMost => tolerance - measured,
            Bound::AtLeast => measured - tolerance,
        };
        let verdict = if margin >= 0.0 { Verdict::Pass } else { Verdict::Fail };
        Self {
            check: check.into(),
            verdict,
            measured,
            tolerance,
            bound,
            margin,
            trend: Vec::new(),
            paths: 0,
            seeds: Vec::new(),
            details: BTreeMap::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// Forces a failure (the margin is kept as measured).
    pub fn fail(mut self) -> Self {
        self.verdict = Verdict::Fail;
        self
    }

    pub fn with_trend(mut self, parameter: &'static str, points: impl IntoIterator<Item = (f64, f64)>) -> Self {
        self.trend = points.into_iter().map(|(value, measured)| TrendPoint { parameter, value, measured }).collect();
        self
    }

    pub fn with_paths(mut self, paths: usize, seeds: Vec<u64>) -> Self {
        self.paths = paths;
        self.seeds = seeds;
        self
    }

    pub fn detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }
}

/// Shared knobs of the multi-resolution checks.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckParams {
    pub seeds: Vec<u64>,
    /// Number of time resolutions `dt, dt/2, ...`.
    pub levels: usize,
    /// Penalization level used for obstacle problems.
    pub n: f64,
    /// Antithetic pairs for Monte Carlo estimates.
    pub pairs: usize,
}

impl Default for CheckParams {
    fn default() -> Self {
        Self { seeds: (0..20).collect(), levels: 3, n: 1e3, pairs: 100 }
    }
}

/// Trajectory, measure and penalty-level fields of one solve.
pub type Realization = (FieldTrajectory, Option<RegularMeasure>, Option<Vec<Vec<f64>>>);

/// Solution of `spec` on `path`: the linear solve without obstacle, the
/// penalized solve at level `n` otherwise.
pub fn solve_for_checks(
    spec: &ProblemSpec,
    path: &SamplePath,
    n: f64,
) -> Result<Realization> {
    if spec.obstacle().is_none() {
        Ok((solve(spec, path)?, None, None))
    } else {
        let sol = solve_penalized(spec, path, n)?;
        Ok((sol.trajectory, Some(sol.measure), sol.obstacle))
    }
}

/// `spec` refined by `2^l` for `l = 0..levels`, each with the matching
/// coarsening of one finest path.
pub(crate) fn nested(spec: &ProblemSpec, seed: u64, levels: usize) -> Result<Vec<(ProblemSpec, SamplePath)>> {
    if levels == 0 {
        return Err(Error::InvalidArgument("at least one resolution level is needed".into()));
    }
    let finest_factor = 1usize << (levels - 1);
    let finest = spec.refined(finest_factor)?;
    let fine_path = SamplePath::generate(seed, spec.noise_terms(), finest.time().dt(), finest.time().steps())?;
    (0..levels)
        .map(|l| {
            let s = if l == 0 { spec.clone() } else { spec.refined(1 << l)? };
            let p = fine_path.coarsen(finest_factor >> l)?;
            Ok((s, p))
        })
        .collect()
}

pub(crate) fn par_seeds<T: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    seeds.par_iter().map(|s| f(*s)).collect()
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) }
}

/// Runs a check by its command-line name with default test functions and
/// the given parameters. Comparison checks need a second problem and are
/// handled by the caller.
pub fn run_named_check(name: &str, spec: &ProblemSpec, params: &CheckParams) -> Result<CheckReport> {
    match name {
        "ito-identity" => check_ito_identity(spec, &Phi::Square, params),
        "weak-form" => check_weak_form(spec, &TestFunction::library(spec.operator().grid(), spec.time().horizon()), params),
        "apriori-linear" => check_apriori_estimate(spec, EstimateKind::Linear, params),
        "apriori-driver" => check_apriori_estimate(spec, EstimateKind::Driver, params),
        "kappa-estimate" => check_kappa_estimate(spec, params),
        other => Err(Error::InvalidArgument(format!(
            "unknown check `{other}` (known: {})",
            CHECK_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_follows_margin() {
        assert!(CheckReport::new("a", 1.0, 2.0, Bound::AtMost).passed());
        assert!(!CheckReport::new("a", 3.0, 2.0, Bound::AtMost).passed());
        assert!(CheckReport::new("a", 3.0, 2.0, Bound::AtLeast).passed());
        assert!(!CheckReport::new("a", f64::NAN, 2.0, Bound::AtLeast).passed());
        assert!(!CheckReport::new("a", 0.0, 0.0, Bound::AtMost).fail().passed());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
