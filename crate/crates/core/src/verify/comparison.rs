//! Pathwise comparison of two problems driven by the same noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{par_seeds, Bound, CheckParams, CheckReport};
use crate::coefficients::{Coefficient, PathHandle, Point};
use crate::error::{Error, Result};
use crate::linear::{check_shared, solve};
use crate::noise::SamplePath;
use crate::obstacle::{build_obstacle, solve_penalized};
use crate::problem::ProblemSpec;

/// Pass threshold for `max (u1 - u2)^+`.
pub const COMPARISON_TOLERANCE: f64 = 1e-7;
const ORDER_PROBES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComparisonMode {
    /// Both problems solved without obstacle.
    Linear,
    /// Both problems solved with their obstacles at penalization level `n`.
    Obstacle,
}

/// `a <= b` on randomized arguments. `boundary` evaluates without gradient.
fn ordered(name: &str, a: &Coefficient, b: &Coefficient, spec: &ProblemSpec, boundary: bool) -> Result<()> {
    if a.same_as(b) {
        return Ok(());
    }
    let grid = spec.operator().grid();
    let d = grid.dimension();
    let horizon = spec.time().horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..ORDER_PROBES {
        let t = rng.random_range(0.0..=horizon);
        let cell = if boundary {
            grid.boundary_nodes()[rng.random_range(0..grid.boundary_nodes().len())]
        } else {
            rng.random_range(0..grid.len())
        };
        let y = rng.random_range(-5.0..5.0);
        let z: Vec<f64> = if boundary { Vec::new() } else { (0..d).map(|_| rng.random_range(-5.0..5.0)).collect() };
        let path = PathHandle(rng.random());
        let p = Point { t, x: grid.center(cell), y, z: &z, path };
        let (va, vb) = (a.eval(&p), b.eval(&p));
        if va > vb + 1e-12 {
            return Err(Error::Hypothesis(format!(
                "{name} is not ordered: {va} > {vb} at t = {t}, cell {cell}, y = {y}"
            )));
        }
    }
    Ok(())
}

fn check_hypotheses(lower: &ProblemSpec, upper: &ProblemSpec, mode: ComparisonMode) -> Result<()> {
    check_shared(lower, upper)?;
    if let Some(i) = lower.initial().iter().zip(upper.initial()).position(|(a, b)| a > b) {
        return Err(Error::Hypothesis(format!("initial data not ordered at node {i}")));
    }
    ordered("f", &lower.coefficients().f, &upper.coefficients().f, lower, false)?;
    ordered("l", &lower.coefficients().l, &upper.coefficients().l, lower, true)?;
    if mode == ComparisonMode::Obstacle && (lower.obstacle().is_none() || upper.obstacle().is_none()) {
        return Err(Error::Hypothesis("obstacle comparison needs an obstacle in both problems".into()));
    }
    Ok(())
}

fn solve_one(spec: &ProblemSpec, path: &SamplePath, mode: ComparisonMode, n: f64) -> Result<Vec<Vec<f64>>> {
    Ok(match mode {
        ComparisonMode::Linear => solve(spec, path)?.fields().to_vec(),
        ComparisonMode::Obstacle => solve_penalized(spec, path, n)?.trajectory.fields().to_vec(),
    })
}

/// `max (u1 - u2)^+` over seeds, steps and nodes. The ordering hypotheses
/// (shared `g`, `h`; `xi1 <= xi2`, `f1 <= f2`, `l1 <= l2`; in obstacle mode
/// `S1 <= S2` on every path) are checked first and reject the comparison.
pub fn check_comparison(
    lower: &ProblemSpec,
    upper: &ProblemSpec,
    mode: ComparisonMode,
    params: &CheckParams,
) -> Result<CheckReport> {
    check_hypotheses(lower, upper, mode)?;
    let terms = lower.noise_terms().max(upper.noise_terms());
    let time = lower.time();
    let violations = par_seeds(&params.seeds, |seed| {
        let path = SamplePath::generate(seed, terms, time.dt(), time.steps())?;
        if mode == ComparisonMode::Obstacle {
            let (s1, s2) = (build_obstacle(lower, &path)?, build_obstacle(upper, &path)?);
            if let (Some(s1), Some(s2)) = (s1, s2) {
                let bad = s1.iter().zip(&s2).any(|(a, b)| a.iter().zip(b).any(|(x, y)| x > y));
                if bad {
                    return Err(Error::Hypothesis(format!("obstacles not ordered on path {seed}")));
                }
            }
        }
        let u1 = solve_one(lower, &path, mode, params.n)?;
        let u2 = solve_one(upper, &path, mode, params.n)?;
        Ok(u1
            .iter()
            .zip(&u2)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).max(0.0)))
            .fold(0.0, f64::max))
    })?;
    let worst = violations.iter().copied().fold(0.0, f64::max);
    let count = violations.iter().filter(|v| **v > COMPARISON_TOLERANCE).count();
    let name = match mode {
        ComparisonMode::Linear => "comparison-linear",
        ComparisonMode::Obstacle => "comparison-obstacle",
    };
    Ok(CheckReport::new(name, worst, COMPARISON_TOLERANCE, Bound::AtMost)
        .with_paths(params.seeds.len(), params.seeds.clone())
        .detail("violating_paths", count as f64))
}
