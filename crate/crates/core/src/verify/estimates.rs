//! Monte Carlo ratios `E[LHS] / E[RHS]` of the a priori estimates, compared
//! across one time-step halving.
//!
//! `LHS = sup_k ||v_k||^2 + sum_{k<K} E(v_k) dt` for the estimated field `v`;
//! `RHS` collects the initial data and the time-integrated squared norms of
//! the coefficients at zero state.

use rayon::prelude::*;
use serde::Serialize;

use super::{nested, Bound, CheckParams, CheckReport};
use crate::error::{Error, Result};
use crate::grid::DiscreteOperator;
use crate::linear::{path_handle, solve, FieldTrajectory};
use crate::noise::SamplePath;
use crate::obstacle::{driving_problem, reflected_potential};
use crate::problem::{coefficient_norms, ProblemSpec};

/// Smallest number of paths (two per antithetic pair) an estimate runs on.
pub const MIN_PATHS: usize = 100;
/// Allowed relative change of the ratio under one halving of `dt`.
pub const STABILITY_TOLERANCE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateKind {
    /// The solution of the equation without obstacle.
    Linear,
    /// The linear process driving the obstacle.
    Driver,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateSample {
    pub lhs: f64,
    pub rhs: f64,
}

fn energy_norm(op: &DiscreteOperator, v: &FieldTrajectory) -> f64 {
    let grid = op.grid();
    let sup = v.fields().iter().map(|u| grid.norm_sq(u)).fold(0.0, f64::max);
    let energy: f64 = v.fields()[..v.steps()].iter().map(|u| op.energy(u)).sum::<f64>() * v.dt();
    sup + energy
}

fn ratio(samples: &[EstimateSample]) -> f64 {
    let lhs: f64 = samples.iter().map(|s| s.lhs).sum();
    let rhs: f64 = samples.iter().map(|s| s.rhs).sum();
    if lhs == 0.0 && rhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    }
}

/// Standard error of the mean LHS, treating each antithetic pair as one draw.
fn pair_stderr(samples: &[EstimateSample]) -> f64 {
    let pairs: Vec<f64> = samples.chunks(2).map(|c| c.iter().map(|s| s.lhs).sum::<f64>() / c.len() as f64).collect();
    let m = pairs.len() as f64;
    if pairs.len() < 2 {
        return 0.0;
    }
    let mean = pairs.iter().sum::<f64>() / m;
    (pairs.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt()
}

/// Samples at `dt` and `dt/2` for every antithetic pair of paths.
fn sample_levels(
    spec: &ProblemSpec,
    params: &CheckParams,
    sample: impl Fn(&ProblemSpec, &SamplePath) -> Result<EstimateSample> + Sync,
) -> Result<[Vec<EstimateSample>; 2]> {
    if 2 * params.pairs < MIN_PATHS {
        return Err(Error::InvalidArgument(format!(
            "estimates need at least {MIN_PATHS} paths, got {} antithetic pairs",
            params.pairs
        )));
    }
    let base = params.seeds.first().copied().unwrap_or(0);
    let per_pair: Vec<[EstimateSample; 4]> = (0..params.pairs as u64)
        .into_par_iter()
        .map(|p| {
            let levels = nested(spec, base.wrapping_add(p), 2)?;
            let (coarse, fine) = (&levels[0], &levels[1]);
            Ok([
                sample(&coarse.0, &coarse.1)?,
                sample(&coarse.0, &coarse.1.antithetic())?,
                sample(&fine.0, &fine.1)?,
                sample(&fine.0, &fine.1.antithetic())?,
            ])
        })
        .collect::<Result<_>>()?;
    let coarse = per_pair.iter().flat_map(|s| [s[0], s[1]]).collect();
    let fine = per_pair.iter().flat_map(|s| [s[2], s[3]]).collect();
    Ok([coarse, fine])
}

fn report(name: &str, spec: &ProblemSpec, params: &CheckParams, levels: [Vec<EstimateSample>; 2]) -> CheckReport {
    let (c0, c1) = (ratio(&levels[0]), ratio(&levels[1]));
    let change = if c0 == 0.0 && c1 == 0.0 { 0.0 } else { (c1 / c0 - 1.0).abs() };
    let measured = if c0.is_finite() && c1.is_finite() { change } else { f64::INFINITY };
    let dt = spec.time().dt();
    let mean = |s: &[EstimateSample], f: fn(&EstimateSample) -> f64| s.iter().map(f).sum::<f64>() / s.len() as f64;
    let base = params.seeds.first().copied().unwrap_or(0);
    CheckReport::new(name, measured, STABILITY_TOLERANCE, Bound::AtMost)
        .with_trend("dt", [(dt, c0), (0.5 * dt, c1)])
        .with_paths(levels[0].len(), (0..params.pairs as u64).map(|p| base.wrapping_add(p)).collect())
        .detail("ratio", c0)
        .detail("ratio_refined", c1)
        .detail("lhs_mean", mean(&levels[0], |s| s.lhs))
        .detail("rhs_mean", mean(&levels[0], |s| s.rhs))
        .detail("lhs_stderr", pair_stderr(&levels[0]))
}

/// Estimate for the solution without obstacle or for the obstacle driver.
pub fn check_apriori_estimate(spec: &ProblemSpec, kind: EstimateKind, params: &CheckParams) -> Result<CheckReport> {
    let (target, name) = match kind {
        EstimateKind::Linear => (spec.clone(), "apriori-linear"),
        EstimateKind::Driver => (
            driving_problem(spec)?
                .ok_or_else(|| Error::InvalidArgument("the problem has no driven obstacle".into()))?,
            "apriori-driver",
        ),
    };
    let levels = sample_levels(&target, params, |s, p| {
        let u = solve(s, p)?;
        let norms = coefficient_norms(s.coefficients(), s.operator(), s.time(), path_handle(p))?;
        Ok(EstimateSample {
            lhs: energy_norm(s.operator(), &u),
            rhs: s.operator().grid().norm_sq(s.initial()) + norms.total(),
        })
    })?;
    Ok(report(name, spec, params, levels))
}

/// Estimate for the reflected potential of the solution without obstacle,
/// started from the positive part of the initial datum, at level `params.n`.
/// Also records `max (u - kappa)^+` over all runs.
pub fn check_kappa_estimate(spec: &ProblemSpec, params: &CheckParams) -> Result<CheckReport> {
    let leak = std::sync::Mutex::new(0.0f64);
    let levels = sample_levels(spec, params, |s, p| {
        let u = solve(s, p)?;
        let plus: Vec<f64> = s.initial().iter().map(|v| v.max(0.0)).collect();
        let potential = reflected_potential(s.operator(), &u, &plus, &[params.n])?;
        let kappa = potential.kappa();
        let excess = crate::obstacle::max_violation(kappa, u.fields());
        let mut l = leak.lock().expect("leak accumulator");
        *l = l.max(excess);
        drop(l);
        let grid = s.operator().grid();
        let norms = coefficient_norms(s.coefficients(), s.operator(), s.time(), path_handle(p))?;
        Ok(EstimateSample {
            lhs: energy_norm(s.operator(), kappa),
            rhs: grid.norm_sq(&plus) + grid.norm_sq(s.initial()) + norms.total(),
        })
    })?;
    let leak = *leak.lock().expect("leak accumulator");
    Ok(report("kappa-estimate", spec, params, levels).detail("max_domination_defect", leak))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{Coefficient, CoefficientSet};
    use crate::grid::{assemble_operator, build_grid, EllipticCoefficients};
    use crate::problem::TimeGrid;
    use std::sync::Arc;

    fn spec_1d(c: CoefficientSet, xi: impl Fn(f64) -> f64) -> ProblemSpec {
        let g = build_grid(1, &[1.0], &[12]).unwrap();
        let op = Arc::new(assemble_operator(&g, &EllipticCoefficients::isotropic(&g, 1.0).unwrap()).unwrap());
        let xi = g.sample(|x| xi(x[0]));
        ProblemSpec::builder(op, TimeGrid::new(0.02, 25).unwrap())
            .coefficients(c)
            .initial(xi)
            .noise_terms(1)
            .build()
            .unwrap()
    }

    fn params() -> CheckParams {
        CheckParams { pairs: 50, ..CheckParams::default() }
    }

    #[test]
    fn zero_data_passes_by_convention() {
        let r = check_apriori_estimate(&spec_1d(CoefficientSet::zero(1), |_| 0.0), EstimateKind::Linear, &params()).unwrap();
        assert!(r.passed());
        assert_eq!(r.details["ratio"], 0.0);
    }

    #[test]
    fn initial_datum_only_and_homogeneity() {
        let a = check_apriori_estimate(&spec_1d(CoefficientSet::zero(1), |x| x), EstimateKind::Linear, &params()).unwrap();
        let b = check_apriori_estimate(&spec_1d(CoefficientSet::zero(1), |x| 2.0 * x), EstimateKind::Linear, &params())
            .unwrap();
        assert!(a.passed());
        assert!(a.details["ratio"] > 0.0 && a.details["ratio"].is_finite());
        assert!((a.details["ratio"] - b.details["ratio"]).abs() < 1e-12);
        assert!((b.details["lhs_mean"] / a.details["lhs_mean"] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_paths_rejected() {
        let p = CheckParams { pairs: 10, ..CheckParams::default() };
        assert!(check_apriori_estimate(&spec_1d(CoefficientSet::zero(1), |_| 0.0), EstimateKind::Linear, &p).is_err());
        assert!(check_apriori_estimate(&spec_1d(CoefficientSet::zero(1), |_| 0.0), EstimateKind::Driver, &params()).is_err());
    }

    #[test]
    fn kappa_scales_quadratically() {
        let c = |s: f64| {
            CoefficientSet::zero(1).with_f(Coefficient::constant(-s)).with_h(vec![Coefficient::constant(0.5 * s)])
        };
        let p = CheckParams { n: 100.0, ..params() };
        let a = check_kappa_estimate(&spec_1d(c(1.0), |x| x - 0.3), &p).unwrap();
        let b = check_kappa_estimate(&spec_1d(c(2.0), |x| 2.0 * (x - 0.3)), &p).unwrap();
        assert!(a.passed(), "{a:?}");
        assert!((b.details["lhs_mean"] / a.details["lhs_mean"] - 4.0).abs() < 1e-6);
        assert!((b.details["ratio"] / a.details["ratio"] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn kappa_of_zero_is_zero() {
        let r = check_kappa_estimate(&spec_1d(CoefficientSet::zero(1), |_| 0.0), &params()).unwrap();
        assert_eq!(r.details["lhs_mean"], 0.0);
        assert!(r.passed());
    }
}
