//! Ito energy ledger for `Phi(u) = sum_i Phi(u_i) vol`.
//!
//! All stochastic and time integrals are left-point sums on the solver's own
//! lattice, so the residual carries the scheme's time discretization error
//! and shrinks under refinement. For `Phi(y) = y^2` the exact one-step
//! identity of the implicit scheme is also assembled (`scheme_defect`),
//! which vanishes up to rounding at any resolution.

use std::sync::Arc;

use serde::Serialize;

use super::{median, nested, par_seeds, solve_for_checks, Bound, CheckParams, CheckReport};
use crate::error::{Error, Result};
use crate::linear::{path_handle, FieldTrajectory, StepData};
use crate::noise::SamplePath;
use crate::obstacle::RegularMeasure;
use crate::problem::ProblemSpec;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Phi {
    /// `y^2`.
    Square,
    /// `sqrt(1 + y^2)`.
    SmoothAbs,
    /// `log cosh y`.
    LogCosh,
    /// User function with its first two derivatives and a declared bound on
    /// `|Phi''|`, probed before use.
    Custom {
        name: String,
        value: ScalarFn,
        first: ScalarFn,
        second: ScalarFn,
        second_bound: f64,
    },
}

impl std::fmt::Debug for Phi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl Phi {
    pub fn name(&self) -> &str {
        match self {
            Phi::Square => "square",
            Phi::SmoothAbs => "smooth-abs",
            Phi::LogCosh => "log-cosh",
            Phi::Custom { name, .. } => name,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "square" => Ok(Phi::Square),
            "smooth-abs" => Ok(Phi::SmoothAbs),
            "log-cosh" => Ok(Phi::LogCosh),
            other => Err(Error::InvalidArgument(format!("unknown Phi `{other}`"))),
        }
    }

    pub fn custom(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        first: impl Fn(f64) -> f64 + Send + Sync + 'static,
        second: impl Fn(f64) -> f64 + Send + Sync + 'static,
        second_bound: f64,
    ) -> Result<Self> {
        let phi = Phi::Custom {
            name: name.into(),
            value: Arc::new(value),
            first: Arc::new(first),
            second: Arc::new(second),
            second_bound,
        };
        phi.validate()?;
        Ok(phi)
    }

    /// Rejects a custom `Phi` whose second derivative exceeds its declared
    /// bound (or is not finite) on `|y| <= 1e6`.
    pub fn validate(&self) -> Result<()> {
        let Phi::Custom { name, second, second_bound, .. } = self else { return Ok(()) };
        if !(second_bound.is_finite() && *second_bound >= 0.0) {
            return Err(Error::InvalidArgument(format!("Phi `{name}` needs a finite bound on its second derivative")));
        }
        for e in -6..=6 {
            for m in [1.0, 2.5, 5.0] {
                for sign in [-1.0, 1.0] {
                    let y = sign * m * 10f64.powi(e);
                    let v = second(y);
                    if !v.is_finite() || v.abs() > second_bound * (1.0 + 1e-12) {
                        return Err(Error::InvalidArgument(format!(
                            "Phi `{name}` has unbounded second derivative: |Phi''({y})| = {} > {second_bound}",
                            v.abs()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, y: f64) -> f64 {
        match self {
            Phi::Square => y * y,
            Phi::SmoothAbs => (1.0 + y * y).sqrt(),
            Phi::LogCosh => y.abs() + (-2.0 * y.abs()).exp().ln_1p() - std::f64::consts::LN_2,
            Phi::Custom { value, .. } => value(y),
        }
    }

    pub fn first(&self, y: f64) -> f64 {
        match self {
            Phi::Square => 2.0 * y,
            Phi::SmoothAbs => y / (1.0 + y * y).sqrt(),
            Phi::LogCosh => y.tanh(),
            Phi::Custom { first, .. } => first(y),
        }
    }

    pub fn second(&self, y: f64) -> f64 {
        match self {
            Phi::Square => 2.0,
            Phi::SmoothAbs => (1.0 + y * y).powf(-1.5),
            Phi::LogCosh => 1.0 - y.tanh().powi(2),
            Phi::Custom { second, .. } => second(y),
        }
    }
}

/// Terms of step `k`, signed as they enter the residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerRow {
    pub k: usize,
    pub t: f64,
    pub phi: f64,
    pub energy: f64,
    pub forcing: f64,
    pub flux: f64,
    pub boundary: f64,
    pub noise: f64,
    pub correction: f64,
    pub measure: f64,
}

impl LedgerRow {
    fn total(&self) -> f64 {
        self.energy + self.forcing + self.flux + self.boundary + self.noise + self.correction + self.measure
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItoLedger {
    pub phi: String,
    pub rows: Vec<LedgerRow>,
    /// `Phi(u_K) - Phi(xi) + sum of rows`.
    pub residual: f64,
    /// Same with the measure term dropped.
    pub residual_without_measure: f64,
    /// Exact discrete identity for `Phi(y) = y^2` (`None` otherwise).
    pub scheme_defect: Option<f64>,
}

impl ItoLedger {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,t,phi,energy,forcing,flux,boundary,noise,correction,measure\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.k, r.t, r.phi, r.energy, r.forcing, r.flux, r.boundary, r.noise, r.correction, r.measure
            ));
        }
        out
    }
}

fn phi_integral(phi: &Phi, u: &[f64], vol: f64) -> f64 {
    u.iter().map(|v| phi.value(*v)).sum::<f64>() * vol
}

/// Assembles the ledger of `traj` (and `measure` if the run had an
/// obstacle) against the coefficients of `spec` on `path`.
pub fn ito_ledger(
    spec: &ProblemSpec,
    traj: &FieldTrajectory,
    measure: Option<&RegularMeasure>,
    path: &SamplePath,
    phi: &Phi,
) -> Result<ItoLedger> {
    phi.validate()?;
    let op = spec.operator();
    let grid = op.grid();
    let vol = grid.cell_volume();
    let dt = traj.dt();
    let handle = path_handle(path);
    if traj.steps() != path.steps() {
        return Err(Error::InvalidArgument("trajectory and path have different step counts".into()));
    }
    let mut rows = Vec::with_capacity(traj.steps());
    let mut defect = 0.0;
    for k in 0..traj.steps() {
        let u = traj.field(k);
        let next = traj.field(k + 1);
        let data = StepData::evaluate(spec.coefficients(), grid, dt * k as f64, u, handle);
        let d1: Vec<f64> = u.iter().map(|v| phi.first(*v)).collect();
        let d2: Vec<f64> = u.iter().map(|v| phi.second(*v)).collect();
        let increments = path.row(k);
        let noise: f64 = data.h.iter().zip(increments).map(|(h, db)| grid.inner(&d1, h) * db).sum();
        let correction: f64 = data
            .h
            .iter()
            .map(|h| h.iter().zip(&d2).map(|(hv, p)| hv * hv * p).sum::<f64>() * vol)
            .sum::<f64>()
            * 0.5
            * dt;
        let boundary: f64 = grid
            .boundary_nodes()
            .iter()
            .zip(grid.surface_weights())
            .zip(&data.l)
            .map(|((node, w), l)| d1[*node] * l * w)
            .sum();
        let nu_term = measure.map_or(0.0, |m| m.row(k).iter().zip(next).map(|(nu, v)| phi.first(*v) * nu).sum());
        rows.push(LedgerRow {
            k,
            t: dt * k as f64,
            phi: phi_integral(phi, u, vol),
            energy: op.energy_unchecked(&d1, u) * dt,
            forcing: -grid.inner(&d1, &data.f) * dt,
            flux: grid.grad_pairing(&d1, &data.g) * dt,
            boundary: -boundary * dt,
            noise: -noise,
            correction: -correction,
            measure: -nu_term,
        });

        if matches!(phi, Phi::Square) {
            let h_incr = data.noise(increments, u.len());
            let drift = data.drift(grid);
            let jump: Vec<f64> = next.iter().zip(u).zip(&h_incr).map(|((a, b), h)| a - b - h).collect();
            let nu_exact = measure.map_or(0.0, |m| m.row(k).iter().zip(next).map(|(nu, v)| v * nu).sum());
            let rhs = -2.0 * dt * op.energy(next) + 2.0 * dt * grid.inner(next, &drift) - grid.norm_sq(&jump)
                + 2.0 * grid.inner(u, &h_incr)
                + grid.norm_sq(&h_incr)
                + 2.0 * nu_exact;
            defect += grid.norm_sq(next) - grid.norm_sq(u) - rhs;
        }
    }
    let start = phi_integral(phi, traj.field(0), vol);
    let end = phi_integral(phi, traj.last(), vol);
    let sum: f64 = rows.iter().map(LedgerRow::total).sum();
    let measure_sum: f64 = rows.iter().map(|r| r.measure).sum();
    let residual = end - start + sum;
    Ok(ItoLedger {
        phi: phi.name().to_string(),
        rows,
        residual,
        residual_without_measure: residual - measure_sum,
        scheme_defect: matches!(phi, Phi::Square).then_some(defect),
    })
}

/// Ledger residuals at `dt, dt/2, ...` on nested paths for each seed.
/// Passes when the median ratio `|R(dt)| / |R(dt/2)|` is at least 1.3.
pub fn check_ito_identity(spec: &ProblemSpec, phi: &Phi, params: &CheckParams) -> Result<CheckReport> {
    phi.validate()?;
    let levels = params.levels.max(2);
    let per_seed = par_seeds(&params.seeds, |seed| {
        nested(spec, seed, levels)?
            .iter()
            .map(|(s, p)| {
                let (traj, measure, _) = solve_for_checks(s, p, params.n)?;
                ito_ledger(s, &traj, measure.as_ref(), p, phi)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let ratios: Vec<f64> = per_seed.iter().map(|l| l[0].residual.abs() / l[1].residual.abs()).collect();
    let decreasing = per_seed.iter().filter(|l| l[1].residual.abs() < l[0].residual.abs()).count();
    let ablation = per_seed.iter().filter(|l| l[0].residual_without_measure.abs() > l[0].residual.abs()).count();
    let defect = per_seed
        .iter()
        .flatten()
        .filter_map(|l| l.scheme_defect)
        .fold(0.0f64, |m, d| m.max(d.abs()));
    let dt = spec.time().dt();
    let trend = (0..levels).map(|l| {
        let r: Vec<f64> = per_seed.iter().map(|s| s[l].residual.abs()).collect();
        (dt / (1 << l) as f64, median(&r))
    });
    Ok(CheckReport::new(format!("ito-identity/{}", phi.name()), median(&ratios), 1.3, Bound::AtLeast)
        .with_trend("dt", trend.collect::<Vec<_>>())
        .with_paths(params.seeds.len(), params.seeds.clone())
        .detail("seeds_decreasing", decreasing as f64)
        .detail("seeds_ablation_worse", ablation as f64)
        .detail("max_scheme_defect", defect))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{Coefficient, CoefficientSet};
    use crate::grid::{assemble_operator, build_grid, EllipticCoefficients};
    use crate::linear::solve;
    use crate::noise::sample_path;
    use crate::obstacle::solve_penalized;
    use crate::problem::{Obstacle, TimeGrid};
    use std::f64::consts::PI;

    fn spec_1d(c: CoefficientSet, xi: impl Fn(f64) -> f64, o: Obstacle, dt: f64, steps: usize) -> ProblemSpec {
        let g = build_grid(1, &[1.0], &[16]).unwrap();
        let op = Arc::new(assemble_operator(&g, &EllipticCoefficients::isotropic(&g, 1.0).unwrap()).unwrap());
        let xi = g.sample(|x| xi(x[0]));
        ProblemSpec::builder(op, TimeGrid::new(dt, steps).unwrap())
            .coefficients(c)
            .initial(xi)
            .obstacle(o)
            .noise_terms(2)
            .build()
            .unwrap()
    }

    #[test]
    fn zero_data_identity_is_exact() {
        let s = spec_1d(CoefficientSet::zero(1), |x| (PI * x).cos() + x * x, Obstacle::None, 0.01, 100);
        let p = sample_path(1, 2, 0.01, 100).unwrap();
        let u = solve(&s, &p).unwrap();
        let l = ito_ledger(&s, &u, None, &p, &Phi::Square).unwrap();
        assert!(l.scheme_defect.unwrap().abs() <= 1e-10);
        assert!(l.rows.iter().all(|r| r.noise == 0.0 && r.forcing == 0.0 && r.measure == 0.0));
    }

    #[test]
    fn full_data_identity_is_exact() {
        let c = CoefficientSet::zero(1)
            .with_f(Coefficient::from_fn("f", |p| 0.3 * p.y.sin() - 0.5))
            .with_g(vec![Coefficient::from_fn("g", |p| 0.2 * p.x[0] + 0.1 * p.y)])
            .with_h(vec![Coefficient::constant(0.4), Coefficient::from_fn("h", |p| 0.2 * p.y)])
            .with_l(Coefficient::from_fn("l", |p| 0.3 - 0.1 * p.y));
        let s_field = (0..16).map(|i| ((i as f64 + 0.5) / 16.0).min(0.3)).collect();
        let s = spec_1d(c, |x| x, Obstacle::Static(s_field), 0.01, 100);
        let p = sample_path(4, 2, 0.01, 100).unwrap();
        let sol = solve_penalized(&s, &p, 100.0).unwrap();
        let l = ito_ledger(&s, &sol.trajectory, Some(&sol.measure), &p, &Phi::Square).unwrap();
        assert!(sol.measure.total_mass() > 0.0);
        assert!(l.scheme_defect.unwrap().abs() <= 1e-10, "{:?}", l.scheme_defect);
    }

    #[test]
    fn smooth_phi_derivatives_match_differences() {
        for phi in [Phi::SmoothAbs, Phi::LogCosh] {
            for y in [-3.0, -0.2, 0.0, 0.7, 5.0] {
                let h = 1e-5;
                let d1 = (phi.value(y + h) - phi.value(y - h)) / (2.0 * h);
                let d2 = (phi.first(y + h) - phi.first(y - h)) / (2.0 * h);
                assert!((d1 - phi.first(y)).abs() < 1e-8);
                assert!((d2 - phi.second(y)).abs() < 1e-8);
            }
        }
        assert!(Phi::LogCosh.value(800.0).is_finite());
    }

    #[test]
    fn unbounded_phi_rejected() {
        let cube = Phi::custom("cube", |y| y * y * y, |y| 3.0 * y * y, |y| 6.0 * y, 100.0);
        assert!(cube.is_err());
        let ok = Phi::custom("sin", |y| y.sin(), |y| y.cos(), |y| -y.sin(), 1.0);
        assert!(ok.is_ok());
        assert!(Phi::from_name("square").is_ok());
        assert!(Phi::from_name("quartic").is_err());
    }

    #[test]
    fn residual_shrinks_under_refinement() {
        let c = CoefficientSet::zero(1).with_h(vec![Coefficient::constant(0.1)]);
        let s = spec_1d(c, |x| (PI * x).cos(), Obstacle::None, 0.01, 100);
        let params = CheckParams { seeds: (0..10).collect(), ..CheckParams::default() };
        let r = check_ito_identity(&s, &Phi::Square, &params).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.details["max_scheme_defect"] <= 1e-10);
        assert_eq!(r.trend.len(), 3);
    }
}
