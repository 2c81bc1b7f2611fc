//! Penalized obstacle solver.
//!
//! Each step solves `(I - dt L) u = r + dt n (S - u)^+` for the new level,
//! with `r` the explicit part of the linear step and `S` the obstacle at the
//! new time level. The piecewise-linear system is solved exactly by an
//! active-set Newton iteration; the deposited penalty is recorded as the
//! discrete reflection measure `nu`.

use serde::{Deserialize, Serialize};

use crate::banded::{BandedSpd, CholeskyBand};
use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::grid::{DiscreteOperator, SpatialGrid};
use crate::linear::{check_path, factor_step, path_handle, reject_non_finite, solve, solve_step, FieldTrajectory, StepData};
use crate::noise::SamplePath;
use crate::problem::{Obstacle, ProblemSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub n_schedule: Vec<f64>,
    pub picard_tol: f64,
    pub picard_max_iterations: usize,
    pub inner_tol: f64,
    pub inner_max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            n_schedule: vec![1e1, 1e2, 1e3, 1e4],
            picard_tol: 1e-8,
            picard_max_iterations: 100,
            inner_tol: 1e-10,
            inner_max_sweeps: 50,
        }
    }
}

impl SolverOptions {
    pub fn with_schedule(n_schedule: Vec<f64>) -> Self {
        Self { n_schedule, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_schedule.is_empty() {
            return Err(Error::InvalidArgument("n_schedule is empty".into()));
        }
        if self.n_schedule.iter().any(|n| !(*n > 0.0 && n.is_finite())) {
            return Err(Error::InvalidArgument("penalization levels must be positive".into()));
        }
        if self.n_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("n_schedule must be strictly increasing".into()));
        }
        if !(self.picard_tol > 0.0) || !(self.inner_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if self.picard_max_iterations == 0 || self.inner_max_sweeps == 0 {
            return Err(Error::InvalidArgument("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// Nonnegative masses `nu_{k,i}` deposited during step `k -> k+1` in cell `i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularMeasure {
    steps: usize,
    cells: usize,
    dt: f64,
    masses: Vec<f64>,
}

impl RegularMeasure {
    pub fn zero(steps: usize, cells: usize, dt: f64) -> Self {
        Self { steps, cells, dt, masses: vec![0.0; steps * cells] }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.masses[k * self.cells + i]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.masses[k * self.cells..(k + 1) * self.cells]
    }

    fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.masses[k * self.cells..(k + 1) * self.cells]
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn min_entry(&self) -> f64 {
        self.masses.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Nonzero entries as `k,i,t,x[,y],nu`.
    pub fn to_csv(&self, grid: &SpatialGrid) -> String {
        let mut out = String::from(if grid.dimension() == 1 { "k,i,t,x,nu\n" } else { "k,i,t,x,y,nu\n" });
        for k in 0..self.steps {
            for (i, nu) in self.row(k).iter().enumerate() {
                if *nu == 0.0 {
                    continue;
                }
                out.push_str(&format!("{k},{i},{}", self.dt * k as f64));
                for c in grid.center(i) {
                    out.push_str(&format!(",{c}"));
                }
                out.push_str(&format!(",{nu}\n"));
            }
        }
        out
    }
}

/// Diagnostics of one penalization level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PenaltyLevel {
    pub n: f64,
    pub picard_iterations: usize,
    pub picard_gap: f64,
    pub total_mass: f64,
    pub skorokhod_gap: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObstacleSolution {
    pub trajectory: FieldTrajectory,
    pub measure: RegularMeasure,
    /// `S_0, ..., S_K`; `None` without obstacle.
    #[serde(skip)]
    pub obstacle: Option<Vec<Vec<f64>>>,
    pub n: f64,
    pub picard_iterations: usize,
    pub picard_gap: f64,
    pub levels: Vec<PenaltyLevel>,
}

impl ObstacleSolution {
    pub fn skorokhod_gap(&self) -> f64 {
        match &self.obstacle {
            Some(s) => skorokhod_gap(&self.trajectory, &self.measure, s),
            None => 0.0,
        }
    }

    pub fn max_violation(&self) -> f64 {
        self.obstacle.as_ref().map_or(0.0, |s| max_violation(&self.trajectory, s))
    }
}

/// The obstacle on the time lattice of `spec`, or `None` without one.
pub fn build_obstacle(spec: &ProblemSpec, path: &SamplePath) -> Result<Option<Vec<Vec<f64>>>> {
    let levels = spec.time().steps() + 1;
    let s = match spec.obstacle() {
        Obstacle::None => return Ok(None),
        Obstacle::Static(s) => vec![s.clone(); levels],
        Obstacle::Trajectory(t) => t.clone(),
        Obstacle::Driven(d) => {
            let driver = driving_problem(spec)?.expect("driven obstacle has a driving problem");
            let s_prime = solve(&driver, path)?;
            s_prime.fields().iter().map(|f| f.iter().map(|v| v + d.offset).collect()).collect()
        }
    };
    for (node, (s0, x)) in s[0].iter().zip(spec.initial()).enumerate() {
        if s0 > x {
            return Err(Error::ObstacleAboveInitial { node, obstacle: *s0, initial: *x });
        }
    }
    Ok(Some(s))
}

/// The linear problem whose solution dominates a driven obstacle.
pub fn driving_problem(spec: &ProblemSpec) -> Result<Option<ProblemSpec>> {
    let Obstacle::Driven(d) = spec.obstacle() else { return Ok(None) };
    ProblemSpec::builder(spec.operator_arc().clone(), spec.time())
        .coefficients(d.coefficients.clone())
        .initial(d.initial.clone())
        .noise_terms(spec.noise_terms())
        .force(spec.is_forced())
        .build()
        .map(Some)
}

/// Solves `(I - dt L) u = rhs + dt n (s - u)^+` exactly by active-set
/// Newton starting from the unconstrained solution. Returns `u` and the
/// penalty density `n (s - u)^+`.
pub(crate) fn penalized_solve(
    op: &DiscreteOperator,
    base: &CholeskyBand,
    dt: f64,
    rhs: &[f64],
    s: &[f64],
    n: f64,
    step: usize,
    options: &SolverOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let len = rhs.len();
    let mut u = solve_step(base, rhs);
    let scale = rhs
        .iter()
        .chain(s.iter())
        .fold(1.0f64, |m, v| m.max(v.abs()))
        * (1.0 + dt * n);
    let residual = |u: &[f64]| -> f64 {
        let lu = op.apply(u);
        (0..len)
            .map(|i| (u[i] - dt * lu[i] - rhs[i] - dt * n * (s[i] - u[i]).max(0.0)).abs())
            .fold(0.0, f64::max)
    };
    let mut res = residual(&u);
    let mut sweeps = 0;
    while res > options.inner_tol * scale {
        if sweeps == options.inner_max_sweeps {
            return Err(Error::InnerNonConvergence { step, sweeps, residual: res });
        }
        sweeps += 1;
        let extra: Vec<f64> = (0..len).map(|i| if u[i] < s[i] { dt * n } else { 0.0 }).collect();
        let b: Vec<f64> = (0..len).map(|i| rhs[i] + extra[i] * s[i]).collect();
        u = BandedSpd::shifted(op, dt, Some(&extra)).factor()?.solve(&b);
        reject_non_finite(&u, step)?;
        res = residual(&u);
    }
    let density = (0..len).map(|i| n * (s[i] - u[i]).max(0.0)).collect();
    Ok((u, density))
}

/// One penalized step from `u_k` with coefficients evaluated at `u_k`;
/// `s_next` is the obstacle at the new level. Returns `u_{k+1}` and the
/// measure row `nu_{k,i} = n (S_{k+1,i} - u_{k+1,i})^+ dt vol`.
pub fn penalized_step(
    u_k: &[f64],
    s_next: &[f64],
    n: f64,
    spec: &ProblemSpec,
    path: &SamplePath,
    k: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_path(spec, path)?;
    let op = spec.operator();
    if u_k.len() != op.len() || s_next.len() != op.len() {
        return Err(Error::DimensionMismatch { what: "step fields", expected: op.len(), got: u_k.len().min(s_next.len()) });
    }
    if !(n > 0.0) {
        return Err(Error::InvalidArgument(format!("penalization level must be positive, got {n}")));
    }
    if k >= path.steps() {
        return Err(Error::InvalidArgument(format!("step {k} beyond the last step {}", path.steps() - 1)));
    }
    let dt = path.dt();
    let data = StepData::evaluate(spec.coefficients(), op.grid(), dt * k as f64, u_k, path_handle(path));
    let rhs = data.rhs(op.grid(), u_k, dt, path.row(k));
    let base = factor_step(op, dt)?;
    let (u, density) = penalized_solve(op, &base, dt, &rhs, s_next, n, k, &SolverOptions::default())?;
    let w = dt * op.grid().cell_volume();
    Ok((u, density.into_iter().map(|p| p * w).collect()))
}

struct Pass {
    fields: Vec<Vec<f64>>,
    measure: RegularMeasure,
}

#[allow(clippy::too_many_arguments)]
fn penalized_pass(
    op: &DiscreteOperator,
    base: &CholeskyBand,
    coefficients: &CoefficientSet,
    initial: &[f64],
    path: &SamplePath,
    frozen: Option<&[Vec<f64>]>,
    obstacle: Option<&[Vec<f64>]>,
    n: f64,
    options: &SolverOptions,
) -> Result<Pass> {
    let grid = op.grid();
    let dt = path.dt();
    let handle = path_handle(path);
    let w = dt * grid.cell_volume();
    let mut measure = RegularMeasure::zero(path.steps(), grid.len(), dt);
    let mut fields = Vec::with_capacity(path.steps() + 1);
    fields.push(initial.to_vec());
    for k in 0..path.steps() {
        let u_k = &fields[k];
        let state = frozen.map_or(u_k.as_slice(), |f| f[k].as_slice());
        let data = StepData::evaluate(coefficients, grid, dt * k as f64, state, handle);
        let rhs = data.rhs(grid, u_k, dt, path.row(k));
        let next = match obstacle {
            Some(s) => {
                let (u, density) = penalized_solve(op, base, dt, &rhs, &s[k + 1], n, k, options)?;
                for (m, p) in measure.row_mut(k).iter_mut().zip(density) {
                    *m = p * w;
                }
                u
            }
            None => solve_step(base, &rhs),
        };
        reject_non_finite(&next, k)?;
        fields.push(next);
    }
    Ok(Pass { fields, measure })
}

fn sup_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Picard iteration at a fixed penalization level, starting from `guess`.
fn picard(
    spec: &ProblemSpec,
    base: &CholeskyBand,
    path: &SamplePath,
    obstacle: Option<&[Vec<f64>]>,
    n: f64,
    guess: Vec<Vec<f64>>,
    options: &SolverOptions,
) -> Result<(Pass, usize, f64)> {
    let op = spec.operator();
    let c = spec.coefficients();
    if c.is_state_free() {
        let pass = penalized_pass(op, base, c, spec.initial(), path, None, obstacle, n, options)?;
        return Ok((pass, 1, 0.0));
    }
    let mut iterate = guess;
    let mut gaps: Vec<f64> = Vec::new();
    for m in 1..=options.picard_max_iterations {
        let pass = penalized_pass(op, base, c, spec.initial(), path, Some(&iterate), obstacle, n, options)?;
        let gap = sup_gap(&pass.fields, &iterate);
        gaps.push(gap);
        if gap <= options.picard_tol {
            // the fixed point evaluates coefficients on its own trajectory
            let live = penalized_pass(op, base, c, spec.initial(), path, None, obstacle, n, options)?;
            let gap = gap.max(sup_gap(&live.fields, &pass.fields));
            return Ok((live, m, gap));
        }
        let growing = gaps.len() >= 4 && gaps[gaps.len() - 4..].windows(2).all(|w| w[1] > w[0]);
        if growing || !gap.is_finite() {
            return Err(Error::PicardDivergence {
                n,
                iterations: m,
                gaps,
                margin: spec.contraction().margin,
            });
        }
        iterate = pass.fields;
    }
    Err(Error::PicardNotConverged {
        n,
        iterations: options.picard_max_iterations,
        gap: *gaps.last().unwrap_or(&f64::NAN),
        tol: options.picard_tol,
    })
}

/// Penalized solution along `options.n_schedule`, warm-starting each
/// level's Picard iteration from the previous one. The returned trajectory
/// and measure belong to the last level.
pub fn solve_obstacle(spec: &ProblemSpec, path: &SamplePath, options: &SolverOptions) -> Result<ObstacleSolution> {
    options.validate()?;
    check_path(spec, path)?;
    let obstacle = build_obstacle(spec, path)?;
    let op = spec.operator();
    let base = factor_step(op, path.dt())?;
    let mut guess = vec![spec.initial().to_vec(); path.steps() + 1];
    let mut levels = Vec::with_capacity(options.n_schedule.len());
    let mut last = None;
    for &n in &options.n_schedule {
        let (pass, iterations, gap) = picard(spec, &base, path, obstacle.as_deref(), n, guess, options)?;
        let trajectory = FieldTrajectory::new(path.dt(), path.seed(), path.is_antithetic(), pass.fields);
        let (skorokhod, violation) = match &obstacle {
            Some(s) => (skorokhod_gap(&trajectory, &pass.measure, s), max_violation(&trajectory, s)),
            None => (0.0, 0.0),
        };
        levels.push(PenaltyLevel {
            n,
            picard_iterations: iterations,
            picard_gap: gap,
            total_mass: pass.measure.total_mass(),
            skorokhod_gap: skorokhod,
            max_violation: violation,
        });
        guess = trajectory.fields().to_vec();
        last = Some((trajectory, pass.measure, n, iterations, gap));
    }
    let (trajectory, measure, n, picard_iterations, picard_gap) = last.expect("schedule is not empty");
    Ok(ObstacleSolution { trajectory, measure, obstacle, n, picard_iterations, picard_gap, levels })
}

/// Single penalization level `n`.
pub fn solve_penalized(spec: &ProblemSpec, path: &SamplePath, n: f64) -> Result<ObstacleSolution> {
    solve_obstacle(spec, path, &SolverOptions::with_schedule(vec![n]))
}

/// `G = sum_{k,i} (u_{k,i} - S_{k,i})^+ nu_{k,i}` with `nu_k` the mass of
/// step `k -> k+1`.
pub fn skorokhod_gap(u: &FieldTrajectory, measure: &RegularMeasure, s: &[Vec<f64>]) -> f64 {
    (0..measure.steps())
        .map(|k| {
            u.field(k)
                .iter()
                .zip(&s[k])
                .zip(measure.row(k))
                .map(|((u, s), nu)| (u - s).max(0.0) * nu)
                .sum::<f64>()
        })
        .sum()
}

/// `max_{k,i} (S_{k,i} - u_{k,i})^+`.
pub fn max_violation(u: &FieldTrajectory, s: &[Vec<f64>]) -> f64 {
    u.fields()
        .iter()
        .zip(s)
        .flat_map(|(u, s)| u.iter().zip(s).map(|(a, b)| (b - a).max(0.0)))
        .fold(0.0, f64::max)
}

/// Penalized approximations `v^n` of the reflected potential of `u`:
/// `(I - dt L) v_{k+1} = v_k + dt n (u_{k+1} - v_{k+1})^+`, `v_0 = u0_plus`.
#[derive(Debug, Clone)]
pub struct ReflectedPotential {
    pub levels: Vec<(f64, FieldTrajectory)>,
}

impl ReflectedPotential {
    /// The approximation at the largest `n`.
    pub fn kappa(&self) -> &FieldTrajectory {
        &self.levels.last().expect("schedule is not empty").1
    }
}

pub fn reflected_potential(
    op: &DiscreteOperator,
    u: &FieldTrajectory,
    u0_plus: &[f64],
    n_schedule: &[f64],
) -> Result<ReflectedPotential> {
    let options = SolverOptions::with_schedule(n_schedule.to_vec());
    options.validate()?;
    if u0_plus.len() != op.len() || u.nodes() != op.len() {
        return Err(Error::DimensionMismatch { what: "reflected potential data", expected: op.len(), got: u0_plus.len() });
    }
    if let Some(i) = u0_plus.iter().position(|v| *v < 0.0) {
        return Err(Error::InvalidArgument(format!("initial value must be nonnegative, node {i} is {}", u0_plus[i])));
    }
    let dt = u.dt();
    let base = factor_step(op, dt)?;
    let mut levels = Vec::with_capacity(n_schedule.len());
    for &n in n_schedule {
        let mut fields = Vec::with_capacity(u.steps() + 1);
        fields.push(u0_plus.to_vec());
        for k in 0..u.steps() {
            let (v, _) = penalized_solve(op, &base, dt, &fields[k], u.field(k + 1), n, k, &options)?;
            fields.push(v);
        }
        levels.push((n, FieldTrajectory::new(dt, u.seed(), u.is_antithetic(), fields)));
    }
    Ok(ReflectedPotential { levels })
}
