//! Semi-implicit stepping of the SPDE without obstacle, and the
//! matrix-exponential mild-solution oracle.
//!
//! One step solves
//! `(I - dt L) u_{k+1} = u_k + dt (f_k + div g_k + b_k) + sum_j h_{j,k} dB^j_k`
//! with every coefficient evaluated at `(t_k, u_k, grad u_k)` and the
//! boundary data `b_k = (l_k sigma - g_k.n) / vol` on boundary cells.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::banded::{BandedSpd, CholeskyBand};
use crate::coefficients::{eval_boundary, eval_cells, CoefficientSet, PathHandle};
use crate::error::{Error, Result};
use crate::grid::{DiscreteOperator, SpatialGrid};
use crate::noise::SamplePath;
use crate::problem::ProblemSpec;

/// Largest grid accepted by the dense oracle.
pub const ORACLE_MAX_NODES: usize = 200;

/// Nodal fields `u_0, ..., u_K` of one sample path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldTrajectory {
    dt: f64,
    seed: u64,
    antithetic: bool,
    fields: Vec<Vec<f64>>,
}

impl FieldTrajectory {
    pub fn new(dt: f64, seed: u64, antithetic: bool, fields: Vec<Vec<f64>>) -> Self {
        Self { dt, seed, antithetic, fields }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_antithetic(&self) -> bool {
        self.antithetic
    }

    pub fn steps(&self) -> usize {
        self.fields.len() - 1
    }

    pub fn nodes(&self) -> usize {
        self.fields[0].len()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.dt * k as f64
    }

    pub fn field(&self, k: usize) -> &[f64] {
        &self.fields[k]
    }

    pub fn fields(&self) -> &[Vec<f64>] {
        &self.fields
    }

    pub fn last(&self) -> &[f64] {
        self.fields.last().expect("trajectory has at least one field")
    }

    /// Cell gradients of `u_k`, reconstructed on demand.
    pub fn gradient(&self, grid: &SpatialGrid, k: usize) -> Vec<f64> {
        grid.gradient(&self.fields[k])
    }

    /// `max_{k,i} |u_{k,i} - v_{k,i}|`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.fields
            .iter()
            .zip(&other.fields)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Every `factor`-th field, as if solved on a coarser time grid.
    pub fn subsample(&self, factor: usize) -> Self {
        Self {
            dt: self.dt * factor as f64,
            fields: self.fields.iter().step_by(factor.max(1)).cloned().collect(),
            ..self.clone()
        }
    }

    /// `t,node_0,...,node_{N-1}` with one row per time level.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 0..self.nodes() {
            out.push_str(&format!(",node_{i}"));
        }
        out.push('\n');
        for (k, u) in self.fields.iter().enumerate() {
            out.push_str(&format!("{}", self.time(k)));
            for v in u {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Opaque handle coefficients see for the current sample path.
pub fn path_handle(path: &SamplePath) -> PathHandle {
    PathHandle(if path.is_antithetic() { !path.seed() } else { path.seed() })
}

/// Coefficient values at one time level.
#[derive(Debug, Clone)]
pub(crate) struct StepData {
    pub f: Vec<f64>,
    /// `len * d`, row per cell.
    pub g: Vec<f64>,
    pub h: Vec<Vec<f64>>,
    /// On boundary nodes.
    pub l: Vec<f64>,
}

impl StepData {
    pub fn evaluate(c: &CoefficientSet, grid: &SpatialGrid, t: f64, state: &[f64], handle: PathHandle) -> Self {
        let d = grid.dimension();
        let n = grid.len();
        let grad = grid.gradient(state);
        let f = if c.f.is_zero() { vec![0.0; n] } else { eval_cells(&c.f, grid, t, state, &grad, handle) };
        let mut g = vec![0.0; n * d];
        for (axis, gc) in c.g.iter().enumerate() {
            if gc.is_zero() {
                continue;
            }
            for (i, v) in eval_cells(gc, grid, t, state, &grad, handle).into_iter().enumerate() {
                g[i * d + axis] = v;
            }
        }
        let h = c
            .h
            .iter()
            .map(|hc| if hc.is_zero() { vec![0.0; n] } else { eval_cells(hc, grid, t, state, &grad, handle) })
            .collect();
        let l = if c.l.is_zero() {
            vec![0.0; grid.boundary_nodes().len()]
        } else {
            eval_boundary(&c.l, grid, t, state, handle)
        };
        Self { f, g, h, l }
    }

    /// Deterministic forcing `f + div g + b` per unit time.
    pub fn drift(&self, grid: &SpatialGrid) -> Vec<f64> {
        let mut out = self.f.clone();
        if self.g.iter().any(|v| *v != 0.0) {
            for (o, v) in out.iter_mut().zip(grid.divergence(&self.g)) {
                *o += v;
            }
            let vol = grid.cell_volume();
            for (slot, flux) in grid.boundary_normal_flux(&self.g).into_iter().enumerate() {
                out[grid.boundary_nodes()[slot]] -= flux / vol;
            }
        }
        if self.l.iter().any(|v| *v != 0.0) {
            let vol = grid.cell_volume();
            for ((node, w), l) in grid.boundary_nodes().iter().zip(grid.surface_weights()).zip(&self.l) {
                out[*node] += l * w / vol;
            }
        }
        out
    }

    /// `sum_j h_j dB^j`.
    pub fn noise(&self, increments: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (h, db) in self.h.iter().zip(increments) {
            for (o, v) in out.iter_mut().zip(h) {
                *o += v * db;
            }
        }
        out
    }

    /// Explicit part of the step: `u_k + dt * drift + noise`.
    pub fn rhs(&self, grid: &SpatialGrid, u_k: &[f64], dt: f64, increments: &[f64]) -> Vec<f64> {
        let drift = self.drift(grid);
        let noise = self.noise(increments, u_k.len());
        u_k.iter().zip(drift).zip(noise).map(|((u, a), b)| u + dt * a + b).collect()
    }
}

pub(crate) fn check_path(spec: &ProblemSpec, path: &SamplePath) -> Result<()> {
    let time = spec.time();
    if path.steps() != time.steps() || (path.dt() - time.dt()).abs() > 1e-12 * time.dt() {
        return Err(Error::InvalidNoise(format!(
            "path has {} steps of {} but the problem uses {} steps of {}",
            path.steps(),
            path.dt(),
            time.steps(),
            time.dt()
        )));
    }
    if path.terms() < spec.coefficients().h.len() {
        return Err(Error::InvalidNoise(format!(
            "path has {} Brownian components, h needs {}",
            path.terms(),
            spec.coefficients().h.len()
        )));
    }
    Ok(())
}

pub(crate) fn factor_step(op: &DiscreteOperator, dt: f64) -> Result<CholeskyBand> {
    BandedSpd::shifted(op, dt, None).factor()
}

/// Solves `(I - dt L) u = rhs` after shifting by the constant `rhs[0]`,
/// which the matrix maps to itself; constant data is then reproduced
/// bit for bit.
pub(crate) fn solve_step(chol: &CholeskyBand, rhs: &[f64]) -> Vec<f64> {
    let Some(&c) = rhs.first() else { return Vec::new() };
    let shifted: Vec<f64> = rhs.iter().map(|v| v - c).collect();
    chol.solve(&shifted).into_iter().map(|v| v + c).collect()
}

pub(crate) fn reject_non_finite(u: &[f64], step: usize) -> Result<()> {
    match u.iter().position(|v| !v.is_finite()) {
        Some(node) => Err(Error::StepRejected { step, node }),
        None => Ok(()),
    }
}

/// Integrates `coefficients` from `initial`, evaluating them at `frozen[k]`
/// when given and at the current iterate otherwise.
pub(crate) fn integrate(
    op: &DiscreteOperator,
    chol: &CholeskyBand,
    coefficients: &CoefficientSet,
    initial: &[f64],
    path: &SamplePath,
    frozen: Option<&[Vec<f64>]>,
) -> Result<Vec<Vec<f64>>> {
    let grid = op.grid();
    let dt = path.dt();
    let handle = path_handle(path);
    let mut fields = Vec::with_capacity(path.steps() + 1);
    fields.push(initial.to_vec());
    for k in 0..path.steps() {
        let u_k = &fields[k];
        let state = frozen.map_or(u_k.as_slice(), |f| f[k].as_slice());
        let data = StepData::evaluate(coefficients, grid, dt * k as f64, state, handle);
        let rhs = data.rhs(grid, u_k, dt, path.row(k));
        let next = solve_step(chol, &rhs);
        reject_non_finite(&next, k)?;
        fields.push(next);
    }
    Ok(fields)
}

/// Advances `u_k` by one semi-implicit step on `path`.
pub fn step(u_k: &[f64], spec: &ProblemSpec, path: &SamplePath, k: usize) -> Result<Vec<f64>> {
    check_path(spec, path)?;
    let op = spec.operator();
    if u_k.len() != op.len() {
        return Err(Error::DimensionMismatch { what: "u_k", expected: op.len(), got: u_k.len() });
    }
    if k >= path.steps() {
        return Err(Error::InvalidArgument(format!("step {k} beyond the last step {}", path.steps() - 1)));
    }
    let dt = path.dt();
    let data = StepData::evaluate(spec.coefficients(), op.grid(), dt * k as f64, u_k, path_handle(path));
    let next = solve_step(&factor_step(op, dt)?, &data.rhs(op.grid(), u_k, dt, path.row(k)));
    reject_non_finite(&next, k)?;
    Ok(next)
}

/// Full trajectory of the equation without obstacle.
pub fn solve(spec: &ProblemSpec, path: &SamplePath) -> Result<FieldTrajectory> {
    check_path(spec, path)?;
    let op = spec.operator();
    let chol = factor_step(op, path.dt())?;
    let fields = integrate(op, &chol, spec.coefficients(), spec.initial(), path, None)?;
    Ok(FieldTrajectory::new(path.dt(), path.seed(), path.is_antithetic(), fields))
}

/// Both problems on the same increments. They must share the operator, the
/// time grid, `g` and `h`.
pub fn solve_spde_pair(
    spec: &ProblemSpec,
    other: &ProblemSpec,
    path: &SamplePath,
) -> Result<(FieldTrajectory, FieldTrajectory)> {
    check_shared(spec, other)?;
    Ok((solve(spec, path)?, solve(other, path)?))
}

pub(crate) fn check_shared(a: &ProblemSpec, b: &ProblemSpec) -> Result<()> {
    if !same_operator(a.operator(), b.operator()) {
        return Err(Error::Hypothesis("the two problems use different operators".into()));
    }
    if a.time() != b.time() {
        return Err(Error::Hypothesis("the two problems use different time grids".into()));
    }
    let (ca, cb) = (a.coefficients(), b.coefficients());
    if ca.g.len() != cb.g.len() || ca.g.iter().zip(&cb.g).any(|(x, y)| !x.same_as(y)) {
        return Err(Error::Hypothesis("g must be shared".into()));
    }
    let j = ca.h.len().max(cb.h.len());
    for idx in 0..j {
        let same = match (ca.h.get(idx), cb.h.get(idx)) {
            (Some(x), Some(y)) => x.same_as(y),
            (Some(x), None) | (None, Some(x)) => x.is_zero(),
            (None, None) => true,
        };
        if !same {
            return Err(Error::Hypothesis(format!("h component {idx} must be shared")));
        }
    }
    Ok(())
}

fn same_operator(a: &DiscreteOperator, b: &DiscreteOperator) -> bool {
    std::ptr::eq(a, b)
        || (a.len() == b.len()
            && a.grid().extents() == b.grid().extents()
            && a.grid().cells_per_axis() == b.grid().cells_per_axis()
            && a.face_weights() == b.face_weights()
            && a.diagonal() == b.diagonal())
}

/// `u_{k+1} = e^{dt L} (u_k + f_k dt + sum_j h_{j,k} dB^j_k)`: the mild
/// formula with left-point Riemann and Ito sums and the semigroup computed
/// as a dense matrix exponential.
pub fn mild_oracle(spec: &ProblemSpec, path: &SamplePath) -> Result<FieldTrajectory> {
    check_path(spec, path)?;
    let op = spec.operator();
    let c = spec.coefficients();
    if op.len() > ORACLE_MAX_NODES {
        return Err(Error::OracleUnsupported(format!("at most {ORACLE_MAX_NODES} nodes, got {}", op.len())));
    }
    if !c.f.is_state_free() || c.h.iter().any(|h| !h.is_state_free()) {
        return Err(Error::OracleUnsupported("f and h independent of the state".into()));
    }
    if c.g.iter().any(|g| !g.is_zero()) || !c.l.is_zero() {
        return Err(Error::OracleUnsupported("g = 0 and l = 0".into()));
    }
    let grid = op.grid();
    let dt = path.dt();
    let semigroup: DMatrix<f64> = (op.to_dense() * dt).exp();
    let handle = path_handle(path);
    let mut fields = Vec::with_capacity(path.steps() + 1);
    fields.push(spec.initial().to_vec());
    for k in 0..path.steps() {
        let data = StepData::evaluate(c, grid, dt * k as f64, &fields[k], handle);
        let noise = data.noise(path.row(k), grid.len());
        let w = DVector::from_iterator(
            grid.len(),
            fields[k].iter().zip(&data.f).zip(&noise).map(|((u, f), h)| u + f * dt + h),
        );
        let next: Vec<f64> = (&semigroup * w).iter().copied().collect();
        reject_non_finite(&next, k)?;
        fields.push(next);
    }
    Ok(FieldTrajectory::new(dt, path.seed(), path.is_antithetic(), fields))
}
