//! Problem data: operator, coefficients, initial datum, obstacle and time
//! lattice, validated against the integrability and contraction
//! requirements before any solve.

use std::sync::Arc;

use serde::Serialize;

use crate::coefficients::{
    eval_boundary, eval_cells, validate_contraction, CoefficientSet, ContractionVerdict, PathHandle,
};
use crate::error::{Error, Result};
use crate::grid::{trace_norm_estimate, DiscreteOperator};

/// Default required contraction margin before a solve is allowed.
pub const DEFAULT_SAFETY_MARGIN: f64 = 0.05;
/// Random fields sampled for the trace-norm estimate.
pub const TRACE_TRIALS: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidTime(format!("time step must be positive, got {dt}")));
        }
        if steps == 0 {
            return Err(Error::InvalidTime("need at least one step".into()));
        }
        Ok(Self { dt, steps })
    }

    /// Requires `horizon / dt` to be an integer up to a relative 1e-12.
    pub fn from_horizon(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidTime(format!("horizon must be positive, got {horizon}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidTime(format!("time step must be positive, got {dt}")));
        }
        let ratio = horizon / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-12 * ratio.max(1.0) || steps < 1.0 {
            return Err(Error::InvalidTime(format!(
                "horizon {horizon} is not an integer multiple of dt {dt} (ratio {ratio})"
            )));
        }
        Self::new(dt, steps as usize)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.dt * k as f64
    }

    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidTime("refinement factor must be positive".into()));
        }
        Self::new(self.dt / factor as f64, self.steps * factor)
    }
}

/// Driving linear SPDE for the obstacle: `S = S' + offset` with `S'`
/// solving the state-free equation with coefficients `coefficients` from
/// `initial` on the same noise path.
#[derive(Debug, Clone)]
pub struct DrivenObstacle {
    pub coefficients: CoefficientSet,
    pub initial: Vec<f64>,
    /// Must be `<= 0` so that `S <= S'`.
    pub offset: f64,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Obstacle {
    None,
    /// Time-independent nodal field.
    Static(Vec<f64>),
    /// One nodal field per time level `0..=steps`.
    Trajectory(Vec<Vec<f64>>),
    Driven(DrivenObstacle),
}

impl Obstacle {
    pub fn is_none(&self) -> bool {
        matches!(self, Obstacle::None)
    }

    /// Obstacle at time zero, when it does not require a solve.
    pub fn initial(&self) -> Option<Vec<f64>> {
        match self {
            Obstacle::None => None,
            Obstacle::Static(s) => Some(s.clone()),
            Obstacle::Trajectory(t) => t.first().cloned(),
            Obstacle::Driven(d) => Some(d.initial.iter().map(|s| s + d.offset).collect()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    operator: Arc<DiscreteOperator>,
    coefficients: CoefficientSet,
    initial: Vec<f64>,
    obstacle: Obstacle,
    time: TimeGrid,
    noise_terms: usize,
    safety_margin: f64,
    forced: bool,
    contraction: ContractionVerdict,
}

pub struct ProblemSpecBuilder {
    operator: Arc<DiscreteOperator>,
    time: TimeGrid,
    coefficients: Option<CoefficientSet>,
    initial: Option<Vec<f64>>,
    obstacle: Obstacle,
    noise_terms: usize,
    safety_margin: f64,
    force: bool,
}

impl ProblemSpecBuilder {
    pub fn coefficients(mut self, c: CoefficientSet) -> Self {
        self.coefficients = Some(c);
        self
    }

    pub fn initial(mut self, xi: Vec<f64>) -> Self {
        self.initial = Some(xi);
        self
    }

    pub fn obstacle(mut self, o: Obstacle) -> Self {
        self.obstacle = o;
        self
    }

    pub fn noise_terms(mut self, j: usize) -> Self {
        self.noise_terms = j;
        self
    }

    pub fn safety_margin(mut self, m: f64) -> Self {
        self.safety_margin = m;
        self
    }

    /// Skip the contraction gate (the verdict is still computed and kept).
    pub fn force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn build(self) -> Result<ProblemSpec> {
        let d = self.operator.grid().dimension();
        let n = self.operator.len();
        let coefficients = self.coefficients.unwrap_or_else(|| CoefficientSet::zero(d));
        let initial = self.initial.unwrap_or_else(|| vec![0.0; n]);
        let trace = if coefficients.constants.theta > 0.0 {
            trace_norm_estimate(&self.operator, TRACE_TRIALS, 0)
        } else {
            0.0
        };
        let contraction = validate_contraction(&coefficients.constants, self.operator.lambda(), trace)?;
        let spec = ProblemSpec {
            operator: self.operator,
            coefficients,
            initial,
            obstacle: self.obstacle,
            time: self.time,
            noise_terms: self.noise_terms,
            safety_margin: self.safety_margin,
            forced: self.force,
            contraction,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl ProblemSpec {
    pub fn builder(operator: Arc<DiscreteOperator>, time: TimeGrid) -> ProblemSpecBuilder {
        ProblemSpecBuilder {
            operator,
            time,
            coefficients: None,
            initial: None,
            obstacle: Obstacle::None,
            noise_terms: 0,
            safety_margin: DEFAULT_SAFETY_MARGIN,
            force: false,
        }
    }

    fn validate(&self) -> Result<()> {
        let grid = self.operator.grid();
        let n = grid.len();
        let len_check = |what: &'static str, got: usize| {
            if got != n {
                Err(Error::DimensionMismatch { what, expected: n, got })
            } else {
                Ok(())
            }
        };
        len_check("initial datum", self.initial.len())?;
        if let Some(i) = self.initial.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "initial datum".into(), t: 0.0, node: i });
        }
        check_set_shape(&self.coefficients, grid.dimension(), self.noise_terms)?;
        for c in self.coefficients.all_coefficients() {
            if let Some(b) = c.builtin() {
                b.validate()?;
            }
        }

        match &self.obstacle {
            Obstacle::None => {}
            Obstacle::Static(s) => len_check("obstacle", s.len())?,
            Obstacle::Trajectory(levels) => {
                if levels.len() != self.time.steps() + 1 {
                    return Err(Error::InvalidObstacle(format!(
                        "obstacle trajectory has {} levels, expected {}",
                        levels.len(),
                        self.time.steps() + 1
                    )));
                }
                for l in levels {
                    len_check("obstacle level", l.len())?;
                }
            }
            Obstacle::Driven(d) => {
                len_check("driving obstacle initial datum", d.initial.len())?;
                if !(d.offset <= 0.0) {
                    return Err(Error::InvalidObstacle(format!(
                        "obstacle offset must be <= 0 so that S <= S', got {}",
                        d.offset
                    )));
                }
                check_set_shape(&d.coefficients, grid.dimension(), self.noise_terms)?;
                if !d.coefficients.is_state_free() {
                    return Err(Error::InvalidObstacle(
                        "the driving equation is linear: its coefficients must not depend on the state".into(),
                    ));
                }
            }
        }
        if let Some(s0) = self.obstacle.initial() {
            for (node, (s, x)) in s0.iter().zip(&self.initial).enumerate() {
                if s > x {
                    return Err(Error::ObstacleAboveInitial { node, obstacle: *s, initial: *x });
                }
            }
        }

        if !self.forced && !(self.contraction.margin > self.safety_margin) {
            return Err(Error::Contraction {
                lhs: self.contraction.lhs,
                rhs: self.contraction.rhs,
                margin: self.contraction.margin,
                required: self.safety_margin,
            });
        }
        Ok(())
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.operator
    }

    pub fn operator_arc(&self) -> &Arc<DiscreteOperator> {
        &self.operator
    }

    pub fn coefficients(&self) -> &CoefficientSet {
        &self.coefficients
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn obstacle(&self) -> &Obstacle {
        &self.obstacle
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    pub fn noise_terms(&self) -> usize {
        self.noise_terms
    }

    pub fn contraction(&self) -> ContractionVerdict {
        self.contraction
    }

    pub fn safety_margin(&self) -> f64 {
        self.safety_margin
    }

    pub fn is_forced(&self) -> bool {
        self.forced
    }

    fn revalidated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn with_initial(&self, xi: Vec<f64>) -> Result<Self> {
        Self { initial: xi, ..self.clone() }.revalidated()
    }

    pub fn with_coefficients(&self, c: CoefficientSet) -> Result<Self> {
        let trace = if c.constants.theta > 0.0 {
            trace_norm_estimate(&self.operator, TRACE_TRIALS, 0)
        } else {
            0.0
        };
        let contraction = validate_contraction(&c.constants, self.operator.lambda(), trace)?;
        Self { coefficients: c, contraction, ..self.clone() }.revalidated()
    }

    pub fn with_obstacle(&self, o: Obstacle) -> Result<Self> {
        Self { obstacle: o, ..self.clone() }.revalidated()
    }

    pub fn with_time(&self, time: TimeGrid) -> Result<Self> {
        if matches!(self.obstacle, Obstacle::Trajectory(_)) && time != self.time {
            return Err(Error::InvalidObstacle("a tabulated obstacle cannot be moved to another time grid".into()));
        }
        Self { time, ..self.clone() }.revalidated()
    }

    /// Same problem on a time grid `factor` times finer.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        self.with_time(self.time.refine(factor)?)
    }

    pub fn with_noise_terms(&self, j: usize) -> Result<Self> {
        Self { noise_terms: j, ..self.clone() }.revalidated()
    }
}

fn check_set_shape(c: &CoefficientSet, dimension: usize, noise_terms: usize) -> Result<()> {
    if c.g.len() != dimension {
        return Err(Error::DimensionMismatch { what: "components of g", expected: dimension, got: c.g.len() });
    }
    if c.h.len() > noise_terms {
        return Err(Error::InvalidArgument(format!(
            "h has {} components but the noise is truncated at J = {noise_terms}",
            c.h.len()
        )));
    }
    Ok(())
}

/// Time-integrated squared norms of the coefficients at zero state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DataNorms {
    pub f0: f64,
    pub g0: f64,
    pub h0: f64,
    pub l0: f64,
}

impl DataNorms {
    pub fn total(&self) -> f64 {
        self.f0 + self.g0 + self.h0 + self.l0
    }
}

/// Evaluates `f(., 0, 0)`, `g(., 0, 0)`, `h(., 0, 0)` and `l(., 0)` on the
/// whole space-time lattice and returns left-point Riemann sums of their
/// squared norms over `[0, T]`. Fails on the first non-finite value.
pub fn validate_integrability(spec: &ProblemSpec, path: PathHandle) -> Result<DataNorms> {
    coefficient_norms(spec.coefficients(), spec.operator(), spec.time(), path)
}

pub(crate) fn coefficient_norms(
    c: &CoefficientSet,
    op: &DiscreteOperator,
    time: TimeGrid,
    path: PathHandle,
) -> Result<DataNorms> {
    let grid = op.grid();
    let n = grid.len();
    let d = grid.dimension();
    let zeros = vec![0.0; n];
    let zero_grad = vec![0.0; n * d];
    let dt = time.dt();
    let mut norms = DataNorms::default();
    let finite = |what: &str, t: f64, values: &[f64], nodes: Option<&[usize]>| -> Result<()> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let node = nodes.map_or(i, |b| b[i]);
            return Err(Error::NonFinite { what: what.to_string(), t, node });
        }
        Ok(())
    };
    for k in 0..time.steps() {
        let t = time.time(k);
        let f0 = eval_cells(&c.f, grid, t, &zeros, &zero_grad, path);
        finite("f0", t, &f0, None)?;
        norms.f0 += dt * grid.norm_sq(&f0);
        for (axis, gc) in c.g.iter().enumerate() {
            let g0 = eval_cells(gc, grid, t, &zeros, &zero_grad, path);
            finite(&format!("g0[{axis}]"), t, &g0, None)?;
            norms.g0 += dt * grid.norm_sq(&g0);
        }
        for (j, hc) in c.h.iter().enumerate() {
            let h0 = eval_cells(hc, grid, t, &zeros, &zero_grad, path);
            finite(&format!("h0[{j}]"), t, &h0, None)?;
            norms.h0 += dt * grid.norm_sq(&h0);
        }
        let l0 = eval_boundary(&c.l, grid, t, &zeros, path);
        finite("l0", t, &l0, Some(grid.boundary_nodes()))?;
        norms.l0 += dt * l0
            .iter()
            .zip(grid.surface_weights())
            .map(|(v, w)| v * v * w)
            .sum::<f64>();
    }
    Ok(norms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{Builtin, Coefficient, LipschitzConstants};
    use crate::grid::{assemble_operator, build_grid, EllipticCoefficients};

    fn op_1d(n: usize) -> Arc<DiscreteOperator> {
        let g = build_grid(1, &[1.0], &[n]).unwrap();
        Arc::new(assemble_operator(&g, &EllipticCoefficients::isotropic(&g, 1.0).unwrap()).unwrap())
    }

    #[test]
    fn horizon_must_be_multiple_of_dt() {
        assert_eq!(TimeGrid::from_horizon(1.0, 1e-3).unwrap().steps(), 1000);
        assert_eq!(TimeGrid::from_horizon(0.3, 0.1).unwrap().steps(), 3);
        assert!(TimeGrid::from_horizon(1.0, 0.3).is_err());
        assert!(TimeGrid::from_horizon(1.0, 0.0).is_err());
        let t = TimeGrid::new(0.01, 100).unwrap();
        assert_eq!(t.horizon(), 0.01 * 100.0);
    }

    #[test]
    fn zero_coefficients_have_zero_norms() {
        let spec = ProblemSpec::builder(op_1d(8), TimeGrid::new(0.1, 10).unwrap()).build().unwrap();
        assert_eq!(validate_integrability(&spec, PathHandle(0)).unwrap(), DataNorms::default());
    }

    #[test]
    fn unit_forcing_has_unit_mass() {
        let spec = ProblemSpec::builder(op_1d(8), TimeGrid::new(0.125, 8).unwrap())
            .coefficients(CoefficientSet::zero(1).with_f(Coefficient::constant(1.0)))
            .build()
            .unwrap();
        let n = validate_integrability(&spec, PathHandle(0)).unwrap();
        assert!((n.f0 - 1.0).abs() < 1e-12);
        assert_eq!(n.total(), n.f0);
    }

    #[test]
    fn reciprocal_forcing_is_large_but_finite() {
        let cells = 10;
        let spec = ProblemSpec::builder(op_1d(cells), TimeGrid::new(0.5, 2).unwrap())
            .coefficients(CoefficientSet::zero(1).with_f(Coefficient::state_free("1/x", |_, x, _| 1.0 / x[0])))
            .build()
            .unwrap();
        let n = validate_integrability(&spec, PathHandle(0)).unwrap();
        // lattice sum: T * sum_i dx / x_i^2 with x_i = (i + 1/2) dx
        let dx = 1.0 / cells as f64;
        let expected: f64 = (0..cells).map(|i| dx / ((i as f64 + 0.5) * dx).powi(2)).sum();
        assert!((n.f0 - expected).abs() < 1e-9 * expected);
        assert!(n.f0 > 40.0);
    }

    #[test]
    fn non_finite_reported_with_location() {
        let spec = ProblemSpec::builder(op_1d(4), TimeGrid::new(0.5, 2).unwrap())
            .coefficients(CoefficientSet::zero(1).with_l(Coefficient::state_free("bad", |t, _, _| {
                if t > 0.2 { f64::NAN } else { 0.0 }
            })))
            .build()
            .unwrap();
        match validate_integrability(&spec, PathHandle(0)) {
            Err(Error::NonFinite { what, t, node }) => {
                assert_eq!(what, "l0");
                assert_eq!(t, 0.5);
                assert_eq!(node, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn obstacle_must_start_below_initial_datum() {
        let op = op_1d(4);
        let t = TimeGrid::new(0.1, 3).unwrap();
        let r = ProblemSpec::builder(op.clone(), t)
            .initial(vec![0.0, 0.0, 0.0, 0.0])
            .obstacle(Obstacle::Static(vec![0.0, 0.1, 0.0, 0.0]))
            .build();
        assert!(matches!(r, Err(Error::ObstacleAboveInitial { node: 1, .. })));
        let driven = DrivenObstacle { coefficients: CoefficientSet::zero(1), initial: vec![-1.0; 4], offset: 0.5 };
        let r = ProblemSpec::builder(op, t).obstacle(Obstacle::Driven(driven)).build();
        assert!(matches!(r, Err(Error::InvalidObstacle(_))));
    }

    #[test]
    fn contraction_gate_and_force() {
        let c = CoefficientSet::zero(1)
            .with_g(vec![Builtin::Linear { offset: 0.0, slope_y: 0.0, slope_z: vec![1.0] }.build()])
            .with_constants(LipschitzConstants { c: 0.0, alpha: 1.0, beta: 1.0, theta: 0.0 });
        let t = TimeGrid::new(0.1, 3).unwrap();
        let r = ProblemSpec::builder(op_1d(4), t).coefficients(c.clone()).build();
        assert!(matches!(r, Err(Error::Contraction { .. })));
        let s = ProblemSpec::builder(op_1d(4), t).coefficients(c).force(true).build().unwrap();
        assert!(!s.contraction().pass);
    }

    #[test]
    fn too_many_noise_components_rejected() {
        let c = CoefficientSet::zero(1).with_h(vec![Coefficient::constant(1.0); 3]);
        let t = TimeGrid::new(0.1, 3).unwrap();
        assert!(ProblemSpec::builder(op_1d(4), t).coefficients(c.clone()).noise_terms(2).build().is_err());
        assert!(ProblemSpec::builder(op_1d(4), t).coefficients(c).noise_terms(3).build().is_ok());
    }
}
