//! Penalization solver for obstacle problems of quasilinear stochastic PDEs
//! with Neumann boundary conditions, plus numerical checks of the energy
//! identities, a priori estimates and comparison properties of the scheme.

// NaN must fail the validity guards, hence `!(x > 0.0)`; index loops mirror
// the stencil formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

mod banded;
pub mod coefficients;
pub mod error;
pub mod grid;
pub mod noise;
pub mod obstacle;
pub mod linear;
pub mod problem;
pub mod verify;

pub use coefficients::{
    probe_lipschitz, validate_contraction, Builtin, Coefficient, CoefficientSet, ContractionVerdict, Dependence,
    LipschitzConstants, LipschitzReport, PathHandle, Point, Profile,
};
pub use error::{Error, Result};
pub use grid::{
    assemble_operator, boundary_integral, build_grid, dirichlet_form, trace_norm_estimate, DiscreteOperator,
    EllipticCoefficients, SpatialGrid,
};
pub use noise::{sample_path, SamplePath};
pub use problem::{validate_integrability, DataNorms, DrivenObstacle, Obstacle, ProblemSpec, TimeGrid};
pub use linear::{mild_oracle, solve, solve_spde_pair, step, FieldTrajectory};
pub use obstacle::{
    build_obstacle, penalized_step, reflected_potential, skorokhod_gap, solve_obstacle, solve_penalized,
    ObstacleSolution, PenaltyLevel, RegularMeasure, SolverOptions,
};
pub use verify::{CheckParams, CheckReport, Verdict};
