use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("ellipticity violated at cell {cell}: quadratic form {value} outside [{lower}, {upper}]")]
    Ellipticity {
        cell: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("unsupported diffusion tensor at cell {0}: 2D assembly requires a diagonal matrix")]
    NonDiagonalTensor(usize),

    #[error("invalid noise parameters: {0}")]
    InvalidNoise(String),

    #[error("invalid time grid: {0}")]
    InvalidTime(String),

    #[error("declared constant `{name}` is negative ({value})")]
    NegativeConstant { name: &'static str, value: f64 },

    #[error(
        "contraction property fails: 2*alpha + beta^2 + 2*|Tr|^2*theta = {lhs} vs 2*lambda = {rhs} \
         (margin {margin}, required > {required})"
    )]
    Contraction {
        lhs: f64,
        rhs: f64,
        margin: f64,
        required: f64,
    },

    #[error("non-finite value of {what} at t = {t}, node {node}")]
    NonFinite { what: String, t: f64, node: usize },

    #[error("linear solve failed: non-positive pivot at row {row} (condition estimate {condition:e})")]
    LinearSolve { row: usize, condition: f64 },

    #[error("step {step} rejected: update is not finite at node {node}")]
    StepRejected { step: usize, node: usize },

    #[error("penalized inner iteration did not converge at step {step} after {sweeps} sweeps (residual {residual:e})")]
    InnerNonConvergence {
        step: usize,
        sweeps: usize,
        residual: f64,
    },

    #[error("Picard iteration diverged at n = {n} after {iterations} iterations (gaps {gaps:?}, contraction margin {margin})")]
    PicardDivergence {
        n: f64,
        iterations: usize,
        gaps: Vec<f64>,
        margin: f64,
    },

    #[error("Picard iteration did not reach tolerance {tol:e} within {iterations} iterations at n = {n} (last gap {gap:e})")]
    PicardNotConverged {
        n: f64,
        iterations: usize,
        gap: f64,
        tol: f64,
    },

    #[error("obstacle exceeds the initial datum at node {node}: S0 = {obstacle} > xi = {initial}")]
    ObstacleAboveInitial {
        node: usize,
        obstacle: f64,
        initial: f64,
    },

    #[error("invalid obstacle: {0}")]
    InvalidObstacle(String),

    #[error("mild-solution oracle requires {0}")]
    OracleUnsupported(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
