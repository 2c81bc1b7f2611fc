//! Nonlinear random coefficients `(f, g, h, l)` and their structural checks.
//!
//! A coefficient is a pure function of `(t, x, y, z)` plus an opaque
//! [`PathHandle`]; randomness in the sample path may only enter through
//! that handle. Built-in closed forms are selectable by name (see
//! [`Builtin`]); anything else can be registered with
//! [`Coefficient::from_fn`].

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpatialGrid;

/// Opaque per-path handle (the path seed).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct PathHandle(pub u64);

/// Arguments of a coefficient evaluation: time, position, value, gradient.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub y: f64,
    pub z: &'a [f64],
    pub path: PathHandle,
}

pub type CoefficientFn = dyn Fn(&Point<'_>) -> f64 + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dependence {
    /// Identically zero.
    Zero,
    /// Depends on `(t, x, path)` only.
    StateFree,
    /// May depend on `(y, z)`.
    State,
}

#[derive(Clone)]
pub struct Coefficient {
    name: String,
    dependence: Dependence,
    builtin: Option<Builtin>,
    func: Arc<CoefficientFn>,
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Coefficient")
            .field("name", &self.name)
            .field("dependence", &self.dependence)
            .finish()
    }
}

impl Coefficient {
    pub fn zero() -> Self {
        Builtin::Zero.build()
    }

    pub fn constant(value: f64) -> Self {
        Builtin::Constant { value }.build()
    }

    /// General coefficient that may depend on the state `(y, z)`.
    pub fn from_fn(name: impl Into<String>, f: impl Fn(&Point<'_>) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), dependence: Dependence::State, builtin: None, func: Arc::new(f) }
    }

    /// Coefficient of `(t, x, path)` only; `(y, z)` are ignored.
    pub fn state_free(
        name: impl Into<String>,
        f: impl Fn(f64, &[f64], PathHandle) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dependence: Dependence::StateFree,
            builtin: None,
            func: Arc::new(move |p: &Point<'_>| f(p.t, p.x, p.path)),
        }
    }

    /// Deterministic spatial field `profile(x)`.
    pub fn field(profile: Profile) -> Self {
        Builtin::Field { profile }.build()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dependence(&self) -> Dependence {
        self.dependence
    }

    pub fn builtin(&self) -> Option<&Builtin> {
        self.builtin.as_ref()
    }

    pub fn is_zero(&self) -> bool {
        self.dependence == Dependence::Zero
    }

    pub fn is_state_free(&self) -> bool {
        self.dependence != Dependence::State
    }

    #[inline]
    pub fn eval(&self, p: &Point<'_>) -> f64 {
        (self.func)(p)
    }

    /// Structural identity: the same registered function, or equal built-ins.
    pub fn same_as(&self, other: &Self) -> bool {
        if Arc::ptr_eq(&self.func, &other.func) {
            return true;
        }
        match (&self.builtin, &other.builtin) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }
}

/// Spatial profiles used for initial data, static obstacles and
/// deterministic coefficient fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `offset + amplitude * prod_i cos(k_i x_i)`.
    Cosine {
        amplitude: f64,
        wavenumber: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    /// `offset + slope . x`.
    Linear {
        slope: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    /// `offset + amplitude * exp(-|x - center|^2 / (2 width^2))`.
    Bump {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
        #[serde(default)]
        offset: f64,
    },
}

impl Profile {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Cosine { amplitude, wavenumber, offset } => {
                offset + amplitude * x.iter().zip(wavenumber).map(|(xi, k)| (k * xi).cos()).product::<f64>()
            }
            Profile::Linear { slope, offset } => offset + x.iter().zip(slope).map(|(xi, s)| xi * s).sum::<f64>(),
            Profile::Bump { amplitude, center, width, offset } => {
                let r2: f64 = x.iter().zip(center).map(|(xi, c)| (xi - c).powi(2)).sum();
                offset + amplitude * (-r2 / (2.0 * width * width)).exp()
            }
        }
    }

    pub fn sample(&self, grid: &SpatialGrid) -> Vec<f64> {
        grid.sample(|x| self.eval(x))
    }
}

/// Closed-form coefficient library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Builtin {
    Zero,
    Constant {
        value: f64,
    },
    /// `offset + slope_y * y + slope_z . z`.
    Linear {
        #[serde(default)]
        offset: f64,
        #[serde(default)]
        slope_y: f64,
        #[serde(default)]
        slope_z: Vec<f64>,
    },
    /// `offset + amplitude * sin(frequency * y)`.
    Sine {
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `offset + clamp(slope * y, lower, upper)`.
    ClippedLinear {
        slope: f64,
        lower: f64,
        upper: f64,
        #[serde(default)]
        offset: f64,
    },
    /// State-free spatial field.
    Field {
        profile: Profile,
    },
}

fn one() -> f64 {
    1.0
}

impl Builtin {
    pub const NAMES: [&'static str; 6] = ["zero", "constant", "linear", "sine", "clipped-linear", "field"];

    pub fn kind(&self) -> &'static str {
        match self {
            Builtin::Zero => "zero",
            Builtin::Constant { .. } => "constant",
            Builtin::Linear { .. } => "linear",
            Builtin::Sine { .. } => "sine",
            Builtin::ClippedLinear { .. } => "clipped-linear",
            Builtin::Field { .. } => "field",
        }
    }

    pub fn build(&self) -> Coefficient {
        let (dependence, func): (Dependence, Arc<CoefficientFn>) = match self.clone() {
            Builtin::Zero => (Dependence::Zero, Arc::new(|_: &Point<'_>| 0.0)),
            Builtin::Constant { value } => (Dependence::StateFree, Arc::new(move |_: &Point<'_>| value)),
            Builtin::Linear { offset, slope_y, slope_z } => {
                let dep = if slope_y == 0.0 && slope_z.iter().all(|s| *s == 0.0) {
                    Dependence::StateFree
                } else {
                    Dependence::State
                };
                (
                    dep,
                    Arc::new(move |p: &Point<'_>| {
                        offset + slope_y * p.y + p.z.iter().zip(&slope_z).map(|(z, s)| z * s).sum::<f64>()
                    }),
                )
            }
            Builtin::Sine { amplitude, frequency, offset } => (
                Dependence::State,
                Arc::new(move |p: &Point<'_>| offset + amplitude * (frequency * p.y).sin()),
            ),
            Builtin::ClippedLinear { slope, lower, upper, offset } => (
                Dependence::State,
                Arc::new(move |p: &Point<'_>| offset + (slope * p.y).clamp(lower, upper)),
            ),
            Builtin::Field { profile } => (Dependence::StateFree, Arc::new(move |p: &Point<'_>| profile.eval(p.x))),
        };
        Coefficient { name: self.kind().to_string(), dependence, builtin: Some(self.clone()), func }
    }

    /// Check the parameters are usable (clip bounds ordered, finite values).
    pub fn validate(&self) -> Result<()> {
        match self {
            Builtin::ClippedLinear { lower, upper, .. } if lower > upper => Err(Error::InvalidArgument(format!(
                "clipped-linear bounds out of order: lower {lower} > upper {upper}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Declared constants of the Lipschitz and contraction conditions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzConstants {
    /// Lipschitz constant of `f` in `(y, z)` and of `g`, `h` in `y`.
    #[serde(rename = "C", alias = "c")]
    pub c: f64,
    /// Lipschitz constant of `g` in `z`.
    pub alpha: f64,
    /// Lipschitz constant of `h` in `z`.
    pub beta: f64,
    /// Lipschitz constant of `l` in `y`.
    pub theta: f64,
}

impl LipschitzConstants {
    pub fn check_nonnegative(&self) -> Result<()> {
        for (name, value) in [("C", self.c), ("alpha", self.alpha), ("beta", self.beta), ("theta", self.theta)] {
            if !(value >= 0.0) {
                return Err(Error::NegativeConstant { name, value });
            }
        }
        Ok(())
    }
}

/// `(f, g, h, l)` with their declared constants. `g` has one component per
/// spatial axis; `h` has at most `J` components, missing ones are zero.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub f: Coefficient,
    pub g: Vec<Coefficient>,
    pub h: Vec<Coefficient>,
    pub l: Coefficient,
    pub constants: LipschitzConstants,
}

impl CoefficientSet {
    pub fn zero(dimension: usize) -> Self {
        Self {
            f: Coefficient::zero(),
            g: vec![Coefficient::zero(); dimension],
            h: Vec::new(),
            l: Coefficient::zero(),
            constants: LipschitzConstants::default(),
        }
    }

    pub fn with_f(mut self, f: Coefficient) -> Self {
        self.f = f;
        self
    }

    pub fn with_g(mut self, g: Vec<Coefficient>) -> Self {
        self.g = g;
        self
    }

    pub fn with_h(mut self, h: Vec<Coefficient>) -> Self {
        self.h = h;
        self
    }

    pub fn with_l(mut self, l: Coefficient) -> Self {
        self.l = l;
        self
    }

    pub fn with_constants(mut self, constants: LipschitzConstants) -> Self {
        self.constants = constants;
        self
    }

    pub fn dimension(&self) -> usize {
        self.g.len()
    }

    pub fn is_state_free(&self) -> bool {
        self.f.is_state_free()
            && self.l.is_state_free()
            && self.g.iter().all(Coefficient::is_state_free)
            && self.h.iter().all(Coefficient::is_state_free)
    }

    pub fn all_coefficients(&self) -> impl Iterator<Item = &Coefficient> {
        std::iter::once(&self.f)
            .chain(self.g.iter())
            .chain(self.h.iter())
            .chain(std::iter::once(&self.l))
    }
}

/// Outcome of the contraction test `2 alpha + beta^2 + 2 |Tr|^2 theta < 2 lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionVerdict {
    pub pass: bool,
    /// `2 lambda - (2 alpha + beta^2 + 2 |Tr|^2 theta)`.
    pub margin: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub trace_norm: f64,
}

pub fn validate_contraction(constants: &LipschitzConstants, lambda: f64, trace_norm: f64) -> Result<ContractionVerdict> {
    constants.check_nonnegative()?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("ellipticity constant must be positive, got {lambda}")));
    }
    if !(trace_norm >= 0.0) {
        return Err(Error::InvalidArgument(format!("trace norm must be nonnegative, got {trace_norm}")));
    }
    let lhs = 2.0 * constants.alpha + constants.beta.powi(2) + 2.0 * trace_norm.powi(2) * constants.theta;
    let rhs = 2.0 * lambda;
    let margin = rhs - lhs;
    Ok(ContractionVerdict { pass: margin > 0.0, margin, lhs, rhs, trace_norm })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzEntry {
    pub coefficient: &'static str,
    /// Which perturbation was probed: `"y"`, `"z"` or `"y+z"`.
    pub argument: &'static str,
    pub constant: &'static str,
    pub declared: f64,
    pub observed: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub probes: usize,
    pub seed: u64,
    pub entries: Vec<LipschitzEntry>,
}

impl LipschitzReport {
    pub fn violations(&self) -> impl Iterator<Item = &LipschitzEntry> {
        self.entries.iter().filter(|e| e.violation)
    }

    pub fn entry(&self, coefficient: &str, argument: &str) -> Option<&LipschitzEntry> {
        self.entries
            .iter()
            .find(|e| e.coefficient == coefficient && e.argument == argument)
    }
}

/// Randomized check of the declared Lipschitz constants.
///
/// Probes `t` in `[0, 1]`, `x` in the unit box, `y` and each `z_i` in
/// `[-5, 5]`, with perturbations spread over several scales so that both
/// the local slope and long-range chords are seen.
pub fn probe_lipschitz(coeff: &CoefficientSet, probes: usize, seed: u64) -> LipschitzReport {
    let d = coeff.dimension();
    let k = &coeff.constants;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales = [1e-4, 1e-2, 0.3, 2.0];

    let mut obs = [0.0f64; 6]; // f, g_y, g_z, h_y, h_z, l
    let vec_norm = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();

    for probe in 0..probes {
        let t: f64 = rng.random();
        let x: Vec<f64> = (0..d).map(|_| rng.random()).collect();
        let y: f64 = rng.random_range(-5.0..5.0);
        let z: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let s = scales[probe % scales.len()];
        let dy: f64 = s * rng.random_range(-1.0..1.0);
        let dz: Vec<f64> = (0..d).map(|_| s * rng.random_range(-1.0..1.0)).collect();
        let y2 = y + dy;
        let z2: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + b).collect();
        let dz_norm = dz.iter().map(|v| v * v).sum::<f64>().sqrt();
        let path = PathHandle(seed);
        fn at<'a>(t: f64, x: &'a [f64], y: f64, z: &'a [f64], path: PathHandle) -> Point<'a> {
            Point { t, x, y, z, path }
        }
        let eval_vec = |cs: &[Coefficient], p: &Point<'_>| cs.iter().map(|c| c.eval(p)).collect::<Vec<_>>();

        let (p, p_y, p_z, p_yz) = (at(t, &x, y, &z, path), at(t, &x, y2, &z, path), at(t, &x, y, &z2, path), at(t, &x, y2, &z2, path));
        if dy.abs() + dz_norm > 0.0 {
            let r = (coeff.f.eval(&p) - coeff.f.eval(&p_yz)).abs() / (dy.abs() + dz_norm);
            obs[0] = obs[0].max(r);
        }
        if dy != 0.0 {
            obs[1] = obs[1].max(vec_norm(&eval_vec(&coeff.g, &p), &eval_vec(&coeff.g, &p_y)) / dy.abs());
            obs[3] = obs[3].max(vec_norm(&eval_vec(&coeff.h, &p), &eval_vec(&coeff.h, &p_y)) / dy.abs());
            let lp = Point { z: &[], ..p };
            let lq = Point { z: &[], ..p_y };
            obs[5] = obs[5].max((coeff.l.eval(&lp) - coeff.l.eval(&lq)).abs() / dy.abs());
        }
        if dz_norm > 0.0 {
            obs[2] = obs[2].max(vec_norm(&eval_vec(&coeff.g, &p), &eval_vec(&coeff.g, &p_z)) / dz_norm);
            obs[4] = obs[4].max(vec_norm(&eval_vec(&coeff.h, &p), &eval_vec(&coeff.h, &p_z)) / dz_norm);
        }
    }

    let table: [(&'static str, &'static str, &'static str, f64); 6] = [
        ("f", "y+z", "C", k.c),
        ("g", "y", "C", k.c),
        ("g", "z", "alpha", k.alpha),
        ("h", "y", "C", k.c),
        ("h", "z", "beta", k.beta),
        ("l", "y", "theta", k.theta),
    ];
    let entries = table
        .iter()
        .zip(obs)
        .map(|((coefficient, argument, constant, declared), observed)| LipschitzEntry {
            coefficient,
            argument,
            constant,
            declared: *declared,
            observed,
            violation: observed > declared * (1.0 + 1e-6) + 1e-12,
        })
        .collect();
    LipschitzReport { probes, seed, entries }
}

/// Evaluates a scalar coefficient at every cell for state `u` with cell
/// gradients `grad` (`len * d`).
pub(crate) fn eval_cells(
    c: &Coefficient,
    grid: &SpatialGrid,
    t: f64,
    u: &[f64],
    grad: &[f64],
    path: PathHandle,
) -> Vec<f64> {
    let d = grid.dimension();
    (0..grid.len())
        .map(|i| {
            c.eval(&Point { t, x: grid.center(i), y: u[i], z: &grad[i * d..(i + 1) * d], path })
        })
        .collect()
}

/// Evaluates `l(t, x, y)` on the boundary nodes.
pub(crate) fn eval_boundary(c: &Coefficient, grid: &SpatialGrid, t: f64, u: &[f64], path: PathHandle) -> Vec<f64> {
    grid.boundary_nodes()
        .iter()
        .map(|&node| c.eval(&Point { t, x: grid.center(node), y: u[node], z: &[], path }))
        .collect()
}
