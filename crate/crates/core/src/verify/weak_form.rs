//! Weak-form residual against separable test functions
//! `phi(t, x) = psi(t) chi(x)`.

use serde::Serialize;

use super::{median, nested, par_seeds, solve_for_checks, Bound, CheckParams, CheckReport};
use crate::coefficients::Profile;
use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::linear::{path_handle, FieldTrajectory, StepData};
use crate::noise::SamplePath;
use crate::obstacle::RegularMeasure;
use crate::problem::ProblemSpec;

/// Residuals below this are treated as exact when forming refinement ratios.
const EXACT_FLOOR: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimeProfile {
    One,
    /// `exp(1 - 1 / (1 - r^2))` for `r = (t - center) / width`, zero for `|r| >= 1`.
    Bump { center: f64, width: f64 },
}

impl TimeProfile {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            TimeProfile::One => 1.0,
            TimeProfile::Bump { center, width } => {
                let r = (t - center) / width;
                if r.abs() >= 1.0 { 0.0 } else { (1.0 - 1.0 / (1.0 - r * r)).exp() }
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            TimeProfile::One => 0.0,
            TimeProfile::Bump { center, width } => {
                let r = (t - center) / width;
                if r.abs() >= 1.0 {
                    0.0
                } else {
                    self.value(t) * (-2.0 * r / (1.0 - r * r).powi(2)) / width
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestFunction {
    pub time: TimeProfile,
    pub space: Profile,
}

impl TestFunction {
    /// Default library on `grid` over `[0, horizon]`: a time bump against
    /// constants, the first cosine mode and a positive cosine profile.
    pub fn library(grid: &SpatialGrid, horizon: f64) -> Vec<Self> {
        let d = grid.dimension();
        let k: Vec<f64> = grid.extents().iter().map(|e| std::f64::consts::PI / e).collect();
        let mut first_axis = vec![0.0; d];
        first_axis[0] = k[0];
        let bump = TimeProfile::Bump { center: 0.5 * horizon, width: 0.45 * horizon };
        vec![
            Self { time: bump.clone(), space: Profile::Constant { value: 1.0 } },
            Self { time: TimeProfile::One, space: Profile::Cosine { amplitude: 1.0, wavenumber: k, offset: 0.0 } },
            Self { time: bump, space: Profile::Cosine { amplitude: 0.5, wavenumber: first_axis, offset: 1.0 } },
        ]
    }

    /// Nonnegative on the domain at all times.
    pub fn is_nonnegative(&self, grid: &SpatialGrid) -> bool {
        self.space.sample(grid).iter().all(|v| *v >= 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakFormResidual {
    pub residual: f64,
    pub residual_without_measure: f64,
}

/// `(u_K, phi_K) - (xi, phi_0) - sum (u_k, d_t phi_k) dt + sum E(u_k, phi_k) dt
///  + sum (grad phi_k, g_k) dt - sum (f_k, phi_k) dt - sum (l_k, phi_k)_bd dt
///  - sum_j (h_{j,k}, phi_k) dB^j_k - sum phi_{k+1} nu_k`.
pub fn weak_form_residual(
    spec: &ProblemSpec,
    traj: &FieldTrajectory,
    measure: Option<&RegularMeasure>,
    path: &SamplePath,
    phi: &TestFunction,
) -> Result<WeakFormResidual> {
    let op = spec.operator();
    let grid = op.grid();
    if traj.steps() != path.steps() {
        return Err(Error::InvalidArgument("trajectory and path have different step counts".into()));
    }
    let chi = phi.space.sample(grid);
    let dt = traj.dt();
    let handle = path_handle(path);
    let at = |k: usize| -> Vec<f64> {
        let psi = phi.time.value(dt * k as f64);
        chi.iter().map(|c| c * psi).collect()
    };
    let big_k = traj.steps();
    let mut r = grid.inner(traj.last(), &at(big_k)) - grid.inner(traj.field(0), &at(0));
    let mut nu_sum = 0.0;
    for k in 0..big_k {
        let t = dt * k as f64;
        let u = traj.field(k);
        let phi_k = at(k);
        let data = StepData::evaluate(spec.coefficients(), grid, t, u, handle);
        r -= grid.inner(u, &chi) * phi.time.derivative(t) * dt;
        r += op.energy_unchecked(u, &phi_k) * dt;
        r += grid.grad_pairing(&phi_k, &data.g) * dt;
        r -= grid.inner(&data.f, &phi_k) * dt;
        let boundary: f64 = grid
            .boundary_nodes()
            .iter()
            .zip(grid.surface_weights())
            .zip(&data.l)
            .map(|((node, w), l)| phi_k[*node] * l * w)
            .sum();
        r -= boundary * dt;
        r -= data.h.iter().zip(path.row(k)).map(|(h, db)| grid.inner(h, &phi_k) * db).sum::<f64>();
        if let Some(m) = measure {
            nu_sum += m.row(k).iter().zip(at(k + 1)).map(|(nu, p)| nu * p).sum::<f64>();
        }
    }
    Ok(WeakFormResidual { residual: r - nu_sum, residual_without_measure: r })
}

/// Weak-form residuals at `dt, dt/2, ...` on nested paths. Passes when the
/// median ratio `|W(dt)| / |W(dt/2)|` over seeds and test functions is at
/// least 1.5 (first order in `dt`).
pub fn check_weak_form(spec: &ProblemSpec, functions: &[TestFunction], params: &CheckParams) -> Result<CheckReport> {
    if functions.is_empty() {
        return Err(Error::InvalidArgument("no test functions".into()));
    }
    let levels = params.levels.max(2);
    let per_seed = par_seeds(&params.seeds, |seed| {
        nested(spec, seed, levels)?
            .iter()
            .map(|(s, p)| {
                let (traj, measure, _) = solve_for_checks(s, p, params.n)?;
                functions
                    .iter()
                    .map(|f| weak_form_residual(s, &traj, measure.as_ref(), p, f))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut ratios = Vec::new();
    let mut ablation_worse = 0usize;
    let mut ablation_total = 0usize;
    let mut worst = 0.0f64;
    for seed in &per_seed {
        for (j, f) in functions.iter().enumerate() {
            let (coarse, fine) = (seed[0][j].residual.abs(), seed[1][j].residual.abs());
            worst = worst.max(coarse);
            ratios.push(if coarse <= EXACT_FLOOR { f64::INFINITY } else { coarse / fine });
            if f.is_nonnegative(spec.operator().grid()) {
                ablation_total += 1;
                if seed[0][j].residual_without_measure.abs() > coarse {
                    ablation_worse += 1;
                }
            }
        }
    }
    let dt = spec.time().dt();
    let trend: Vec<(f64, f64)> = (0..levels)
        .map(|l| {
            let r: Vec<f64> = per_seed.iter().flat_map(|s| s[l].iter().map(|w| w.residual.abs())).collect();
            (dt / (1 << l) as f64, median(&r))
        })
        .collect();
    Ok(CheckReport::new("weak-form", median(&ratios), 1.5, Bound::AtLeast)
        .with_trend("dt", trend)
        .with_paths(params.seeds.len(), params.seeds.clone())
        .detail("max_residual", worst)
        .detail("ablation_worse", ablation_worse as f64)
        .detail("ablation_total", ablation_total as f64))
}
