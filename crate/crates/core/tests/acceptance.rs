//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

#![allow(clippy::needless_range_loop)]

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ospde_core::obstacle::max_violation;
use ospde_core::verify::{
    check_apriori_estimate, check_comparison, check_ito_identity, check_kappa_estimate, ComparisonMode, EstimateKind,
    Phi,
};
use ospde_core::{
    assemble_operator, build_grid, mild_oracle, solve, solve_penalized, validate_contraction, CheckParams, Coefficient,
    CoefficientSet, DiscreteOperator, DrivenObstacle, EllipticCoefficients, Error, LipschitzConstants, Obstacle,
    ProblemSpec, Profile, SamplePath, TimeGrid,
};

struct Outcome {
    pass: bool,
    summary: String,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Self { pass, summary: summary.into() }
    }
}

fn op_1d(cells: usize) -> Arc<DiscreteOperator> {
    let g = build_grid(1, &[1.0], &[cells]).unwrap();
    Arc::new(assemble_operator(&g, &EllipticCoefficients::isotropic(&g, 1.0).unwrap()).unwrap())
}

fn spec(
    op: &Arc<DiscreteOperator>,
    c: CoefficientSet,
    xi: impl Fn(f64) -> f64,
    obstacle: Obstacle,
    dt: f64,
    steps: usize,
    terms: usize,
) -> ProblemSpec {
    let xi = op.grid().sample(|x| xi(x[0]));
    ProblemSpec::builder(op.clone(), TimeGrid::new(dt, steps).unwrap())
        .coefficients(c)
        .initial(xi)
        .obstacle(obstacle)
        .noise_terms(terms)
        .build()
        .unwrap()
}

fn cosine(amplitude: f64, k: f64, offset: f64) -> Profile {
    Profile::Cosine { amplitude, wavenumber: vec![k], offset }
}

/// `u_{k+1} = (u_k - dt) / (1 + n dt)` below zero, `u_k - dt` above.
fn scalar_fixed_point(dt: f64, steps: usize, n: f64) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![0.0];
    let mut nu = Vec::new();
    for k in 0..steps {
        let free = u[k] - dt;
        let next = if free >= 0.0 { free } else { free / (1.0 + n * dt) };
        nu.push(n * (-next).max(0.0) * dt);
        u.push(next);
    }
    (u, nu)
}

fn scalar_oracle() -> Outcome {
    let (cells, dt, steps, n) = (32, 1e-3, 1000, 1e4);
    let op = op_1d(cells);
    let c = CoefficientSet::zero(1).with_f(Coefficient::constant(-1.0));
    let s = spec(&op, c, |_| 0.0, Obstacle::Static(vec![0.0; cells]), dt, steps, 0);
    let path = SamplePath::generate(0, 0, dt, steps).unwrap();
    let sol = solve_penalized(&s, &path, n).unwrap();
    let (oracle, oracle_nu) = scalar_fixed_point(dt, steps, n);
    let sup = sol.trajectory.fields().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut oracle_gap = 0.0f64;
    for k in 0..=steps {
        for v in sol.trajectory.field(k) {
            oracle_gap = oracle_gap.max((v - oracle[k]).abs());
        }
    }
    let vol = op.grid().cell_volume();
    for k in 0..steps {
        for v in sol.measure.row(k) {
            oracle_gap = oracle_gap.max((v / vol - oracle_nu[k]).abs());
        }
    }
    let mass = sol.measure.total_mass();
    let gap = sol.skorokhod_gap();
    let pass = sup <= 2e-4 && (mass - 1.0).abs() <= 0.05 && gap <= 2e-4 && oracle_gap <= 1e-12;
    Outcome::new(
        pass,
        format!("sup|u| = {sup:.3e} (<= 2e-4), mass = {mass:.4} (1 +- 5%), gap = {gap:.2e} (<= 2e-4), |u - oracle| = {oracle_gap:.1e}"),
    )
}

fn mild_equivalence() -> Outcome {
    let op = op_1d(16);
    let c = CoefficientSet::zero(1)
        .with_f(Coefficient::field(cosine(1.0, 2.0 * PI, 0.0)))
        .with_h(vec![Coefficient::field(cosine(0.5, PI, 0.0)), Coefficient::constant(0.2)]);
    let base = spec(&op, c, |x| (PI * x).cos(), Obstacle::None, 1e-2, 100, 2);
    let mut gaps = [0.0f64; 3];
    for seed in 0..10 {
        let fine = SamplePath::generate(seed, 2, 2.5e-3, 400).unwrap();
        for (l, gap) in gaps.iter_mut().enumerate() {
            let s = base.refined(1 << l).unwrap();
            let p = fine.coarsen(4 >> l).unwrap();
            *gap += solve(&s, &p).unwrap().max_abs_diff(&mild_oracle(&s, &p).unwrap()) / 10.0;
        }
    }
    let r = [gaps[0] / gaps[1], gaps[1] / gaps[2]];
    let pass = r.iter().all(|r| (1.4..=2.6).contains(r));
    Outcome::new(
        pass,
        format!(
            "mean gaps {:.3e}, {:.3e}, {:.3e} at dt = 1e-2, 5e-3, 2.5e-3; ratios {:.3}, {:.3} (2 +- 30%)",
            gaps[0], gaps[1], gaps[2], r[0], r[1]
        ),
    )
}

fn ito_ledger() -> Outcome {
    let op = op_1d(16);
    let params = CheckParams { seeds: (0..20).collect(), levels: 2, n: 1e3, pairs: 100 };
    let free = CoefficientSet::zero(1)
        .with_f(Coefficient::from_fn("f", |p| -0.5 * p.y + p.x[0]))
        .with_g(vec![Coefficient::from_fn("g", |p| 0.2 * p.y.sin())])
        .with_h(vec![Coefficient::constant(0.1)])
        .with_l(Coefficient::from_fn("l", |p| 0.1 * p.y.cos()));
    let free = check_ito_identity(&spec(&op, free, |x| (PI * x).cos(), Obstacle::None, 1e-2, 100, 1), &Phi::Square, &params)
        .unwrap();
    let obstacle = CoefficientSet::zero(1).with_f(Coefficient::constant(-1.0)).with_h(vec![Coefficient::constant(0.1)]);
    let obstacle = check_ito_identity(
        &spec(&op, obstacle, |x| 0.5 + 0.3 * (PI * x).cos(), Obstacle::Static(vec![0.2; 16]), 1e-2, 100, 1),
        &Phi::Square,
        &params,
    )
    .unwrap();
    let (a, b, c) = (
        free.details["seeds_decreasing"],
        obstacle.details["seeds_decreasing"],
        obstacle.details["seeds_ablation_worse"],
    );
    let defect = free.details["max_scheme_defect"].max(obstacle.details["max_scheme_defect"]);
    Outcome::new(
        a >= 18.0 && b >= 18.0 && c == 20.0,
        format!("decreasing {a}/20 free, {b}/20 with obstacle; ablation worse {c}/20; exact scheme identity defect {defect:.1e}"),
    )
}

fn comparison() -> Outcome {
    let op = op_1d(16);
    let params = CheckParams { seeds: (0..50).collect(), levels: 1, n: 1e3, pairs: 100 };
    let h = vec![Coefficient::from_fn("h", |p| 0.2 + 0.1 * p.y.sin())];
    let g = vec![Coefficient::field(Profile::Linear { slope: vec![0.3], offset: -0.1 })];
    let f = |shift: f64| Coefficient::from_fn("f", move |p| -0.5 * p.y + 0.3 * (PI * p.x[0]).sin() + shift);
    let l = |shift: f64| Coefficient::from_fn("l", move |p| 0.1 * p.y.sin() + shift);
    let set = |fs: f64, ls: f64| CoefficientSet::zero(1).with_f(f(fs)).with_g(g.clone()).with_h(h.clone()).with_l(l(ls));
    let xi = |x: f64| 0.3 * (PI * x).cos();
    let mk = |c, shift: f64, o| spec(&op, c, move |x| xi(x) + shift, o, 1e-2, 100, 1);
    let scenarios = [
        ("xi", mk(set(0.0, 0.0), 0.0, Obstacle::None), mk(set(0.0, 0.0), 0.05, Obstacle::None), ComparisonMode::Linear),
        ("f", mk(set(-0.2, 0.0), 0.0, Obstacle::None), mk(set(0.1, 0.0), 0.0, Obstacle::None), ComparisonMode::Linear),
        ("l", mk(set(0.0, -0.1), 0.0, Obstacle::None), mk(set(0.0, 0.2), 0.0, Obstacle::None), ComparisonMode::Linear),
        (
            "S",
            mk(set(-1.0, 0.0), 0.4, Obstacle::Static(vec![-0.1; 16])),
            mk(set(-1.0, 0.0), 0.4, Obstacle::Static(vec![0.05; 16])),
            ComparisonMode::Obstacle,
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, lower, upper, mode) in &scenarios {
        let r = check_comparison(lower, upper, *mode, &params).unwrap();
        pass &= r.passed() && r.details["violating_paths"] == 0.0;
        parts.push(format!("{name}: {:.1e}", r.measured));
    }
    Outcome::new(pass, format!("max violation over 50 seeds ({}) <= 1e-7", parts.join(", ")))
}

fn penalization() -> Outcome {
    let op = op_1d(16);
    let schedule = [1e1, 1e2, 1e3, 1e4];
    let c = CoefficientSet::zero(1)
        .with_f(Coefficient::field(cosine(0.5, PI, -1.0)))
        .with_h(vec![Coefficient::constant(0.05)]);
    let s = spec(&op, c, |x| 0.2 + 0.1 * (PI * x).cos(), Obstacle::Static(vec![0.0; 16]), 1e-2, 100, 1);
    let obstacle = vec![vec![0.0; 16]; 101];
    let mut monotone_defect = 0.0f64;
    let mut worst_scaled = [0.0f64; 4];
    let mut scaled_spread = 0.0f64;
    for seed in 0..5 {
        let path = SamplePath::generate(seed, 1, 1e-2, 100).unwrap();
        let runs: Vec<_> = schedule.iter().map(|n| solve_penalized(&s, &path, *n).unwrap().trajectory).collect();
        for w in runs.windows(2) {
            for (a, b) in w[0].fields().iter().flatten().zip(w[1].fields().iter().flatten()) {
                monotone_defect = monotone_defect.max(a - b);
            }
        }
        let scaled: Vec<f64> = runs.iter().zip(schedule).map(|(u, n)| max_violation(u, &obstacle) * n).collect();
        for (w, v) in worst_scaled.iter_mut().zip(&scaled) {
            *w = w.max(*v);
        }
        let hi = scaled.iter().copied().fold(0.0, f64::max);
        let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
        scaled_spread = scaled_spread.max(hi / lo);
    }
    Outcome::new(
        monotone_defect <= 1e-8 && scaled_spread <= 3.0,
        format!(
            "max decrease in n {monotone_defect:.1e} (<= 1e-8); n * violation = {:.3}, {:.3}, {:.3}, {:.3}, spread {scaled_spread:.2} (<= 3)",
            worst_scaled[0], worst_scaled[1], worst_scaled[2], worst_scaled[3]
        ),
    )
}

fn estimates() -> Outcome {
    let op = op_1d(16);
    let params = CheckParams { seeds: vec![1000], levels: 2, n: 1e3, pairs: 200 };
    let c = CoefficientSet::zero(1)
        .with_f(Coefficient::from_fn("f", |p| -0.5 * p.y + (PI * p.x[0]).cos()))
        .with_h(vec![Coefficient::from_fn("h", |p| 0.3 + 0.1 * p.y.sin())])
        .with_l(Coefficient::constant(0.1));
    let driver = DrivenObstacle {
        coefficients: CoefficientSet::zero(1)
            .with_f(Coefficient::field(cosine(0.5, PI, -0.5)))
            .with_h(vec![Coefficient::constant(0.2)]),
        initial: op.grid().sample(|x| 0.1 * (PI * x[0]).cos()),
        offset: -0.2,
    };
    let s = spec(&op, c, |x| 0.5 + 0.3 * (PI * x).cos(), Obstacle::Driven(driver), 2e-2, 25, 1);
    let reports = [
        check_apriori_estimate(&s.with_obstacle(Obstacle::None).unwrap(), EstimateKind::Linear, &params).unwrap(),
        check_apriori_estimate(&s, EstimateKind::Driver, &params).unwrap(),
        check_kappa_estimate(&s.with_obstacle(Obstacle::None).unwrap(), &params).unwrap(),
    ];
    let pass = reports.iter().all(|r| r.passed() && r.details["ratio"].is_finite() && r.details["ratio_refined"].is_finite());
    let parts: Vec<String> = reports
        .iter()
        .map(|r| format!("{} {:.4} -> {:.4}", r.check, r.details["ratio"], r.details["ratio_refined"]))
        .collect();
    Outcome::new(pass, format!("{} (change <= 25%, 400 paths)", parts.join("; ")))
}

fn structural() -> Outcome {
    let constants = |alpha, beta, theta| LipschitzConstants { c: 0.0, alpha, beta, theta };
    let passing = validate_contraction(&constants(0.3, 0.5, 0.2), 1.0, 1.0).unwrap();
    let failing = validate_contraction(&constants(1.0, 1.0, 0.0), 1.0, 1.0).unwrap();
    let degenerate = validate_contraction(&constants(0.0, 0.0, 0.0), 1.0, 1.0).unwrap();
    let triples = passing.pass
        && (passing.margin - 0.75).abs() < 1e-15
        && !failing.pass
        && failing.margin == -1.0
        && degenerate.pass
        && degenerate.margin == 2.0;

    let op = op_1d(16);
    let gated = ProblemSpec::builder(op.clone(), TimeGrid::new(0.01, 10).unwrap())
        .coefficients(CoefficientSet::zero(1).with_constants(constants(1.0, 1.0, 0.0)))
        .initial(vec![0.0; 16])
        .build();
    let gate = matches!(&gated, Err(e @ Error::Contraction { .. }) if e.to_string().contains("contraction property"));

    let grid = build_grid(2, &[1.0, 0.7], &[9, 6]).unwrap();
    let a = EllipticCoefficients::scalar_field(&grid, |x| 1.0 + 0.8 * (3.0 * x[0]).sin().powi(2) + x[1], 1.0, 2.5).unwrap();
    let op = assemble_operator(&grid, &a).unwrap();
    let floor = assemble_operator(&grid, &EllipticCoefficients::isotropic(&grid, 1.0).unwrap()).unwrap();
    let m = op.to_dense();
    let symmetric = m == m.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut kernel = op.apply(&vec![3.25; grid.len()]).iter().all(|v| *v == 0.0);
    let mut coercive = true;
    for _ in 0..64 {
        let u: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = u.iter().map(|x| x + 0.75).collect();
        kernel &= op.dirichlet_form(&vec![-1.5; grid.len()], &u).unwrap() == 0.0;
        kernel &= op.energy(&u) == op.energy(&v);
        coercive &= op.energy(&u) > 0.0 && op.energy(&u) >= op.lambda() * floor.energy(&u) * (1.0 - 1e-15);
        coercive &= op.dirichlet_form(&u, &v).unwrap() == op.dirichlet_form(&v, &u).unwrap();
    }
    Outcome::new(
        triples && gate && symmetric && kernel && coercive,
        format!(
            "margins {:.2} / {:.2} / {:.2}, gate {gate}, symmetric {symmetric}, kernel {kernel}, coercive {coercive}",
            passing.margin, failing.margin, degenerate.margin
        ),
    )
}

type Criterion = (&'static str, u64, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("scalar-oracle", 5, scalar_oracle),
        ("mild-oracle", 10, mild_equivalence),
        ("ito-ledger", 30, ito_ledger),
        ("comparison", 60, comparison),
        ("penalization", 60, penalization),
        ("estimates", 120, estimates),
        ("structural", 1, structural),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let pass = outcome.pass && elapsed < Duration::from_secs(*limit);
        if !pass {
            failed += 1;
        }
        println!(
            "{} [{}] {name}: {} ({:.2} s, limit {limit} s)",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            outcome.summary,
            elapsed.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
