use std::sync::Arc;

use proptest::prelude::*;

use ospde_core::obstacle::max_violation;
use ospde_core::{
    assemble_operator, build_grid, solve, solve_penalized, validate_contraction, Coefficient, CoefficientSet,
    DiscreteOperator, EllipticCoefficients, LipschitzConstants, Obstacle, ProblemSpec, SamplePath, TimeGrid,
};

fn operator(dims: &[usize], amp: f64, phase: f64) -> DiscreteOperator {
    let extents: Vec<f64> = dims.iter().map(|n| 0.25 * *n as f64).collect();
    let grid = build_grid(dims.len(), &extents, dims).unwrap();
    let a = EllipticCoefficients::scalar_field(&grid, |x| 1.0 + amp * (1.0 + (3.0 * x[0] + phase).sin()), 1.0, 1.0 + 2.0 * amp)
        .unwrap();
    assemble_operator(&grid, &a).unwrap()
}

fn spec_1d(c: CoefficientSet, xi: Vec<f64>, obstacle: Obstacle, terms: usize) -> ProblemSpec {
    let grid = build_grid(1, &[1.0], &[xi.len()]).unwrap();
    let op = Arc::new(assemble_operator(&grid, &EllipticCoefficients::isotropic(&grid, 1.0).unwrap()).unwrap());
    ProblemSpec::builder(op, TimeGrid::new(0.02, 30).unwrap())
        .coefficients(c)
        .initial(xi)
        .obstacle(obstacle)
        .noise_terms(terms)
        .build()
        .unwrap()
}

fn field(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn operator_symmetric_with_constant_kernel(
        dims in prop_oneof![(2usize..30).prop_map(|n| vec![n]), (2usize..9, 2usize..9).prop_map(|(a, b)| vec![a, b])],
        amp in 0.0..3.0f64,
        phase in 0.0..6.3f64,
        c in -5.0..5.0f64,
    ) {
        let op = operator(&dims, amp, phase);
        let m = op.to_dense();
        prop_assert_eq!(&m, &m.transpose());
        prop_assert!(op.apply(&vec![c; op.len()]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ellipticity_sandwich(amp in 0.0..3.0f64, phase in 0.0..6.3f64, seed in any::<u64>()) {
        let op = operator(&[7, 5], amp, phase);
        let grid = op.grid();
        let identity = assemble_operator(grid, &EllipticCoefficients::isotropic(grid, 1.0).unwrap()).unwrap();
        let u: Vec<f64> = (0..op.len()).map(|i| ((seed.wrapping_add(i as u64) % 1013) as f64).sin()).collect();
        let (e, d) = (op.energy(&u), identity.energy(&u));
        let upper = op.coefficients().upper();
        prop_assert!(e >= op.lambda() * d * (1.0 - 1e-14));
        prop_assert!(e <= upper * d * (1.0 + 1e-14));
        let lu = op.apply(&u);
        let quadratic: f64 = -u.iter().zip(&lu).map(|(a, b)| a * b).sum::<f64>() * grid.cell_volume();
        prop_assert!((quadratic - e).abs() <= 1e-10 * (1.0 + e));
    }

    #[test]
    fn heat_flow_conserves_mass_and_contracts(xi in field(12)) {
        let s = spec_1d(CoefficientSet::zero(1), xi, Obstacle::None, 0);
        let u = solve(&s, &SamplePath::generate(0, 0, 0.02, 30).unwrap()).unwrap();
        let grid = s.operator().grid();
        let mass = grid.integral(s.initial());
        for k in 0..30 {
            prop_assert!((grid.integral(u.field(k + 1)) - mass).abs() <= 1e-12 * (1.0 + mass.abs()));
            prop_assert!(grid.norm_sq(u.field(k + 1)) <= grid.norm_sq(u.field(k)) * (1.0 + 1e-14));
        }
        prop_assert_eq!(u.field(0), s.initial());
    }

    #[test]
    fn paths_regenerate_and_coarsen(seed in any::<u64>(), terms in 1usize..4) {
        let a = SamplePath::generate(seed, terms, 0.01, 64).unwrap();
        let b = SamplePath::generate(seed, terms, 0.01, 64).unwrap();
        prop_assert_eq!(&a, &b);
        let c = a.coarsen(4).unwrap();
        prop_assert_eq!(c.steps(), 16);
        for j in 0..terms {
            let fine = a.values(j);
            let coarse = c.values(j);
            for (k, v) in coarse.iter().enumerate() {
                prop_assert!((v - fine[4 * k]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn contraction_is_monotone(
        alpha in 0.0..2.0f64, beta in 0.0..2.0f64, theta in 0.0..2.0f64,
        bump in 0.0..1.0f64, which in 0usize..3, lambda in 0.1..3.0f64, trace in 0.0..2.0f64,
    ) {
        let base = LipschitzConstants { c: 0.0, alpha, beta, theta };
        let mut raised = base;
        match which {
            0 => raised.alpha += bump,
            1 => raised.beta += bump,
            _ => raised.theta += bump,
        }
        let a = validate_contraction(&base, lambda, trace).unwrap();
        let b = validate_contraction(&raised, lambda, trace).unwrap();
        prop_assert!(b.margin <= a.margin);
        prop_assert!(a.pass || !b.pass);
    }

    #[test]
    fn penalty_is_monotone_and_measure_nonnegative(seed in 0u64..1000, n1 in 1.0..1e3f64, factor in 1.0..50.0f64, drift in 0.2..2.0f64) {
        let c = CoefficientSet::zero(1)
            .with_f(Coefficient::constant(-drift))
            .with_h(vec![Coefficient::constant(0.2)]);
        let s = spec_1d(c, vec![0.3; 10], Obstacle::Static(vec![0.0; 10]), 1);
        let path = SamplePath::generate(seed, 1, 0.02, 30).unwrap();
        let lo = solve_penalized(&s, &path, n1).unwrap();
        let hi = solve_penalized(&s, &path, n1 * factor).unwrap();
        prop_assert!(lo.measure.min_entry() >= 0.0 && hi.measure.min_entry() >= 0.0);
        for (a, b) in lo.trajectory.fields().iter().flatten().zip(hi.trajectory.fields().iter().flatten()) {
            prop_assert!(b >= &(a - 1e-8));
        }
        let obstacle = vec![vec![0.0; 10]; 31];
        prop_assert!(max_violation(&hi.trajectory, &obstacle) <= max_violation(&lo.trajectory, &obstacle) + 1e-12);
        let vol = s.operator().grid().cell_volume();
        for k in 0..30 {
            for (nu, u) in hi.measure.row(k).iter().zip(hi.trajectory.field(k + 1)) {
                let expected = n1 * factor * (-u).max(0.0) * 0.02 * vol;
                prop_assert!((nu - expected).abs() <= 1e-12 * (1.0 + expected));
            }
        }
    }

    #[test]
    fn ordered_data_give_ordered_solutions(seed in 0u64..1000, dxi in 0.0..0.5f64, df in 0.0..1.0f64, xi in field(10)) {
        let h = vec![Coefficient::from_fn("h", |p| 0.2 + 0.1 * p.y.sin())];
        let set = |shift: f64| {
            CoefficientSet::zero(1)
                .with_f(Coefficient::from_fn("f", move |p| -0.5 * p.y + shift))
                .with_h(h.clone())
        };
        let lower = spec_1d(set(0.0), xi.clone(), Obstacle::None, 1);
        let upper = spec_1d(set(df), xi.iter().map(|v| v + dxi).collect(), Obstacle::None, 1);
        let path = SamplePath::generate(seed, 1, 0.02, 30).unwrap();
        let (a, b) = (solve(&lower, &path).unwrap(), solve(&upper, &path).unwrap());
        for (x, y) in a.fields().iter().flatten().zip(b.fields().iter().flatten()) {
            prop_assert!(x <= &(y + 1e-8));
        }
    }
}
