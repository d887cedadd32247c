//! Acceptance gate: one test per release criterion, each printing a single
//! pass/fail line (visible with `cargo test --test acceptance -- --nocapture`,
//! and in the failure output otherwise).

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfde_core::catalog;
use rfde_core::cli::{load_solution, save_solution, SolutionFile, SCHEMA_VERSION};
use rfde_core::floquet::{
    build_linearized_operator, monodromy_matrix, multipliers_and_check, UNIT_CIRCLE_THRESHOLD,
};
use rfde_core::greens::{final_state, green_apply};
use rfde_core::mesh::{
    inner_abscissae, interpolation_error, lagrange_weights, outer_mesh, prolong, restrict,
    AbscissaeFamily, NodeVector, Side,
};
use rfde_core::oracle::{run_convergence_study, ReferenceSource};
use rfde_core::problem::discretize_rhs;
use rfde_core::solver::{
    assemble_jacobian, initial_unknowns, solve_periodic, DiscreteUnknowns, Discretization,
    JacobianMode, PhaseCondition, SolveConfig,
};
use std::collections::BTreeMap;

fn verdict(n: usize, name: &str, ok: bool) -> bool {
    println!("criterion {n} ({name}): {}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn catalog_problem(name: &str) -> catalog::CatalogProblem {
    catalog::build(name, &BTreeMap::new()).unwrap()
}

fn solve_catalog(name: &str, l: usize, m: usize, m_quadrature: usize) -> (f64, rfde_core::greens::CandidateSolution) {
    let cp = catalog_problem(name);
    let phase = PhaseCondition::Trivial { component: cp.phase_component, level: cp.phase_level };
    let mut cfg = SolveConfig::new(l, m);
    cfg.m_quadrature = m_quadrature;
    let (v, omega, _) = solve_periodic(&cp.problem, &cp.guess, &phase, &cfg).unwrap();
    (omega, v)
}

#[test]
fn criterion_1_collocation_order_against_the_exact_orbit() {
    let cp = catalog_problem("mms");
    let two = run_convergence_study(&cp, 2, &[10, 20, 40, 80], 20, &ReferenceSource::Exact, 4)
        .unwrap();
    let three =
        run_convergence_study(&cp, 3, &[10, 20, 40], 20, &ReferenceSource::Exact, 4).unwrap();
    let ok_two = two.orders().iter().all(|o| (1.7..=3.2).contains(o));
    let ok_three = three.orders().iter().all(|o| (2.7..=4.2).contains(o));
    let ok = verdict(
        1,
        "collocation order against the exact orbit",
        ok_two && ok_three,
    );
    assert!(
        ok,
        "m = 2 orders {:?} (expected [1.7, 3.2]), m = 3 orders {:?} (expected [2.7, 4.2])",
        two.orders(),
        three.orders()
    );
}

#[test]
fn criterion_2_period_accuracy() {
    let (omega, _) = solve_catalog("mms", 40, 3, 20);
    let err = (omega - 2.0).abs();
    let ok = verdict(2, "period accuracy on the closed-form cycle", err <= 1e-4);
    assert!(ok, "period error {err:e} exceeds 1e-4");
}

#[test]
fn criterion_3_cross_validation_against_the_integrator() {
    let cp = catalog_problem("logistic");
    let reference = ReferenceSource::Oracle { dt: 1e-3, t_transient: 200.0 };
    let report = run_convergence_study(&cp, 3, &[40], 20, &reference, 1).unwrap();
    let row = &report.rows[0];
    let rel_period = row.err_omega / report.omega_ref;
    let ok = verdict(
        3,
        "cross-validation against the method-of-steps integrator",
        row.err_v <= 1e-3 && rel_period <= 1e-4,
    );
    assert!(
        ok,
        "profile error {:e} (tol 1e-3), relative period discrepancy {rel_period:e} (tol 1e-4)",
        row.err_v
    );
}

#[test]
fn criterion_4_trivial_floquet_multiplier() {
    let mut trivial_errors = Vec::new();
    let mut logistic_ok = true;
    for name in ["mms", "logistic"] {
        let cp = catalog_problem(name);
        let (omega, v) = solve_catalog(name, 40, 3, 20);
        let op = build_linearized_operator(&v, omega, &cp.problem).unwrap();
        let t = monodromy_matrix(&op, 40, 3).unwrap();
        let report = multipliers_and_check(&t, UNIT_CIRCLE_THRESHOLD).unwrap();
        trivial_errors.push((name, report.trivial_error));
        if name == "logistic" {
            let one = nalgebra::Complex::new(1.0, 0.0);
            let trivial_index = (0..report.multipliers.len())
                .min_by(|&a, &b| {
                    let (da, db) =
                        ((report.multipliers[a] - one).norm(), (report.multipliers[b] - one).norm());
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            let nontrivial_inside = report
                .multipliers
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != trivial_index)
                .all(|(_, mu)| mu.norm() < 1.0);
            logistic_ok = report.hyperbolic && nontrivial_inside;
        }
    }
    let trivial_ok = trivial_errors.iter().all(|(_, e)| *e <= 1e-4);
    let ok = verdict(4, "trivial Floquet multiplier", trivial_ok && logistic_ok);
    assert!(
        ok,
        "trivial multiplier errors {trivial_errors:?} (tol 1e-4), logistic hyperbolic and \
         stable: {logistic_ok}"
    );
}

#[test]
fn criterion_5_green_operator_bound() {
    let (l, m, dim) = (8, 2, 1);
    let absc = inner_abscissae(m, AbscissaeFamily::GaussLegendre).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2026);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mut u = NodeVector::zeros(dim, l, m);
        let mut psi = NodeVector::zeros(dim, l, m);
        for x in u.data.iter_mut().chain(psi.data.iter_mut()) {
            *x = rng.gen_range(-1.0..1.0);
        }
        let v = green_apply(&u, &psi, &absc).unwrap();
        let mut unorm = 0.0f64;
        let mut psinorm = 0.0f64;
        let mut psidnorm = 0.0f64;
        let mut vnorm = 0.0f64;
        let mut vdnorm = 0.0f64;
        for s in 0..=2000 {
            let t = -1.0 + s as f64 / 1000.0;
            vnorm = vnorm.max(v.value(t).unwrap().amax());
            vdnorm = vdnorm.max(v.derivative(t).unwrap().amax());
            if t <= 0.0 {
                psinorm = psinorm.max(v.psi.value(t).unwrap().amax());
                psidnorm = psidnorm.max(v.psi.derivative(t).unwrap().amax());
            } else {
                unorm = unorm.max(v.u.value(t).unwrap().amax());
            }
        }
        worst = worst.max((vnorm + vdnorm) / unorm.max(psinorm + psidnorm));
    }
    let ok = verdict(5, "Green operator bound", worst <= 3.0 + 1e-8);
    assert!(ok, "worst measured norm ratio {worst} exceeds 3");
}

#[test]
fn criterion_6_interpolation_order() {
    let f = |t: f64| Ok(DVector::from_vec(vec![(2.0 * std::f64::consts::PI * t).sin()]));
    let mut failures = Vec::new();
    for m in 1..=3usize {
        let absc = inner_abscissae(m, AbscissaeFamily::GaussLegendre).unwrap();
        let errs: Vec<f64> = [10usize, 20, 40, 80]
            .iter()
            .map(|&l| interpolation_error(f, &outer_mesh(l, Side::Plus).unwrap(), &absc).unwrap())
            .collect();
        let expected = 2f64.powi(m as i32 + 1);
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            if (ratio - expected).abs() / expected > 0.15 {
                failures.push((m, ratio, expected));
            }
        }
    }
    let ok = verdict(6, "interpolation error order", failures.is_empty());
    assert!(ok, "ratios off by more than 15%: {failures:?}");
}

#[test]
fn criterion_7_jacobian_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for name in ["logistic", "mms", "dist-logistic"] {
        let cp = catalog_problem(name);
        let disc = Discretization::new(8, 2, AbscissaeFamily::GaussLegendre).unwrap();
        let rhs = discretize_rhs(&cp.problem, 10).unwrap();
        let phase =
            PhaseCondition::Trivial { component: cp.phase_component, level: cp.phase_level };
        let base = initial_unknowns(&cp.guess, cp.problem.tau, &disc).unwrap();
        let n = base.n_total();
        for _ in 0..5 {
            let mut x = base.to_vector();
            for j in 0..n - 1 {
                x[j] += rng.gen_range(-0.05..0.05);
            }
            x[n - 1] *= 1.0 + rng.gen_range(-0.02..0.02);
            let point = DiscreteUnknowns::from_vector(&base, &x);
            let a = assemble_jacobian(&point, &rhs, &phase, &disc, JacobianMode::Analytic)
                .unwrap();
            let f =
                assemble_jacobian(&point, &rhs, &phase, &disc, JacobianMode::FiniteDifference)
                    .unwrap();
            for i in 0..n {
                for j in 0..n {
                    worst = worst.max((a[(i, j)] - f[(i, j)]).abs() / (1.0 + a[(i, j)].abs()));
                }
            }
        }
    }
    let ok = verdict(7, "analytic vs finite-difference Jacobian", worst <= 1e-5);
    assert!(ok, "max relative entry discrepancy {worst:e} exceeds 1e-5");
}

#[test]
fn criterion_8_secondary_discretization_stability() {
    let solve = |m_quadrature: usize| solve_catalog("dist-logistic", 40, 3, m_quadrature).0;
    let omega_ref = solve(40);
    let deviations: Vec<(usize, f64)> =
        [10usize, 20].iter().map(|&mq| (mq, (solve(mq) - omega_ref).abs())).collect();
    let ok = verdict(
        8,
        "period stability under quadrature refinement",
        deviations.iter().all(|(_, d)| *d <= 1e-8),
    );
    assert!(ok, "period deviations from M = 40: {deviations:?} (tol 1e-8)");
}

#[test]
fn criterion_9_module_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    // partition of unity of the Lagrange basis
    let absc = inner_abscissae(3, AbscissaeFamily::GaussLegendre).unwrap();
    let nodes = absc.reference_nodes();
    let unity = (0..100).all(|_| {
        let t: f64 = rng.gen_range(0.0..1.0);
        let sum: f64 = lagrange_weights(&nodes, t).unwrap().iter().sum();
        (sum - 1.0).abs() <= 1e-12
    });

    // projection idempotence: restrict after prolong reproduces node values
    let mesh = outer_mesh(6, Side::Plus).unwrap();
    let mut nv = NodeVector::zeros(2, 6, 3);
    for x in nv.data.iter_mut() {
        *x = rng.gen_range(-1.0..1.0);
    }
    let p = prolong(&nv, &mesh, &absc).unwrap();
    let back = restrict(|t| p.value(t), &mesh, &absc).unwrap();
    let idempotent =
        nv.data.iter().zip(&back.data).all(|(a, b)| (a - b).abs() <= 1e-12);

    // discrete periodicity and phase exactness of a solved cycle
    let cp = catalog_problem("logistic");
    let (_, v) = solve_catalog("logistic", 20, 3, 20);
    let disc = Discretization::new(20, 3, AbscissaeFamily::GaussLegendre).unwrap();
    let fs = final_state(&v, &disc.minus, &disc.abscissae).unwrap();
    let psi_nodes = restrict(|t| v.psi.value(t), &disc.minus, &disc.abscissae).unwrap();
    let periodic =
        fs.data.iter().zip(&psi_nodes.data).all(|(a, b)| (a - b).abs() <= 1e-9);
    let phase_exact = (v.value(0.0).unwrap()[cp.phase_component] - cp.phase_level).abs() <= 1e-10;

    // solution file round-trip is bit-exact
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    let file = SolutionFile {
        schema_version: SCHEMA_VERSION,
        problem: "logistic".into(),
        params: BTreeMap::new(),
        dim: 1,
        tau: 1.0,
        l: 1,
        m: 2,
        m_quadrature: 20,
        abscissae_family: "gauss-legendre".into(),
        abscissae: absc.c[..2].to_vec(),
        omega: 4.402739435,
        u: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        psi: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        residual_norm: 1e-12,
        newton_iterations: 4,
        converged: true,
    };
    save_solution(&path, &file).unwrap();
    let loaded = load_solution(&path).unwrap();
    let round_trip = loaded.omega.to_bits() == file.omega.to_bits()
        && loaded.u.iter().zip(&file.u).all(|(a, b)| a.to_bits() == b.to_bits())
        && loaded.psi.iter().zip(&file.psi).all(|(a, b)| a.to_bits() == b.to_bits());

    let ok = verdict(
        9,
        "module invariants",
        unity && idempotent && periodic && phase_exact && round_trip,
    );
    assert!(
        ok,
        "partition of unity: {unity}, projection idempotence: {idempotent}, discrete \
         periodicity: {periodic}, phase exactness: {phase_exact}, round-trip: {round_trip}"
    );
}
