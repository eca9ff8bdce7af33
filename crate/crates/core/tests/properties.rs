use phasefield_recovery::experiments::{rasterize_objective, BoundaryFlux, ShapeSpec};
use phasefield_recovery::fem::{
    assemble_boundary_mass, assemble_lumped_mass, assemble_mass, assemble_stiffness, CoefficientValues, Discretization,
    PhaseField, ScalarField,
};
use phasefield_recovery::gamma::{recovery_sequence, PartitionSpec};
use phasefield_recovery::linalg::{
    cg_solve_preconditioned, cg_solve_with, CsrMatrix, KrylovOptions, Multigrid, Preconditioner,
};
use phasefield_recovery::mesh::{build_structured_mesh, Mesh};
use phasefield_recovery::objective::{evaluate_objective, pairing};
use phasefield_recovery::state::{solve_state, ObservationKind, ObservationSpace};
use phasefield_recovery::vi_step::{project_simplex, solve_step_subproblem, step_energy, StepProblem};
use proptest::prelude::*;

fn square(n: usize) -> Mesh<f64> {
    build_structured_mesh(-1.0, 1.0, -1.0, 1.0, n).unwrap()
}

/// Nodes drawn from positive weights normalised onto the simplex.
fn phase_field(r: usize, nodes: usize) -> impl Strategy<Value = PhaseField<f64>> {
    prop::collection::vec(0.01f64..1.0, r * nodes).prop_map(move |mut v| {
        for node in v.chunks_mut(r) {
            let s: f64 = node.iter().sum();
            node.iter_mut().for_each(|x| *x /= s);
        }
        PhaseField::new(r, v).unwrap()
    })
}

fn tangent(r: usize, nodes: usize) -> impl Strategy<Value = PhaseField<f64>> {
    prop::collection::vec(-1.0f64..1.0, r * nodes).prop_map(move |mut v| {
        for node in v.chunks_mut(r) {
            let mean = node.iter().sum::<f64>() / r as f64;
            node.iter_mut().for_each(|x| *x -= mean);
        }
        PhaseField::new(r, v).unwrap()
    })
}

fn max_diff(a: &CsrMatrix<f64>, b: &CsrMatrix<f64>) -> f64 {
    let (da, db) = (a.to_dense(), b.to_dense());
    da.iter().flatten().zip(db.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn structured_mesh_invariants(n in 1usize..=32) {
        let m = square(n);
        m.validate().unwrap();
        prop_assert_eq!(m.num_triangles(), 2 * (2 * n) * (2 * n));
        prop_assert_eq!(m.num_vertices(), (2 * n + 1) * (2 * n + 1));
        prop_assert_eq!(m.boundary_edges().len(), 8 * n);
        let area: f64 = (0..m.num_triangles()).map(|t| m.triangle_area(t)).sum();
        prop_assert!((area - 4.0).abs() < 1e-12);
        let perimeter: f64 = m.boundary_edges().iter().map(|e| m.edge_length(e)).sum();
        prop_assert!((perimeter - 8.0).abs() < 1e-12);
        prop_assert!((0..m.num_triangles()).all(|t| m.triangle_area(t) > 0.0));
        let fine = square(2 * n);
        prop_assert_eq!(fine.num_triangles(), 4 * m.num_triangles());
        prop_assert!((m.h() / fine.h() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn projection_is_idempotent_and_optimal(
        v in prop::collection::vec(-3.0f64..3.0, 2..7),
        seed in prop::collection::vec(0.01f64..1.0, 7),
    ) {
        let p = project_simplex(&v);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let again = project_simplex(&p);
        prop_assert!(p.iter().zip(&again).all(|(a, b)| (a - b).abs() < 1e-14));
        // variational inequality (v - p) . (q - p) <= 0 for q in the simplex
        let mut q: Vec<f64> = seed[..v.len()].to_vec();
        let s: f64 = q.iter().sum();
        q.iter_mut().for_each(|x| *x /= s);
        let vi: f64 = v.iter().zip(&p).zip(&q).map(|((vi, pi), qi)| (vi - pi) * (qi - pi)).sum();
        prop_assert!(vi <= 1e-12);
    }

    #[test]
    fn stiffness_is_affine_in_u(u in phase_field(3, 25), w in tangent(3, 25), t in 0.05f64..0.5) {
        let m = build_structured_mesh(0.0, 2.0, 0.0, 2.0, 2).unwrap();
        let a = CoefficientValues::new(vec![0.8, 0.2, 0.3]).unwrap();
        // scale the direction so that every sampled point keeps a positive coefficient
        let s = 0.1;
        let k = |t: f64| {
            let ut = u.offset(t * s, &w);
            let coeff: Vec<f64> = (0..ut.num_nodes()).map(|node| a.eval(ut.node(node))).collect();
            assemble_stiffness(&m, &ScalarField(coeff)).unwrap()
        };
        let (k0, k1, kt) = (k(0.0), k(1.0), k(t));
        let (d0, d1, dt) = (k0.to_dense(), k1.to_dense(), kt.to_dense());
        for i in 0..d0.len() {
            for j in 0..d0.len() {
                let interp = d0[i][j] + t * (d1[i][j] - d0[i][j]);
                prop_assert!((dt[i][j] - interp).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn assembly_ignores_triangle_order(perm_seed in any::<u64>()) {
        let m = build_structured_mesh(-1.0, 1.0, -1.0, 1.0, 3).unwrap();
        let mut order: Vec<usize> = (0..m.num_triangles()).collect();
        // Fisher-Yates with a linear congruential stream
        let mut state = perm_seed | 1;
        for i in (1..order.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let p = m.with_triangle_order(&order).unwrap();
        let coeff = ScalarField::interpolate(&m, |x, y| 1.0 + x * x + 0.5 * y);
        prop_assert!(max_diff(&assemble_stiffness(&m, &coeff).unwrap(), &assemble_stiffness(&p, &coeff).unwrap()) < 1e-14);
        prop_assert!(max_diff(&assemble_mass(&m), &assemble_mass(&p)) < 1e-15);
        prop_assert!(max_diff(&assemble_boundary_mass(&m), &assemble_boundary_mass(&p)) < 1e-15);
        let (lm, lp) = (assemble_lumped_mass(&m), assemble_lumped_mass(&p));
        prop_assert!(lm.iter().zip(&lp).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn recovery_sequence_stays_in_simplex(x in -0.5f64..0.5, y in -0.5f64..0.5, eps in 0.02f64..0.3) {
        let m = square(6);
        let u = recovery_sequence(&PartitionSpec::triple_junction([x, y]), eps, &m).unwrap();
        u.check_simplex(0.0, 1e-14).unwrap();
    }

    #[test]
    fn step_solution_feasible_and_not_worse(
        u in phase_field(3, 81),
        y in prop::collection::vec(-1.0f64..1.0, 81),
        p in prop::collection::vec(-1.0f64..1.0, 81),
        tau in 0.01f64..1.0,
    ) {
        let d = Discretization::new(square(4));
        let a = CoefficientValues::new(vec![0.8, 0.2, 0.3]).unwrap();
        let (ys, ps) = (ScalarField(y), ScalarField(p));
        let prob = StepProblem::new(&u, &ys, &ps, tau, 1e-3, 0.05, &a);
        let sol = solve_step_subproblem(&d, &prob).unwrap();
        sol.u.check_simplex(1e-10, 1e-10).unwrap();
        prop_assert!(step_energy(&d, &prob, &sol.u).unwrap() <= step_energy(&d, &prob, &u).unwrap() + 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn preconditioners_agree(c in prop::collection::vec(0.5f64..3.0, 289)) {
        let d = Discretization::new(square(8));
        let k = d.stiffness(&ScalarField(c)).unwrap();
        // mass-dominated SPD operator with a condition number of order ten
        let a = d.mass().add_scaled(1e-3, &k).unwrap();
        let b: Vec<f64> = d.mesh().vertices().iter().map(|p| (3.0 * p[0]).sin() + p[1]).collect();
        let tol = 1e-10;
        let none = KrylovOptions { tol, max_iter: None, preconditioner: Preconditioner::None, keep_iterates: false };
        let jac = KrylovOptions { tol, max_iter: None, preconditioner: Preconditioner::Jacobi, keep_iterates: false };
        let x0 = cg_solve_with(&a, &b, None, &none, None).unwrap().x;
        let x1 = cg_solve_with(&a, &b, None, &jac, None).unwrap().x;
        let mg = Multigrid::new(&a, d.hierarchy().unwrap()).unwrap();
        let x2 = cg_solve_preconditioned(&a, &b, None, &jac, &mg, None).unwrap().x;
        let scale = x0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for q in [&x1, &x2] {
            let e = x0.iter().zip(q.iter()).map(|(s, t)| (s - t).abs()).fold(0.0f64, f64::max);
            prop_assert!(e <= 10.0 * tol * scale, "error {e:e}");
        }
    }

    #[test]
    fn pairing_is_linear(w1 in tangent(2, 81), w2 in tangent(2, 81), s in -2.0f64..2.0) {
        let g = PhaseField::new(2, (0..162).map(|k| ((k * 37) % 11) as f64 - 5.0).collect()).unwrap();
        let combo = w1.offset(s, &w2);
        let lhs = pairing(&g, &combo);
        let rhs = pairing(&g, &w1) + s * pairing(&g, &w2);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn regulariser_nonnegative(u in phase_field(3, 81)) {
        let d = Discretization::new(square(4));
        let obs = ObservationSpace::new(&d, ObservationKind::Bulk);
        let zero = ScalarField::zeros(81);
        let j = evaluate_objective(&d, &obs, &u, &zero, &zero, 1e-3, 0.05).unwrap();
        prop_assert!(j.j_reg >= 0.0);
    }
}

/// A priori bound: compliance is monotone in the coefficient, so the state
/// gradient norm for any phase field lies between the pure-phase values for
/// `a_max` and `a_min`.
#[test]
fn state_bound_is_uniform_over_phase_fields() {
    use rand::{Rng, SeedableRng};
    let m = square(8);
    let d = Discretization::new(m.clone());
    let obs = ObservationSpace::new(&d, ObservationKind::Bulk);
    let a = CoefficientValues::new(vec![3.0, 0.5]).unwrap();
    let g = BoundaryFlux::CornerFlux.field(&m);
    let opts = KrylovOptions::with_tol(1e-12);
    let semi = |u: &PhaseField<f64>| {
        let y = solve_state(&d, u, &a, &g, 0.0, &obs, &opts, None).unwrap();
        d.unit_stiffness().bilinear(&y.0, &y.0).sqrt()
    };
    let nv = m.num_vertices();
    let upper = semi(&PhaseField::pure(nv, 2, 2).unwrap());
    let lower = semi(&PhaseField::pure(nv, 2, 1).unwrap());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let v: Vec<f64> = (0..nv).map(|_| rng.random::<f64>()).collect();
        let s = semi(&PhaseField::from_first_component(&v));
        assert!(s <= upper * (1.0 + 1e-9) && s >= lower * (1.0 - 1e-9), "{lower} <= {s} <= {upper}");
    }
}

/// Continuity: shrinking L1 perturbations give shrinking H1 state differences.
#[test]
fn state_is_continuous_in_l1() {
    let m = square(16);
    let d = Discretization::new(m.clone());
    let obs = ObservationSpace::new(&d, ObservationKind::Bulk);
    let a = CoefficientValues::new(vec![3.0, 0.5]).unwrap();
    let g = BoundaryFlux::CornerFlux.field(&m);
    let opts = KrylovOptions::with_tol(1e-12);
    let base = rasterize_objective(&ShapeSpec::ellipse(), &m, 2).unwrap();
    let y0 = solve_state(&d, &base, &a, &g, 0.0, &obs, &opts, None).unwrap();
    let verts = m.vertices().to_vec();
    let mut last = f64::INFINITY;
    let mut first = None;
    for radius in [0.4, 0.2, 0.1, 0.05] {
        // flip nodes inside a shrinking disc
        let v: Vec<f64> = (0..m.num_vertices())
            .map(|k| {
                let p = verts[k];
                let inside = (p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2) < radius * radius;
                if inside {
                    1.0 - base.node(k)[0]
                } else {
                    base.node(k)[0]
                }
            })
            .collect();
        let u = PhaseField::from_first_component(&v);
        let y = solve_state(&d, &u, &a, &g, 0.0, &obs, &opts, None).unwrap();
        let e: Vec<f64> = y.0.iter().zip(&y0.0).map(|(p, q)| p - q).collect();
        let diff = (d.unit_stiffness().bilinear(&e, &e) + d.mass().bilinear(&e, &e)).sqrt();
        assert!(diff < last, "radius {radius}: {diff} not below {last}");
        first.get_or_insert(diff);
        last = diff;
    }
    assert!(last < 0.2 * first.unwrap());
}

#[test]
fn galerkin_levels_keep_constant_kernel() {
    let d = Discretization::new(square(8));
    let h = d.hierarchy().unwrap();
    for l in 0..h.levels() - 1 {
        let p = h.prolongation(l);
        let ones = vec![1.0; p.ncols()];
        assert!(p.mul_vec(&ones).iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }
}
