//! Property tests over random graphs, penalties and dual states.

use ibrsim_core::allocator::{
    closed_form_reference, current_reference, dual_step, kkt_oracle, primal_step, solve,
    AllocatorState, CostSpec, StopRule,
};
use ibrsim_core::mrac::proj_f;
use ibrsim_core::dq::Dq;
use ibrsim_core::graph::{build_topology, GraphTopology};
use ibrsim_core::plant::GridEnv;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

/// Converged solves are feasible on a spread of topologies and penalty
/// patterns regardless of where in null(W) the fixed point lands.
#[test]
fn converged_solves_are_feasible() {
    let topologies: Vec<(usize, Vec<(usize, usize)>)> = vec![
        (3, vec![(1, 2), (2, 3)]),
        (3, vec![(1, 2), (2, 3), (1, 3)]),
        (5, vec![(1, 2), (1, 3), (1, 4), (1, 5)]),
        (6, vec![(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 1)]),
    ];
    let beta_patterns: Vec<Vec<f64>> = vec![
        vec![1.0; 6],
        vec![1.0, 1.0, 1e4, 1.0, 1.0, 1.0],
        vec![0.5, 2.0, 8.0, 1.0, 4.0, 16.0],
    ];
    for (n, edges) in &topologies {
        let topo = build_topology(edges, *n, None).unwrap();
        for betas in &beta_patterns {
            for p_a in [1.0, -3.5, 250.0] {
                let mut state = AllocatorState::new(*n, 0.1);
                for i in 0..*n {
                    state.beta[i] = betas[i];
                }
                let report = solve(
                    &mut state,
                    &topo,
                    p_a,
                    0.0,
                    &CostSpec::quadratic(),
                    StopRule::Tolerance { tol: 1e-9, max_iters: 1_000_000 },
                )
                .unwrap();
                assert!(report.converged);
                assert!(
                    (state.p.sum() - p_a).abs() <= 1e-6 * p_a.abs().max(1.0),
                    "n={n}, betas={betas:?}, p_a={p_a}: sum p = {}",
                    state.p.sum()
                );
            }
        }
    }
}

/// Random connected graph: a random spanning tree plus optional extras.
fn connected_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..=7)
        .prop_flat_map(|n| {
            let tree = proptest::collection::vec(0usize..usize::MAX, n - 1);
            let extras = proptest::collection::vec(any::<bool>(), n * (n - 1) / 2);
            (Just(n), tree, extras)
        })
        .prop_map(|(n, parents, extras)| {
            let mut edges = Vec::new();
            for child in 1..n {
                let parent = parents[child - 1] % child;
                edges.push((parent + 1, child + 1)); // 1-based
            }
            let mut idx = 0;
            for a in 0..n {
                for b in (a + 1)..n {
                    if extras[idx] && !edges.contains(&(a + 1, b + 1)) {
                        edges.push((a + 1, b + 1));
                    }
                    idx += 1;
                }
            }
            (n, edges)
        })
}

fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().cloned().collect()
}

fn weight_residuals(topo: &GraphTopology) -> (f64, f64, f64) {
    let n = topo.n_nodes;
    let ones = DVector::from_element(n, 1.0);
    let row = (&topo.weight * &ones - &ones).amax();
    let col = (topo.weight.transpose() * &ones - &ones).amax();
    let sym = (&topo.weight - topo.weight.transpose()).amax();
    (row, col, sym)
}

proptest! {
    #[test]
    fn weight_matrix_is_doubly_stochastic_and_symmetric((n, edges) in connected_graph()) {
        let topo = build_topology(&edges, n, None).unwrap();
        let (row, col, sym) = weight_residuals(&topo);
        prop_assert!(row <= 1e-12, "row residual {row}");
        prop_assert!(col <= 1e-12, "column residual {col}");
        prop_assert!(sym <= 1e-12, "symmetry residual {sym}");
        for r in 0..n {
            prop_assert_eq!(topo.laplacian.row(r).sum(), 0.0);
        }
        // Default tau = lambda_max keeps the spectrum of W inside [0, 1].
        for ev in eigenvalues(&topo.weight) {
            prop_assert!(ev >= -1e-9 && ev <= 1.0 + 1e-9, "eigenvalue {ev}");
        }
    }

    #[test]
    fn weight_spectrum_stays_in_unit_interval_for_admissible_tau(
        (n, edges) in connected_graph(),
        scale in 0.51f64..3.0,
    ) {
        let probe = build_topology(&edges, n, None).unwrap();
        let tau = scale * probe.lambda_max();
        let topo = build_topology(&edges, n, Some(tau)).unwrap();
        for ev in eigenvalues(&topo.weight) {
            prop_assert!(ev >= -1.0 - 1e-9 && ev <= 1.0 + 1e-9, "eigenvalue {ev}");
        }
    }

    #[test]
    fn dual_increment_matches_feasibility_gap(
        (n, edges) in connected_graph(),
        lambda0 in proptest::collection::vec(-5.0f64..5.0, 7),
        p0 in proptest::collection::vec(-5.0f64..5.0, 7),
        p_a in -5.0f64..5.0,
    ) {
        let topo = build_topology(&edges, n, None).unwrap();
        let mut state = AllocatorState::new(n, 0.1);
        for i in 0..n {
            state.lambda[i] = lambda0[i % lambda0.len()];
            state.p[i] = p0[i % p0.len()];
        }
        let before = state.lambda.sum();
        let gap = state.p.sum() - p_a;
        dual_step(&mut state, &topo, p_a, 0.0).unwrap();
        let after = state.lambda.sum();
        prop_assert!(
            ((after - before) - state.alpha * gap).abs() <= 1e-12,
            "conservation residual {}", (after - before) - state.alpha * gap
        );
    }

    #[test]
    fn references_from_duals_and_primals_agree(
        lambda in -100.0f64..100.0,
        nu in -100.0f64..100.0,
        beta_exp in 0f64..4.0,
        v_d in 100.0f64..500.0,
        v_q in -100.0f64..100.0,
    ) {
        let beta = 10f64.powf(beta_exp);
        let env = GridEnv::from_hz(Dq::new(v_d, v_q), 60.0);
        let cost = CostSpec::quadratic();
        let p = primal_step(lambda, beta, &cost);
        let q = primal_step(nu, beta, &cost);
        let via_primal = current_reference(p, q, &env).unwrap();
        let closed = closed_form_reference(lambda, nu, beta, &env);
        prop_assert!((via_primal - closed).norm() <= 1e-12 * closed.norm().max(1.0));
    }

    #[test]
    fn closed_form_norm_decreases_in_beta(
        lambda in prop_oneof![-100.0f64..-1e-3, 1e-3..100.0],
        nu in -100.0f64..100.0,
        beta in 1e-2f64..1e3,
        factor in 1.1f64..100.0,
    ) {
        let env = GridEnv::from_hz(Dq::new(392.0, 0.0), 60.0);
        let small = closed_form_reference(lambda, nu, beta, &env).norm();
        let large = closed_form_reference(lambda, nu, beta * factor, &env).norm();
        prop_assert!(large < small);
    }

    #[test]
    fn measured_power_pair_is_pythagorean(
        i_d in -50.0f64..50.0,
        i_q in -50.0f64..50.0,
        v_d in 1.0f64..500.0,
        v_q in -500.0f64..500.0,
    ) {
        let v = Dq::new(v_d, v_q);
        let i = Dq::new(i_d, i_q);
        let p = v.dot(i);
        let q = v.dot(i.rot_j());
        let lhs = p * p + q * q;
        let rhs = v.norm_sq() * i.norm_sq();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1.0));
    }

    #[test]
    fn projection_inequality_holds(
        r_hat in -0.29f64..0.29,
        r_true in -0.26f64..0.26,
        y in -100.0f64..100.0,
    ) {
        // r_tilde (Proj_f(r_hat, -y) + y) <= 0 whenever |r_true| <= r_bar.
        let r_bar = 0.27;
        let eps = 0.027;
        let lhs = (r_hat - r_true) * (proj_f(r_hat, -y, r_bar, eps) + y);
        prop_assert!(lhs <= 1e-9, "lhs = {lhs}");
    }

    #[test]
    fn kkt_oracle_is_feasible_and_stationary(
        beta_exps in proptest::collection::vec(-2f64..4.0, 1..=8),
        p_a in -100.0f64..100.0,
    ) {
        let beta: Vec<f64> = beta_exps.iter().map(|e| 10f64.powf(*e)).collect();
        let p = kkt_oracle(&beta, p_a);
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - p_a).abs() <= 1e-9 * p_a.abs().max(1.0));
        // KKT: beta_i p_i identical across nodes (shared multiplier).
        let m0 = beta[0] * p[0];
        for (b, pi) in beta.iter().zip(&p) {
            prop_assert!((b * pi - m0).abs() <= 1e-9 * m0.abs().max(1e-12));
        }
    }
}
