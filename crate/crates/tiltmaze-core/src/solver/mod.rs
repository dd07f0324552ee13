//! In-repo solver for the horizon-structured nonlinear programs posed by
//! both MPC layers: a primal-dual interior-point method exploiting the
//! block-banded stage structure (cost linear in the horizon length).

pub mod band;
mod ipm;
mod nlp;

pub use ipm::{IpmSolver, NeverStop, SolveResult, SolveStatus, SolverOptions, StopSignal};
pub use nlp::{
    check_derivatives, eval_cost, kkt_residual, DerivativeReport, HorizonNlp, KktResidual,
    Multipliers, SolveError, StageCostExtra, StateConstraintStack, Trajectory,
};

#[cfg(test)]
pub mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector, Matrix6, Matrix6x2, Vector2, Vector6};
    use rand::{Rng, SeedableRng};

    /// Dense KKT oracle for equality-constrained LQ problems: stack all
    /// variables, build the full KKT matrix, solve with a dense LU.
    pub fn dense_lq_oracle(nlp: &HorizonNlp) -> Trajectory {
        let n = nlp.n;
        let nv = 8 * n + 6; // x_0..x_N (6 each) + u_0..u_{N-1} (2 each)
        let ne = 6 + 6 * n + nlp.terminal.len();
        let xi = |k: usize, i: usize| 8 * k + i;
        let ui = |k: usize, i: usize| 8 * k + 6 + i;
        let mut kkt = DMatrix::<f64>::zeros(nv + ne, nv + ne);
        let mut rhs = DVector::<f64>::zeros(nv + ne);

        for k in 1..=n {
            for i in 0..6 {
                kkt[(xi(k, i), xi(k, i))] = 2.0 * nlp.q[i];
                rhs[xi(k, i)] = 2.0 * nlp.q[i] * nlp.x_ref[k - 1][i];
            }
        }
        for k in 0..n {
            for i in 0..2 {
                kkt[(ui(k, i), ui(k, i))] = 2.0 * nlp.r[i];
                rhs[ui(k, i)] = 2.0 * nlp.r[i] * nlp.u_ref[k][i];
            }
        }
        let mut row = nv;
        for i in 0..6 {
            kkt[(row, xi(0, i))] = 1.0;
            kkt[(xi(0, i), row)] = 1.0;
            rhs[row] = nlp.x_init[i];
            row += 1;
        }
        for k in 0..n {
            for i in 0..6 {
                for j in 0..6 {
                    kkt[(row, xi(k, j))] = -nlp.a[(i, j)];
                    kkt[(xi(k, j), row)] = -nlp.a[(i, j)];
                }
                for j in 0..2 {
                    kkt[(row, ui(k, j))] = -nlp.b[(i, j)];
                    kkt[(ui(k, j), row)] = -nlp.b[(i, j)];
                }
                kkt[(row, xi(k + 1, i))] = 1.0;
                kkt[(xi(k + 1, i), row)] = 1.0;
                rhs[row] = nlp.w[i];
                row += 1;
            }
        }
        for &(idx, val) in &nlp.terminal {
            kkt[(row, xi(n, idx))] = 1.0;
            kkt[(xi(n, idx), row)] = 1.0;
            rhs[row] = val;
            row += 1;
        }
        let sol = kkt.lu().solve(&rhs).expect("dense KKT solvable");
        Trajectory {
            states: (0..=n)
                .map(|k| Vector6::from_fn(|i, _| sol[xi(k, i)]))
                .collect(),
            inputs: (0..n)
                .map(|k| Vector2::from_fn(|i, _| sol[ui(k, i)]))
                .collect(),
        }
    }

    pub fn random_lq(rng: &mut impl Rng, n: usize) -> HorizonNlp {
        let ts = 0.03;
        let mut a = Matrix6::identity();
        a[(0, 1)] = ts;
        a[(2, 3)] = ts;
        a[(1, 4)] = rng.random_range(-0.4..-0.05);
        a[(3, 5)] = rng.random_range(-0.4..-0.05);
        let mut b = Matrix6x2::zeros();
        b[(4, 0)] = rng.random_range(0.01..0.06);
        b[(5, 1)] = rng.random_range(0.01..0.06);
        let q = Vector6::from_fn(|_, _| rng.random_range(0.01..10.0));
        let r = Vector2::from_fn(|_, _| rng.random_range(0.05..1.0));
        let x0 = Vector6::from_fn(|_, _| rng.random_range(-0.1..0.1));
        let mut nlp = HorizonNlp::lq(n, a, b, q, r, x0);
        nlp.w = Vector6::from_fn(|_, _| rng.random_range(-1e-3..1e-3));
        for xr in nlp.x_ref.iter_mut() {
            *xr = Vector6::from_fn(|i, _| if i % 2 == 0 { rng.random_range(-0.1..0.1) } else { 0.0 });
        }
        nlp
    }

    #[test]
    fn unconstrained_lq_matches_dense_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let mut solver = IpmSolver::default();
        for trial in 0..50 {
            let n = rng.random_range(2..=20);
            let nlp = random_lq(&mut rng, n);
            let oracle = dense_lq_oracle(&nlp);
            let res = solver.solve(&nlp, &NeverStop).unwrap();
            assert_eq!(res.status, SolveStatus::Solved, "trial {trial}");
            let mut err = 0.0f64;
            for k in 0..=n {
                err = err.max((res.trajectory.states[k] - oracle.states[k]).amax());
            }
            for k in 0..n {
                err = err.max((res.trajectory.inputs[k] - oracle.inputs[k]).amax());
            }
            assert!(err < 1e-8, "trial {trial}: max-norm gap {err}");
        }
    }

    #[test]
    fn lq_with_terminal_rows_matches_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut solver = IpmSolver::default();
        for _ in 0..10 {
            let n = rng.random_range(3..=15);
            let mut nlp = random_lq(&mut rng, n);
            nlp.terminal = alloc::vec![
                (0, rng.random_range(-0.05..0.05)),
                (2, rng.random_range(-0.05..0.05)),
            ];
            let oracle = dense_lq_oracle(&nlp);
            let res = solver.solve(&nlp, &NeverStop).unwrap();
            assert_eq!(res.status, SolveStatus::Solved);
            for k in 0..=n {
                assert!((res.trajectory.states[k] - oracle.states[k]).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn optimal_guess_converges_immediately() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let nlp0 = random_lq(&mut rng, 10);
        let mut solver = IpmSolver::default();
        let first = solver.solve(&nlp0, &NeverStop).unwrap();
        let mut nlp = random_lq(&mut rng, 10);
        nlp.a = nlp0.a;
        nlp.b = nlp0.b;
        nlp.q = nlp0.q;
        nlp.r = nlp0.r;
        nlp.w = nlp0.w;
        nlp.x_ref = nlp0.x_ref.clone();
        nlp.u_ref = nlp0.u_ref.clone();
        nlp.x_init = nlp0.x_init;
        nlp.guess_x = first.trajectory.states.clone();
        nlp.guess_u = first.trajectory.inputs.clone();
        nlp.warm_start = true;
        let res = solver.solve(&nlp, &NeverStop).unwrap();
        assert_eq!(res.status, SolveStatus::Solved);
        assert!(res.iterations <= 2, "took {} iterations", res.iterations);
        assert!((res.trajectory.states[10] - first.trajectory.states[10]).amax() < 1e-7);
    }

    #[test]
    fn kkt_residual_zero_at_oracle_positive_at_random() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let nlp = random_lq(&mut rng, 6);
        let mut solver = IpmSolver::default();
        let res = solver.solve(&nlp, &NeverStop).unwrap();
        let at_solution = kkt_residual(&nlp, &res.trajectory, &res.multipliers);
        assert!(at_solution.max() <= solver.opts.kkt_tol * 10.0);

        let mut random_traj = res.trajectory.clone();
        random_traj.states[3][0] += 0.01;
        let at_random = kkt_residual(&nlp, &random_traj, &res.multipliers);
        assert!(at_random.max() > 1e-4);
    }

    #[test]
    fn one_stage_problem_reaches_hand_grade_residual() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let nlp = random_lq(&mut rng, 1);
        let mut solver = IpmSolver::default();
        let res = solver.solve(&nlp, &NeverStop).unwrap();
        let oracle = dense_lq_oracle(&nlp);
        assert!((res.trajectory.inputs[0] - oracle.inputs[0]).amax() < 1e-9);
        let kkt = kkt_residual(&nlp, &res.trajectory, &res.multipliers);
        assert!(kkt.max() < 1e-10, "residual {:?}", kkt);
    }

    #[test]
    fn derivative_checker_on_lq_cost() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let nlp = random_lq(&mut rng, 8);
        let traj = Trajectory {
            states: (0..=8)
                .map(|_| Vector6::from_fn(|_, _| rng.random_range(-0.1..0.1)))
                .collect(),
            inputs: (0..8)
                .map(|_| Vector2::from_fn(|_, _| rng.random_range(-1.0..1.0)))
                .collect(),
        };
        let rep = check_derivatives(&nlp, &traj, 1e-6);
        assert!(rep.max() < 1e-6, "{rep:?}");
    }

    #[test]
    fn box_constrained_lq_respects_bounds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut solver = IpmSolver::default();
        for _ in 0..10 {
            let mut nlp = random_lq(&mut rng, 12);
            nlp.u_lo = Vector2::repeat(-0.5);
            nlp.u_hi = Vector2::repeat(0.5);
            nlp.x_lo[4] = -0.05;
            nlp.x_hi[4] = 0.05;
            nlp.x_lo[5] = -0.05;
            nlp.x_hi[5] = 0.05;
            // Keep the initial angles inside the box so the problem is feasible.
            nlp.x_init[4] = nlp.x_init[4].clamp(-0.04, 0.04);
            nlp.x_init[5] = nlp.x_init[5].clamp(-0.04, 0.04);
            nlp.guess_x = alloc::vec![nlp.x_init; 13];
            let res = solver.solve(&nlp, &NeverStop).unwrap();
            assert_eq!(res.status, SolveStatus::Solved);
            for u in &res.trajectory.inputs {
                assert!(u.amax() <= 0.5 + 1e-6);
            }
            for x in res.trajectory.states.iter().skip(1) {
                assert!(x[4].abs() <= 0.05 + 1e-6 && x[5].abs() <= 0.05 + 1e-6);
            }
        }
    }

    #[test]
    fn infeasible_terminal_is_never_reported_solved() {
        // Two terminal rows demanding different values of the same state
        // component cannot both hold.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let mut nlp = random_lq(&mut rng, 5);
        nlp.terminal = alloc::vec![(0, 0.05), (0, -0.05)];
        let mut solver = IpmSolver::default();
        let res = solver.solve(&nlp, &NeverStop).unwrap();
        assert_ne!(res.status, SolveStatus::Solved);
    }

    #[test]
    fn stop_signal_yields_timeout_with_best_iterate() {
        struct StopNow;
        impl StopSignal for StopNow {
            fn should_stop(&self) -> bool {
                true
            }
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let nlp = random_lq(&mut rng, 15);
        let mut solver = IpmSolver::default();
        let res = solver.solve(&nlp, &StopNow).unwrap();
        assert_eq!(res.status, SolveStatus::Timeout);
        assert_eq!(res.trajectory.states.len(), 16);
        assert_eq!(res.iterations, 0);
    }
}
