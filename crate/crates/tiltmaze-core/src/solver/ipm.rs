//! Primal-dual interior-point iteration on the horizon NLP.
//!
//! Slack formulation: every one-sided inequality row `g_i(z) >= 0` gets a
//! slack `s_i > 0` with log-barrier, the linear dynamics stay as equality
//! rows. Each Newton step solves the condensed symmetric KKT system on the
//! interleaved stage ordering with the banded quasidefinite LDL^T from
//! [`super::band`], followed by a fraction-to-boundary rule and an Armijo
//! backtracking line search on an l1 merit function. The barrier parameter
//! decreases by a fixed factor once the perturbed KKT error is small enough.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Matrix6, Vector2, Vector6};

use super::band::BandMatrix;
use super::nlp::{
    eval_cost, eval_cost_grad, eval_eq, eval_ineq, eval_stationarity, n_eq, HorizonNlp,
    IneqLayout, Multipliers, SolveError, Trajectory,
};

/// External stop request (wall-clock budget, abort flag). Checked once per
/// interior-point iteration.
pub trait StopSignal {
    fn should_stop(&self) -> bool;
}

/// Never stops; the default for pure in-process solves.
pub struct NeverStop;

impl StopSignal for NeverStop {
    fn should_stop(&self) -> bool {
        false
    }
}

impl StopSignal for core::sync::atomic::AtomicBool {
    fn should_stop(&self) -> bool {
        self.load(core::sync::atomic::Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// KKT conditions satisfied within tolerance; all constraints hold.
    Solved,
    MaxIter,
    Infeasible,
    /// Stopped by the external signal; carries the best iterate so far.
    Timeout,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub trajectory: Trajectory,
    pub multipliers: Multipliers,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Wall time in seconds, stamped by callers that have a clock; the core
    /// solver leaves it at zero.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub kkt_tol: f64,
    pub eq_tol: f64,
    pub mu_init: f64,
    pub mu_init_warm: f64,
    pub mu_min: f64,
    pub mu_factor: f64,
    pub max_iter: usize,
    pub tau: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-7,
            eq_tol: 1e-9,
            mu_init: 1e-2,
            mu_init_warm: 1e-4,
            mu_min: 1e-10,
            mu_factor: 0.2,
            max_iter: 200,
            tau: 0.995,
        }
    }
}

/// Interior-point solver. One instance per control loop; instances share no
/// state and may run on separate threads.
#[derive(Debug, Clone, Default)]
pub struct IpmSolver {
    pub opts: SolverOptions,
}

/// Global band-matrix index map for the interleaved stage ordering
/// `[y_init | x_0 u_0 y_0 | x_1 u_1 y_1 | ... | x_N | y_term]`.
struct IndexMap {
    n: usize,
    n_term: usize,
}

impl IndexMap {
    const BW: usize = 13;

    fn x(&self, k: usize, i: usize) -> usize {
        6 + 14 * k + i
    }
    fn u(&self, k: usize, i: usize) -> usize {
        6 + 14 * k + 6 + i
    }
    fn y_init(&self, i: usize) -> usize {
        i
    }
    fn y_dyn(&self, k: usize, i: usize) -> usize {
        6 + 14 * k + 8 + i
    }
    fn y_term(&self, t: usize) -> usize {
        12 + 14 * self.n + t
    }
    fn total(&self) -> usize {
        12 + 14 * self.n + self.n_term
    }

    fn pivot_signs(&self) -> Vec<i8> {
        let mut s = vec![1i8; self.total()];
        for i in 0..6 {
            s[self.y_init(i)] = -1;
        }
        for k in 0..self.n {
            for i in 0..6 {
                s[self.y_dyn(k, i)] = -1;
            }
        }
        for t in 0..self.n_term {
            s[self.y_term(t)] = -1;
        }
        s
    }
}

struct Iterate {
    traj: Trajectory,
    s: Vec<f64>,
    lam: Vec<f64>,
    y: Vec<f64>,
}

impl IpmSolver {
    pub fn new(opts: SolverOptions) -> Self {
        Self { opts }
    }

    pub fn solve(&mut self, nlp: &HorizonNlp, stop: &dyn StopSignal) -> Result<SolveResult, SolveError> {
        nlp.validate()?;
        let o = self.opts;
        let lay = IneqLayout::new(nlp);
        let map = IndexMap {
            n: nlp.n,
            n_term: nlp.terminal.len(),
        };
        let n = nlp.n;
        let n_ineq = lay.total;
        let n_eq_rows = n_eq(nlp);

        // Initial point.
        let mut cur = Iterate {
            traj: Trajectory {
                states: nlp.guess_x.clone(),
                inputs: nlp.guess_u.clone(),
            },
            s: vec![0.0; n_ineq],
            lam: vec![0.0; n_ineq],
            y: vec![0.0; n_eq_rows],
        };
        cur.traj.states[0] = nlp.x_init;
        check_finite(&cur.traj)?;

        let mut mu = if nlp.warm_start { o.mu_init_warm } else { o.mu_init };
        let mut g = vec![0.0; n_ineq];
        eval_ineq(nlp, &lay, &cur.traj, &mut g);
        ensure_finite_rows(&g, &lay, "inequality value")?;
        for i in 0..n_ineq {
            cur.s[i] = g[i].max(1e-4);
            cur.lam[i] = (mu / cur.s[i]).clamp(1e-10, 1e4);
        }

        let mut ceq = vec![0.0; n_eq_rows];
        let mut sx = vec![Vector6::zeros(); n + 1];
        let mut su = vec![Vector2::zeros(); n];
        let mut band = BandMatrix::new(map.total(), IndexMap::BW);
        let mut band_fac = BandMatrix::new(map.total(), IndexMap::BW);
        let signs = map.pivot_signs();
        let mut rhs = vec![0.0; map.total()];
        let mut jac = vec![vec![[0.0f64; 6]; lay.m_nl]; n + 1];
        let mut nl_lb = vec![0.0; lay.m_nl];
        let mut nu = 1.0f64;
        let mut delta_w_last = 0.0f64;

        let mut best: Option<(f64, Trajectory, Multipliers, f64)> = None;
        let mut small_step_streak = 0usize;

        let mut iterations = 0;
        let max_iter = o.max_iter;
        loop {
            // Residuals at the current point.
            eval_ineq(nlp, &lay, &cur.traj, &mut g);
            ensure_finite_rows(&g, &lay, "inequality value")?;
            eval_eq(nlp, &cur.traj, &mut ceq);
            let mult = Multipliers {
                eq: cur.y.clone(),
                ineq: cur.lam.clone(),
            };
            eval_stationarity(nlp, &lay, &cur.traj, &mult, &mut sx, &mut su);

            let stat_norm = sx
                .iter()
                .map(|v| v.amax())
                .chain(su.iter().map(|v| v.amax()))
                .fold(0.0, f64::max);
            let eq_norm = ceq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let rg_norm = (0..n_ineq).fold(0.0f64, |m, i| m.max((g[i] - cur.s[i]).abs()));
            let comp0 = (0..n_ineq).fold(0.0f64, |m, i| m.max((cur.s[i] * cur.lam[i]).abs()));
            let comp_mu = (0..n_ineq).fold(0.0f64, |m, i| m.max((cur.s[i] * cur.lam[i] - mu).abs()));
            let kkt0 = stat_norm.max(eq_norm).max(rg_norm).max(comp0);

            // Track the best (most feasible, then most stationary) iterate
            // for timeout returns.
            let score = eq_norm.max(rg_norm) * 10.0 + stat_norm.min(1.0);
            if best.as_ref().map_or(true, |(s, ..)| score < *s) {
                best = Some((score, cur.traj.clone(), mult.clone(), kkt0));
            }

            if stat_norm <= o.kkt_tol.max(1e-7)
                && eq_norm <= o.eq_tol
                && rg_norm <= 1e-8
                && comp0 <= o.kkt_tol.max(1e-7)
            {
                return Ok(SolveResult {
                    status: SolveStatus::Solved,
                    trajectory: cur.traj,
                    multipliers: mult,
                    kkt_residual: kkt0,
                    iterations,
                    wall_time: 0.0,
                });
            }
            if stop.should_stop() {
                let (_, traj, mult, kkt) = best.unwrap();
                return Ok(SolveResult {
                    status: SolveStatus::Timeout,
                    trajectory: traj,
                    multipliers: mult,
                    kkt_residual: kkt,
                    iterations,
                    wall_time: 0.0,
                });
            }
            if iterations >= max_iter {
                let infeasible = eq_norm.max(rg_norm) > 1e-4 || g.iter().any(|v| *v < -1e-4);
                let (_, traj, mult, kkt) = best.unwrap();
                return Ok(SolveResult {
                    status: if infeasible { SolveStatus::Infeasible } else { SolveStatus::MaxIter },
                    trajectory: traj,
                    multipliers: mult,
                    kkt_residual: kkt,
                    iterations,
                    wall_time: 0.0,
                });
            }
            iterations += 1;

            // Barrier update once the perturbed system is solved well enough.
            let kkt_mu = stat_norm.max(eq_norm).max(rg_norm).max(comp_mu);
            if kkt_mu <= 10.0 * mu {
                mu = (mu * o.mu_factor).max(o.mu_min);
            }

            // Nonlinear Jacobians per stage.
            if let Some(stack) = &nlp.stage_ineq {
                for k in 1..=n {
                    stack.jacobian(&cur.traj.states[k], &mut jac[k]);
                }
            }

            // Assemble the condensed KKT system, then factor a regularized
            // copy (bumping the primal regularization until the pivot signs
            // come out quasidefinite).
            assemble(nlp, &lay, &map, &cur, &g, mu, &sx, &su, &jac, &mut band, &mut rhs);
            let mut delta_w = 0.0f64;
            loop {
                band_fac.clone_from(&band);
                for i in 0..map.total() {
                    if signs[i] > 0 {
                        if delta_w > 0.0 {
                            band_fac.add(i, i, delta_w);
                        }
                    } else {
                        band_fac.add(i, i, -DELTA_C);
                    }
                }
                match band_fac.factor_ldlt(&signs) {
                    Ok(()) => break,
                    Err(_) => {
                        delta_w = if delta_w == 0.0 {
                            (delta_w_last * 0.3).max(1e-8)
                        } else {
                            delta_w * 10.0
                        };
                        if delta_w > 1e8 {
                            return Err(SolveError::NonFinite {
                                stage: 0,
                                what: "KKT factorization",
                            });
                        }
                    }
                }
            }
            delta_w_last = delta_w;

            // Solve + iterative refinement against the system without the
            // dual regularization (the intended Hessian bump delta_w stays).
            let mut sol = rhs.clone();
            band_fac.solve(&mut sol);
            let mut resid = vec![0.0; map.total()];
            for _ in 0..2 {
                band.matvec(&sol, &mut resid);
                for i in 0..map.total() {
                    let reg = if signs[i] > 0 { delta_w * sol[i] } else { 0.0 };
                    resid[i] = rhs[i] - resid[i] - reg;
                }
                band_fac.solve(&mut resid);
                for i in 0..map.total() {
                    sol[i] += resid[i];
                }
            }
            let rhs = &sol;

            // Unpack the step.
            let mut dx = vec![Vector6::zeros(); n + 1];
            let mut du = vec![Vector2::zeros(); n];
            for k in 0..=n {
                for i in 0..6 {
                    dx[k][i] = rhs[map.x(k, i)];
                }
                if k < n {
                    for i in 0..2 {
                        du[k][i] = rhs[map.u(k, i)];
                    }
                }
            }
            let mut dy = vec![0.0; n_eq_rows];
            for i in 0..6 {
                dy[i] = -rhs[map.y_init(i)];
            }
            for k in 0..n {
                for i in 0..6 {
                    dy[6 + 6 * k + i] = -rhs[map.y_dyn(k, i)];
                }
            }
            for t in 0..map.n_term {
                dy[6 + 6 * n + t] = -rhs[map.y_term(t)];
            }

            // Slack and inequality-multiplier steps.
            let mut ds = vec![0.0; n_ineq];
            let mut dlam = vec![0.0; n_ineq];
            row_directional(nlp, &lay, &jac, &dx, &du, &mut ds);
            for i in 0..n_ineq {
                ds[i] += g[i] - cur.s[i];
                let sigma = cur.lam[i] / cur.s[i];
                dlam[i] = -cur.lam[i] + mu / cur.s[i] - sigma * ds[i];
            }

            // Fraction-to-boundary.
            let tau = o.tau;
            let mut alpha_s = 1.0f64;
            for i in 0..n_ineq {
                if ds[i] < 0.0 {
                    alpha_s = alpha_s.min(-tau * cur.s[i] / ds[i]);
                }
            }
            let mut alpha_lam = 1.0f64;
            for i in 0..n_ineq {
                if dlam[i] < 0.0 {
                    alpha_lam = alpha_lam.min(-tau * cur.lam[i] / dlam[i]);
                }
            }

            // Merit line search on the primal step.
            let mult_peak = dy
                .iter()
                .zip(&cur.y)
                .map(|(d, y)| (y + d).abs())
                .chain(dlam.iter().zip(&cur.lam).map(|(d, l)| (l + d).abs()))
                .fold(0.0, f64::max);
            nu = nu.max(1.2 * mult_peak).min(1e8);

            let viol0: f64 = ceq.iter().map(|v| v.abs()).sum::<f64>()
                + (0..n_ineq).map(|i| (g[i] - cur.s[i]).abs()).sum::<f64>();
            let f0 = eval_cost(nlp, &cur.traj);
            let barrier0: f64 = cur.s.iter().map(|s| s.ln()).sum();
            let phi0 = f0 - mu * barrier0 + nu * viol0;
            let mut gx = vec![Vector6::zeros(); n + 1];
            let mut gu = vec![Vector2::zeros(); n];
            eval_cost_grad(nlp, &cur.traj, &mut gx, &mut gu);
            let descent: f64 = (0..=n).map(|k| gx[k].dot(&dx[k])).sum::<f64>()
                + (0..n).map(|k| gu[k].dot(&du[k])).sum::<f64>()
                - mu * (0..n_ineq).map(|i| ds[i] / cur.s[i]).sum::<f64>()
                - nu * viol0;

            let mut alpha = alpha_s;
            let mut accepted = false;
            let mut trial = cur.traj.clone();
            let mut trial_s = cur.s.clone();
            let mut trial_g = vec![0.0; n_ineq];
            let mut trial_ceq = vec![0.0; n_eq_rows];
            for _ in 0..30 {
                for k in 0..=n {
                    trial.states[k] = cur.traj.states[k] + alpha * dx[k];
                    if k < n {
                        trial.inputs[k] = cur.traj.inputs[k] + alpha * du[k];
                    }
                }
                for i in 0..n_ineq {
                    trial_s[i] = cur.s[i] + alpha * ds[i];
                }
                eval_ineq(nlp, &lay, &trial, &mut trial_g);
                eval_eq(nlp, &trial, &mut trial_ceq);
                let viol: f64 = trial_ceq.iter().map(|v| v.abs()).sum::<f64>()
                    + (0..n_ineq).map(|i| (trial_g[i] - trial_s[i]).abs()).sum::<f64>();
                let barrier: f64 = trial_s.iter().map(|s| s.ln()).sum();
                let phi = eval_cost(nlp, &trial) - mu * barrier + nu * viol;
                if phi.is_finite() && phi <= phi0 + 1e-4 * alpha * descent.min(0.0) {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                alpha = alpha_s.min(1e-12);
                for k in 0..=n {
                    trial.states[k] = cur.traj.states[k] + alpha * dx[k];
                    if k < n {
                        trial.inputs[k] = cur.traj.inputs[k] + alpha * du[k];
                    }
                }
                for i in 0..n_ineq {
                    trial_s[i] = cur.s[i] + alpha * ds[i];
                }
            }

            cur.traj = trial.clone();
            for i in 0..n_ineq {
                cur.s[i] = trial_s[i].max(1e-300);
                cur.lam[i] = (cur.lam[i] + alpha_lam * dlam[i]).max(1e-300);
            }
            for i in 0..n_eq_rows {
                cur.y[i] += alpha * dy[i];
            }

            if alpha < 1e-10 {
                small_step_streak += 1;
                if small_step_streak >= 3 {
                    let eq_bad = eq_norm.max(rg_norm) > 100.0 * o.kkt_tol;
                    let (_, traj, mult, kkt) = best.unwrap();
                    return Ok(SolveResult {
                        status: if eq_bad { SolveStatus::Infeasible } else { SolveStatus::MaxIter },
                        trajectory: traj,
                        multipliers: mult,
                        kkt_residual: kkt,
                        iterations,
                        wall_time: 0.0,
                    });
                }
            } else {
                small_step_streak = 0;
            }
        }
    }
}

/// Directional derivative of every inequality row along `(dx, du)`.
fn row_directional(
    nlp: &HorizonNlp,
    lay: &IneqLayout,
    jac: &[Vec<[f64; 6]>],
    dx: &[Vector6<f64>],
    du: &[Vector2<f64>],
    out: &mut [f64],
) {
    for k in 0..=nlp.n {
        let mut at = lay.offsets[k];
        if k >= 1 {
            for row in &lay.x_rows {
                out[at] = row.sign * dx[k][row.idx];
                at += 1;
            }
            for j in 0..lay.m_nl {
                let mut v = 0.0;
                for i in 0..6 {
                    v += jac[k][j][i] * dx[k][i];
                }
                out[at] = v;
                at += 1;
            }
        }
        if k < nlp.n {
            for row in &lay.u_rows {
                out[at] = row.sign * du[k][row.idx];
                at += 1;
            }
        }
    }
}

/// Dual-row regularization making the KKT matrix quasidefinite; its effect
/// on the step is removed again by iterative refinement.
const DELTA_C: f64 = 1e-12;

/// Assemble the condensed KKT band matrix and right-hand side (without any
/// regularization).
#[allow(clippy::too_many_arguments)]
fn assemble(
    nlp: &HorizonNlp,
    lay: &IneqLayout,
    map: &IndexMap,
    cur: &Iterate,
    g: &[f64],
    mu: f64,
    sx: &[Vector6<f64>],
    su: &[Vector2<f64>],
    jac: &[Vec<[f64; 6]>],
    band: &mut BandMatrix,
    rhs: &mut [f64],
) {
    let n = nlp.n;
    band.reset();
    rhs.fill(0.0);

    // rho per inequality row: -lam + mu/s - sigma (g - s).
    let rho = |i: usize| {
        let sigma = cur.lam[i] / cur.s[i];
        -cur.lam[i] + mu / cur.s[i] - sigma * (g[i] - cur.s[i])
    };

    for k in 0..=n {
        // Hessian blocks.
        let mut hxx = Matrix6::zeros();
        if k >= 1 {
            for i in 0..6 {
                hxx[(i, i)] += 2.0 * nlp.q[i];
            }
            if let Some(extra) = &nlp.extra_cost {
                let mut eh = Matrix6::zeros();
                extra.hessian(&cur.traj.states[k], &mut eh);
                hxx += eh;
            }
        }
        // Inequality rows of this stage.
        let mut at = lay.offsets[k];
        if k >= 1 {
            for (r, row) in lay.x_rows.iter().enumerate() {
                let i = at + r;
                let sigma = cur.lam[i] / cur.s[i];
                hxx[(row.idx, row.idx)] += sigma; // sign^2 = 1
                rhs[map.x(k, row.idx)] += row.sign * rho(i);
            }
            at += lay.x_rows.len();
            if let Some(stack) = &nlp.stage_ineq {
                // Lagrangian curvature of the nonlinear rows.
                let lam_rows = &cur.lam[at..at + lay.m_nl];
                let mut wh = Matrix6::zeros();
                stack.weighted_hessian(&cur.traj.states[k], lam_rows, &mut wh);
                hxx -= wh;
                for j in 0..lay.m_nl {
                    let i = at + j;
                    let sigma = cur.lam[i] / cur.s[i];
                    let jr = &jac[k][j];
                    for a in 0..6 {
                        if jr[a] == 0.0 {
                            continue;
                        }
                        for b in 0..=a {
                            if jr[b] != 0.0 {
                                hxx[(a, b)] += sigma * jr[a] * jr[b];
                            }
                        }
                        rhs[map.x(k, a)] += jr[a] * rho(i);
                    }
                }
                at += lay.m_nl;
            }
        }
        for a in 0..6 {
            for b in 0..=a {
                let v = hxx[(a, b)];
                if v != 0.0 {
                    band.add(map.x(k, a), map.x(k, b), v);
                }
            }
            rhs[map.x(k, a)] -= sx[k][a];
        }

        if k < n {
            let mut huu = [2.0 * nlp.r[0], 2.0 * nlp.r[1]];
            for (r, row) in lay.u_rows.iter().enumerate() {
                let i = at + r;
                let sigma = cur.lam[i] / cur.s[i];
                huu[row.idx] += sigma;
                rhs[map.u(k, row.idx)] += row.sign * rho(i);
            }
            for i in 0..2 {
                band.add(map.u(k, i), map.u(k, i), huu[i]);
                rhs[map.u(k, i)] -= su[k][i];
            }
        }
    }

    // Equality rows.
    for i in 0..6 {
        band.add(map.y_init(i), map.x(0, i), 1.0);
        rhs[map.y_init(i)] = -(cur.traj.states[0][i] - nlp.x_init[i]);
    }
    for k in 0..n {
        let r = cur.traj.states[k + 1] - nlp.a * cur.traj.states[k] - nlp.b * cur.traj.inputs[k] - nlp.w;
        for i in 0..6 {
            let row = map.y_dyn(k, i);
            for j in 0..6 {
                if nlp.a[(i, j)] != 0.0 {
                    band.add(row, map.x(k, j), -nlp.a[(i, j)]);
                }
            }
            for j in 0..2 {
                if nlp.b[(i, j)] != 0.0 {
                    band.add(row, map.u(k, j), -nlp.b[(i, j)]);
                }
            }
            band.add(row, map.x(k + 1, i), 1.0);
            rhs[row] = -r[i];
        }
    }
    for (t, &(idx, val)) in nlp.terminal.iter().enumerate() {
        let row = map.y_term(t);
        band.add(row, map.x(n, idx), 1.0);
        rhs[row] = -(cur.traj.states[n][idx] - val);
    }
}

fn check_finite(traj: &Trajectory) -> Result<(), SolveError> {
    for (k, x) in traj.states.iter().enumerate() {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SolveError::NonFinite { stage: k, what: "state" });
        }
    }
    for (k, u) in traj.inputs.iter().enumerate() {
        if !u.iter().all(|v| v.is_finite()) {
            return Err(SolveError::NonFinite { stage: k, what: "input" });
        }
    }
    Ok(())
}

fn ensure_finite_rows(g: &[f64], lay: &IneqLayout, what: &'static str) -> Result<(), SolveError> {
    for (i, v) in g.iter().enumerate() {
        if !v.is_finite() {
            let stage = lay
                .offsets
                .iter()
                .rposition(|&o| o <= i)
                .unwrap_or(0);
            return Err(SolveError::NonFinite { stage, what });
        }
    }
    Ok(())
}
