//! Horizon-structured NLP description and its evaluation machinery.
//!
//! Decision variables are the stacked stage states and inputs (direct
//! transcription); the linear dynamics stay as equality constraints so the
//! KKT system keeps its block-banded structure. Nonlinear inequality rows
//! and the optional smooth extra cost are supplied per problem family
//! through the two traits below, with hand-coded derivatives.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Matrix6, Matrix6x2, Vector2, Vector6};

/// Per-stage stack of nonlinear one-sided inequality rows
/// `h_i(x) >= lower_i(stage)`, functions of the stage state only.
pub trait StateConstraintStack: Send + Sync {
    fn dim(&self) -> usize;
    /// Lower bounds for the given stage (bounds may be relaxed for the first
    /// stages when the initial state starts in contact).
    fn lower_bounds(&self, stage: usize, out: &mut [f64]);
    fn eval(&self, x: &Vector6<f64>, out: &mut [f64]);
    /// Dense Jacobian rows with respect to the stage state.
    fn jacobian(&self, x: &Vector6<f64>, out: &mut [[f64; 6]]);
    /// Accumulate `sum_i lam[i] * Hess(h_i)(x)` into `out`.
    fn weighted_hessian(&self, x: &Vector6<f64>, lam: &[f64], out: &mut Matrix6<f64>);
}

/// Smooth extra cost term added at stages 1..=N (e.g. the soft obstacle
/// penalty of the tracking layer).
pub trait StageCostExtra: Send + Sync {
    fn eval(&self, x: &Vector6<f64>) -> f64;
    fn gradient(&self, x: &Vector6<f64>, out: &mut Vector6<f64>);
    /// Exact Hessian (may be indefinite; the solver regularizes).
    fn hessian(&self, x: &Vector6<f64>, out: &mut Matrix6<f64>);
}

/// Direct-transcription NLP over a horizon of `n` steps.
///
/// Stage cost is `(x_k - x_ref[k-1])' diag(q) (x_k - x_ref[k-1])` for
/// k = 1..=n plus `(u_k - u_ref[k])' diag(r) (u_k - u_ref[k])` for
/// k = 0..n-1, plus the optional extra term. Box bounds use +-infinity for
/// absent sides. `terminal` pins individual components of the final state.
pub struct HorizonNlp {
    pub n: usize,
    pub a: Matrix6<f64>,
    pub b: Matrix6x2<f64>,
    /// Affine dynamics offset (disturbance compensation term).
    pub w: Vector6<f64>,
    pub x_init: Vector6<f64>,
    /// `(state index, value)` equality rows on the final state.
    pub terminal: Vec<(usize, f64)>,
    pub q: Vector6<f64>,
    pub r: Vector2<f64>,
    /// References for stages 1..=n.
    pub x_ref: Vec<Vector6<f64>>,
    /// References for inputs 0..n-1.
    pub u_ref: Vec<Vector2<f64>>,
    pub x_lo: Vector6<f64>,
    pub x_hi: Vector6<f64>,
    pub u_lo: Vector2<f64>,
    pub u_hi: Vector2<f64>,
    pub stage_ineq: Option<Box<dyn StateConstraintStack>>,
    pub extra_cost: Option<Box<dyn StageCostExtra>>,
    /// Initial guess, stages 0..=n and 0..n-1 (entry 0 of `guess_x` is
    /// overridden by `x_init`).
    pub guess_x: Vec<Vector6<f64>>,
    pub guess_u: Vec<Vector2<f64>>,
    /// Hint that the guess comes from a previous solution.
    pub warm_start: bool,
}

impl HorizonNlp {
    /// Unconstrained LQ skeleton with zero references and free bounds.
    pub fn lq(n: usize, a: Matrix6<f64>, b: Matrix6x2<f64>, q: Vector6<f64>, r: Vector2<f64>, x_init: Vector6<f64>) -> Self {
        let inf = f64::INFINITY;
        Self {
            n,
            a,
            b,
            w: Vector6::zeros(),
            x_init,
            terminal: Vec::new(),
            q,
            r,
            x_ref: vec![Vector6::zeros(); n],
            u_ref: vec![Vector2::zeros(); n],
            x_lo: Vector6::repeat(-inf),
            x_hi: Vector6::repeat(inf),
            u_lo: Vector2::repeat(-inf),
            u_hi: Vector2::repeat(inf),
            stage_ineq: None,
            extra_cost: None,
            guess_x: vec![x_init; n + 1],
            guess_u: vec![Vector2::zeros(); n],
            warm_start: false,
        }
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let n = self.n;
        let dims_ok = n >= 1
            && self.x_ref.len() == n
            && self.u_ref.len() == n
            && self.guess_x.len() == n + 1
            && self.guess_u.len() == n
            && self.terminal.iter().all(|(i, _)| *i < 6);
        if !dims_ok {
            return Err(SolveError::Dimension);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SolveError {
    #[error("inconsistent problem dimensions")]
    Dimension,
    #[error("non-finite {what} at stage {stage}")]
    NonFinite { stage: usize, what: &'static str },
}

/// One-sided box row `g = sign * z[i] + offset >= 0`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BoxRow {
    pub idx: usize,
    pub sign: f64,
    pub offset: f64,
}

fn box_rows(lo: &[f64], hi: &[f64]) -> Vec<BoxRow> {
    let mut rows = Vec::new();
    for i in 0..lo.len() {
        if lo[i].is_finite() {
            rows.push(BoxRow { idx: i, sign: 1.0, offset: -lo[i] });
        }
        if hi[i].is_finite() {
            rows.push(BoxRow { idx: i, sign: -1.0, offset: hi[i] });
        }
    }
    rows
}

/// Precomputed inequality-row layout. Stage rows are ordered: state box rows
/// (stages 1..=N), nonlinear rows (stages 1..=N), input box rows
/// (stages 0..N-1).
pub(crate) struct IneqLayout {
    pub x_rows: Vec<BoxRow>,
    pub u_rows: Vec<BoxRow>,
    pub m_nl: usize,
    pub offsets: Vec<usize>,
    pub total: usize,
}

impl IneqLayout {
    pub fn new(nlp: &HorizonNlp) -> Self {
        let x_rows = box_rows(nlp.x_lo.as_slice(), nlp.x_hi.as_slice());
        let u_rows = box_rows(nlp.u_lo.as_slice(), nlp.u_hi.as_slice());
        let m_nl = nlp.stage_ineq.as_ref().map_or(0, |s| s.dim());
        let mut offsets = Vec::with_capacity(nlp.n + 2);
        let mut acc = 0;
        for k in 0..=nlp.n {
            offsets.push(acc);
            if k >= 1 {
                acc += x_rows.len() + m_nl;
            }
            if k < nlp.n {
                acc += u_rows.len();
            }
        }
        offsets.push(acc);
        Self {
            x_rows,
            u_rows,
            m_nl,
            offsets,
            total: acc,
        }
    }

    pub fn stage_rows(&self, k: usize) -> core::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }
}

/// Candidate primal point, stage-structured.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vector6<f64>>,
    pub inputs: Vec<Vector2<f64>>,
}

/// Equality/inequality multipliers paired with a [`Trajectory`].
#[derive(Debug, Clone, Default)]
pub struct Multipliers {
    /// Ordered: initial-state rows (6), dynamics rows (6 per stage),
    /// terminal rows.
    pub eq: Vec<f64>,
    /// Ordered per [`IneqLayout`].
    pub ineq: Vec<f64>,
}

/// Evaluate all inequality rows at a trajectory; `out` has layout order.
pub(crate) fn eval_ineq(nlp: &HorizonNlp, lay: &IneqLayout, traj: &Trajectory, out: &mut [f64]) {
    let mut nl_vals = vec![0.0; lay.m_nl];
    let mut nl_lb = vec![0.0; lay.m_nl];
    for k in 0..=nlp.n {
        let mut at = lay.offsets[k];
        if k >= 1 {
            let x = &traj.states[k];
            for row in &lay.x_rows {
                out[at] = row.sign * x[row.idx] + row.offset;
                at += 1;
            }
            if let Some(stack) = &nlp.stage_ineq {
                stack.eval(x, &mut nl_vals);
                stack.lower_bounds(k, &mut nl_lb);
                for j in 0..lay.m_nl {
                    out[at] = nl_vals[j] - nl_lb[j];
                    at += 1;
                }
            }
        }
        if k < nlp.n {
            let u = &traj.inputs[k];
            for row in &lay.u_rows {
                out[at] = row.sign * u[row.idx] + row.offset;
                at += 1;
            }
        }
    }
}

/// Equality residuals: initial state, dynamics, terminal rows (in multiplier
/// order).
pub(crate) fn eval_eq(nlp: &HorizonNlp, traj: &Trajectory, out: &mut [f64]) {
    let mut at = 0;
    let r0 = traj.states[0] - nlp.x_init;
    out[at..at + 6].copy_from_slice(r0.as_slice());
    at += 6;
    for k in 0..nlp.n {
        let r = traj.states[k + 1] - nlp.a * traj.states[k] - nlp.b * traj.inputs[k] - nlp.w;
        out[at..at + 6].copy_from_slice(r.as_slice());
        at += 6;
    }
    for &(idx, val) in &nlp.terminal {
        out[at] = traj.states[nlp.n][idx] - val;
        at += 1;
    }
}

pub(crate) fn n_eq(nlp: &HorizonNlp) -> usize {
    6 + 6 * nlp.n + nlp.terminal.len()
}

/// Total cost at a trajectory.
pub fn eval_cost(nlp: &HorizonNlp, traj: &Trajectory) -> f64 {
    let mut f = 0.0;
    for k in 1..=nlp.n {
        let dx = traj.states[k] - nlp.x_ref[k - 1];
        for i in 0..6 {
            f += nlp.q[i] * dx[i] * dx[i];
        }
        if let Some(extra) = &nlp.extra_cost {
            f += extra.eval(&traj.states[k]);
        }
    }
    for k in 0..nlp.n {
        let du = traj.inputs[k] - nlp.u_ref[k];
        for i in 0..2 {
            f += nlp.r[i] * du[i] * du[i];
        }
    }
    f
}

/// Cost gradient blocks: per-state (stages 0..=n; stage 0 block is zero) and
/// per-input.
pub(crate) fn eval_cost_grad(
    nlp: &HorizonNlp,
    traj: &Trajectory,
    gx: &mut [Vector6<f64>],
    gu: &mut [Vector2<f64>],
) {
    gx[0] = Vector6::zeros();
    for k in 1..=nlp.n {
        let dx = traj.states[k] - nlp.x_ref[k - 1];
        let mut g = Vector6::zeros();
        for i in 0..6 {
            g[i] = 2.0 * nlp.q[i] * dx[i];
        }
        if let Some(extra) = &nlp.extra_cost {
            let mut eg = Vector6::zeros();
            extra.gradient(&traj.states[k], &mut eg);
            g += eg;
        }
        gx[k] = g;
    }
    for k in 0..nlp.n {
        let du = traj.inputs[k] - nlp.u_ref[k];
        gu[k] = Vector2::new(2.0 * nlp.r[0] * du[0], 2.0 * nlp.r[1] * du[1]);
    }
}

/// Stationarity blocks of the Lagrangian gradient:
/// `grad f - C' y - G' lam` per state/input block.
pub(crate) fn eval_stationarity(
    nlp: &HorizonNlp,
    lay: &IneqLayout,
    traj: &Trajectory,
    mult: &Multipliers,
    sx: &mut [Vector6<f64>],
    su: &mut [Vector2<f64>],
) {
    let n = nlp.n;
    let mut gx = vec![Vector6::zeros(); n + 1];
    let mut gu = vec![Vector2::zeros(); n];
    eval_cost_grad(nlp, traj, &mut gx, &mut gu);

    let y_init = Vector6::from_column_slice(&mult.eq[0..6]);
    let y_dyn = |k: usize| Vector6::from_column_slice(&mult.eq[6 + 6 * k..12 + 6 * k]);

    for k in 0..=n {
        let mut s = gx[k];
        if k == 0 {
            s -= y_init;
            s += nlp.a.transpose() * y_dyn(0);
        } else {
            s -= y_dyn(k - 1);
            if k < n {
                s += nlp.a.transpose() * y_dyn(k);
            }
        }
        if k == n {
            for (t, &(idx, _)) in nlp.terminal.iter().enumerate() {
                s[idx] -= mult.eq[6 + 6 * n + t];
            }
        }
        sx[k] = s;
    }
    for k in 0..n {
        su[k] = gu[k] + nlp.b.transpose() * y_dyn(k);
    }

    // Inequality contributions: -G' lam.
    let mut jac = vec![[0.0; 6]; lay.m_nl];
    for k in 0..=n {
        let mut at = lay.offsets[k];
        if k >= 1 {
            for row in &lay.x_rows {
                sx[k][row.idx] -= mult.ineq[at] * row.sign;
                at += 1;
            }
            if let Some(stack) = &nlp.stage_ineq {
                stack.jacobian(&traj.states[k], &mut jac);
                for j in 0..lay.m_nl {
                    let lam = mult.ineq[at];
                    for i in 0..6 {
                        sx[k][i] -= lam * jac[j][i];
                    }
                    at += 1;
                }
            }
        }
        if k < n {
            for row in &lay.u_rows {
                su[k][row.idx] -= mult.ineq[at] * row.sign;
                at += 1;
            }
        }
    }
}

/// Report from [`kkt_residual`]: max-norms of the three KKT residual groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.complementarity)
    }
}

/// KKT residual (max-norms of stationarity, primal feasibility and
/// complementarity) of a candidate point with multipliers.
pub fn kkt_residual(nlp: &HorizonNlp, traj: &Trajectory, mult: &Multipliers) -> KktResidual {
    let lay = IneqLayout::new(nlp);
    let mut sx = vec![Vector6::zeros(); nlp.n + 1];
    let mut su = vec![Vector2::zeros(); nlp.n];
    eval_stationarity(nlp, &lay, traj, mult, &mut sx, &mut su);
    let stationarity = sx
        .iter()
        .map(|v| v.amax())
        .chain(su.iter().map(|v| v.amax()))
        .fold(0.0, f64::max);

    let mut ceq = vec![0.0; n_eq(nlp)];
    eval_eq(nlp, traj, &mut ceq);
    let mut g = vec![0.0; lay.total];
    eval_ineq(nlp, &lay, traj, &mut g);
    let feas_eq = ceq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let feas_in = g.iter().fold(0.0f64, |m, v| m.max((-v).max(0.0)));
    let comp = g
        .iter()
        .zip(&mult.ineq)
        .fold(0.0f64, |m, (gi, li)| m.max((gi * li).abs()));
    KktResidual {
        stationarity,
        feasibility: feas_eq.max(feas_in),
        complementarity: comp,
    }
}

/// Max relative errors of the hand-coded derivatives against central finite
/// differences at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeReport {
    pub cost_gradient: f64,
    pub ineq_jacobian: f64,
    pub dynamics_jacobian: f64,
}

impl DerivativeReport {
    pub fn max(&self) -> f64 {
        self.cost_gradient.max(self.ineq_jacobian).max(self.dynamics_jacobian)
    }
}

/// Compare analytic cost gradient / constraint Jacobians against central
/// finite differences with step `fd_step`.
pub fn check_derivatives(nlp: &HorizonNlp, traj: &Trajectory, fd_step: f64) -> DerivativeReport {
    let lay = IneqLayout::new(nlp);
    let n = nlp.n;
    let rel = |analytic: f64, fd: f64| (analytic - fd).abs() / analytic.abs().max(1.0);

    let mut gx = vec![Vector6::zeros(); n + 1];
    let mut gu = vec![Vector2::zeros(); n];
    eval_cost_grad(nlp, traj, &mut gx, &mut gu);

    let mut worst_cost = 0.0f64;
    let mut t = traj.clone();
    for k in 0..=n {
        for i in 0..6 {
            let base = t.states[k][i];
            t.states[k][i] = base + fd_step;
            let fp = eval_cost(nlp, &t);
            t.states[k][i] = base - fd_step;
            let fm = eval_cost(nlp, &t);
            t.states[k][i] = base;
            worst_cost = worst_cost.max(rel(gx[k][i], (fp - fm) / (2.0 * fd_step)));
        }
    }
    for k in 0..n {
        for i in 0..2 {
            let base = t.inputs[k][i];
            t.inputs[k][i] = base + fd_step;
            let fp = eval_cost(nlp, &t);
            t.inputs[k][i] = base - fd_step;
            let fm = eval_cost(nlp, &t);
            t.inputs[k][i] = base;
            worst_cost = worst_cost.max(rel(gu[k][i], (fp - fm) / (2.0 * fd_step)));
        }
    }

    // Nonlinear inequality Jacobians (box rows are exact by construction).
    let mut worst_ineq = 0.0f64;
    if let Some(stack) = &nlp.stage_ineq {
        let m = stack.dim();
        let mut jac = vec![[0.0; 6]; m];
        let mut vp = vec![0.0; m];
        let mut vm = vec![0.0; m];
        for k in 1..=n {
            stack.jacobian(&traj.states[k], &mut jac);
            let mut x = traj.states[k];
            for i in 0..6 {
                let base = x[i];
                x[i] = base + fd_step;
                stack.eval(&x, &mut vp);
                x[i] = base - fd_step;
                stack.eval(&x, &mut vm);
                x[i] = base;
                for j in 0..m {
                    worst_ineq = worst_ineq.max(rel(jac[j][i], (vp[j] - vm[j]) / (2.0 * fd_step)));
                }
            }
        }
    }

    // Dynamics rows are linear; their Jacobian is (A, B, -I) exactly.
    let mut worst_dyn = 0.0f64;
    let mut ceq = vec![0.0; n_eq(nlp)];
    let mut ceq_p = vec![0.0; n_eq(nlp)];
    let mut ceq_m = vec![0.0; n_eq(nlp)];
    eval_eq(nlp, traj, &mut ceq);
    let mut t = traj.clone();
    for k in 0..=n.min(1) {
        for i in 0..6 {
            let base = t.states[k][i];
            t.states[k][i] = base + fd_step;
            eval_eq(nlp, &t, &mut ceq_p);
            t.states[k][i] = base - fd_step;
            eval_eq(nlp, &t, &mut ceq_m);
            t.states[k][i] = base;
            for r in 0..12.min(n_eq(nlp)) {
                let fd = (ceq_p[r] - ceq_m[r]) / (2.0 * fd_step);
                let analytic = if r < 6 {
                    if k == 0 && r == i { 1.0 } else { 0.0 }
                } else {
                    let rr = r - 6;
                    if k == 0 {
                        -nlp.a[(rr, i)]
                    } else if k == 1 && rr == i {
                        1.0
                    } else if k == 1 {
                        0.0
                    } else {
                        0.0
                    }
                };
                worst_dyn = worst_dyn.max(rel(analytic, fd));
            }
        }
    }

    DerivativeReport {
        cost_gradient: worst_cost,
        ineq_jacobian: worst_ineq,
        dynamics_jacobian: worst_dyn,
    }
}
