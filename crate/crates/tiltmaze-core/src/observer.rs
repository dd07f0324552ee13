//! Luenberger-style disturbance compensator.
//!
//! Estimates the residual effective-tilt angle `d` (rad, per axis) of the
//! base plate from the one-step prediction error of the linear model:
//!
//! x~_{k+1} = A x^_k + B u_k + G d_k,      d_{k+1} = d_k + L (x^_k - x~_k)
//!
//! `G` routes the tilt through the model's angle-to-velocity coupling (the
//! tilt accelerates the ball but does not move the plate), and `L` corrects
//! from the velocity components of the innovation with gain magnitude 0.04.
//! With those two choices the coupled error dynamics are a stable pair of
//! second-order loops per axis and `d` converges to the true tilt, which is
//! what lets the learned angle map compensate by adding onto the angle
//! estimate. A wall heuristic freezes the estimate for one cycle while the
//! innovation is explained by wall contact instead of tilt.

#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Matrix2x6, Matrix6x2, SMatrix};

use crate::dynamics::{Input, LinearModel, State, IVX, IVY, IX, IY};
use crate::geometry::LabyrinthLayout;
use crate::Vec2;

/// Unit injection of the disturbance into the angle rows (the paper's B_d);
/// the state-update map `G` below equals `(A - I) * B_d`.
pub fn bd_matrix() -> Matrix6x2<f64> {
    let mut bd = Matrix6x2::zeros();
    bd[(crate::dynamics::IA, 0)] = 1.0;
    bd[(crate::dynamics::IB, 1)] = 1.0;
    bd
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverConfig {
    /// Magnitude of the innovation gain on the velocity rows.
    pub gain: f64,
    /// Distance from ball center to a physical wall below which the freeze
    /// heuristic may fire (defaults to r_ball + 3 mm at the call site).
    pub freeze_proximity: f64,
    pub freeze_enabled: bool,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self {
            gain: 0.04,
            freeze_proximity: 0.009,
            freeze_enabled: true,
        }
    }
}

/// Disturbance observer state: estimate `d`, one-step prediction `x~`, and
/// the constant matrices.
#[derive(Debug, Clone)]
pub struct DisturbanceObserver {
    model: LinearModel,
    cfg: ObserverConfig,
    l: Matrix2x6<f64>,
    g: Matrix6x2<f64>,
    d_hat: Vec2,
    x_pred: State,
    primed: bool,
    /// Freeze cycles taken so far (diagnostic).
    pub freezes: usize,
}

impl DisturbanceObserver {
    /// Build the observer and assert its error dynamics are stable for the
    /// given model/gain.
    pub fn new(model: LinearModel, cfg: ObserverConfig) -> Self {
        let g = model.tilt_input_matrix();
        let mut l = Matrix2x6::zeros();
        l[(0, IVX)] = -cfg.gain;
        l[(1, IVY)] = -cfg.gain;
        let rho = error_dynamics_spectral_radius(&g, &l);
        assert!(
            rho < 1.0,
            "observer error dynamics unstable (spectral radius {rho})"
        );
        Self {
            model,
            cfg,
            l,
            g,
            d_hat: Vec2::zeros(),
            x_pred: State::zeros(),
            primed: false,
            freezes: 0,
        }
    }

    pub fn disturbance(&self) -> Vec2 {
        self.d_hat
    }

    pub fn predicted_state(&self) -> &State {
        &self.x_pred
    }

    /// Correction half of the cycle: update `d` from the prediction error
    /// (unless frozen by the wall heuristic) and return the new estimate.
    /// Call once per measurement, before computing the input.
    pub fn update(&mut self, layout: &LabyrinthLayout, x_est: &State) -> Vec2 {
        self.d_prev = self.d_hat;
        if self.primed {
            let frozen = self.cfg.freeze_enabled
                && wall_freeze_heuristic(layout, &self.x_pred, x_est, self.cfg.freeze_proximity);
            if frozen {
                self.freezes += 1;
            } else {
                let err = x_est - self.x_pred;
                self.d_hat += self.l * err;
            }
        }
        self.last_est = *x_est;
        self.d_hat
    }

    /// Prediction half of the cycle, once the input for this period is
    /// known. Uses the pre-update disturbance estimate, matching the
    /// compensator equations' indexing.
    pub fn predict(&mut self, input: &Input) {
        self.x_pred =
            self.model.a * self.last_est + self.model.b * input + self.g * self.d_prev;
        self.primed = true;
    }

    /// Full cycle for callers that already know the input.
    pub fn step(&mut self, layout: &LabyrinthLayout, x_est: &State, input: &Input) -> Vec2 {
        let d = self.update(layout, x_est);
        self.predict(input);
        d
    }
}

/// True iff the predicted position is near an inflated wall and the
/// position components of the correction `x^ - x~` point into that wall:
/// the innovation is then contact, not tilt, and `d` must not absorb it.
pub fn wall_freeze_heuristic(
    layout: &LabyrinthLayout,
    x_pred: &State,
    x_est: &State,
    proximity: f64,
) -> bool {
    let p_pred = Vec2::new(x_pred[IX], x_pred[IY]);
    let correction = Vec2::new(x_est[IX] - x_pred[IX], x_est[IY] - x_pred[IY]);
    let mut nearest: Option<(f64, usize)> = None;
    for (i, w) in layout.walls.iter().enumerate() {
        let d = w.distance_inflated(p_pred, 0.0);
        if d <= proximity && nearest.map_or(true, |(dn, _)| d < dn) {
            nearest = Some((d, i));
        }
    }
    let Some((_, wi)) = nearest else {
        return false;
    };
    let wall = &layout.walls[wi];
    let (_, inward) = wall.nearest_boundary_point(p_pred, layout.r_ball);
    correction.dot(&inward) > 0.0
}

/// Spectral radius of the coupled observer error dynamics
/// `[e; delta]_{k+1} = [[0, G], [-L, I]] [e; delta]_k`.
pub fn error_dynamics_spectral_radius(g: &Matrix6x2<f64>, l: &Matrix2x6<f64>) -> f64 {
    let mut m = SMatrix::<f64, 8, 8>::zeros();
    for i in 0..6 {
        for j in 0..2 {
            m[(i, 6 + j)] = g[(i, j)];
        }
    }
    for i in 0..2 {
        for j in 0..6 {
            m[(6 + i, j)] = -l[(i, j)];
        }
        m[(6 + i, 6 + i)] = 1.0;
    }
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}
