//! Ball-plate dynamics: the discrete linear model shared by the estimator
//! and both MPC layers, and the nonlinear plate acceleration used by the
//! ground-truth simulator.

#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Matrix6x2, Vector2, Vector6};

use crate::Vec2;

/// Full plant state `[x_b, dx_b, y_b, dy_b, alpha, beta]` (m, m/s, rad).
pub type State = Vector6<f64>;

/// Motor velocity input `[omega_1, omega_2]` (rad/s).
pub type Input = Vector2<f64>;

/// Index of `x_b` in [`State`].
pub const IX: usize = 0;
/// Index of `dx_b` in [`State`].
pub const IVX: usize = 1;
/// Index of `y_b` in [`State`].
pub const IY: usize = 2;
/// Index of `dy_b` in [`State`].
pub const IVY: usize = 3;
/// Index of `alpha` in [`State`].
pub const IA: usize = 4;
/// Index of `beta` in [`State`].
pub const IB: usize = 5;

/// Ball position components of a state.
pub fn position(x: &State) -> Vec2 {
    Vec2::new(x[IX], x[IY])
}

/// Ball velocity components of a state.
pub fn velocity(x: &State) -> Vec2 {
    Vec2::new(x[IVX], x[IVY])
}

/// Plate angle components of a state.
pub fn angles(x: &State) -> Vec2 {
    Vec2::new(x[IA], x[IB])
}

/// Discrete linear ball-plate model `x_{k+1} = A x_k + B u_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: nalgebra::Matrix6<f64>,
    pub b: Matrix6x2<f64>,
    pub ts: f64,
    pub k1: f64,
    pub k2: f64,
    pub g: f64,
}

/// Build the discrete model for time step `ts`, tilt gains `k1`/`k2` and
/// gravity `g`. The velocity rows couple to the angles with `-(5/7) g ts`,
/// the angle rows integrate the motor velocities with `k ts`.
pub fn build_linear_model(ts: f64, k1: f64, k2: f64, g: f64) -> LinearModel {
    assert!(ts > 0.0, "time step must be positive");
    let c = -(5.0 / 7.0) * g * ts;
    let mut a = nalgebra::Matrix6::identity();
    a[(IX, IVX)] = ts;
    a[(IY, IVY)] = ts;
    a[(IVX, IA)] = c;
    a[(IVY, IB)] = c;
    let mut b = Matrix6x2::zeros();
    b[(IA, 0)] = k1 * ts;
    b[(IB, 1)] = k2 * ts;
    LinearModel { a, b, ts, k1, k2, g }
}

impl LinearModel {
    /// Map from an effective-tilt-angle disturbance (rad, per axis) to its
    /// one-step effect on the state: the tilt accelerates the ball exactly
    /// like the plate angle does, but does not move the plate itself.
    /// Equals `(A - I) * B_d` with `B_d` the unit injection into the angle
    /// rows.
    pub fn tilt_input_matrix(&self) -> Matrix6x2<f64> {
        let c = -(5.0 / 7.0) * self.g * self.ts;
        let mut g = Matrix6x2::zeros();
        g[(IVX, 0)] = c;
        g[(IVY, 1)] = c;
        g
    }

    /// Per-step state offset produced by a tilt disturbance `d`.
    pub fn tilt_offset(&self, d: Vec2) -> State {
        self.tilt_input_matrix() * d
    }
}

/// One exact step of the linear model.
pub fn step_linear(model: &LinearModel, state: &State, input: &Input) -> State {
    model.a * state + model.b * input
}

/// Ball accelerations from the full nonlinear plate dynamics
/// (solid-ball rolling model):
///
/// (7/5) ddx = x_b da^2 + y_b da db - g sin(alpha)
/// (7/5) ddy = y_b db^2 + x_b da db - g sin(beta)
pub fn nonlinear_plate_accel(state: &State, alpha_rate: f64, beta_rate: f64, g: f64) -> Vec2 {
    let (x, y) = (state[IX], state[IY]);
    let (alpha, beta) = (state[IA], state[IB]);
    let ddx = (5.0 / 7.0) * (x * alpha_rate * alpha_rate + y * alpha_rate * beta_rate - g * alpha.sin());
    let ddy = (5.0 / 7.0) * (y * beta_rate * beta_rate + x * alpha_rate * beta_rate - g * beta.sin());
    Vec2::new(ddx, ddy)
}

/// Small-angle approximation of [`nonlinear_plate_accel`]:
/// `ddx = -(5/7) g alpha`, `ddy = -(5/7) g beta`.
pub fn linear_plate_accel(state: &State, g: f64) -> Vec2 {
    Vec2::new(-(5.0 / 7.0) * g * state[IA], -(5.0 / 7.0) * g * state[IB])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_model_closed_form_entries() {
        let m = build_linear_model(0.03, 1.0, 1.2, 9.81);
        // -(5/7) * 9.81 * 0.03
        assert_relative_eq!(m.a[(IVX, IA)], -0.21021428571428572, max_relative = 1e-12);
        assert_relative_eq!(m.a[(IVY, IB)], -0.21021428571428572, max_relative = 1e-12);
        assert_relative_eq!(m.b[(IA, 0)], 0.03, max_relative = 1e-12);
        assert_relative_eq!(m.b[(IB, 1)], 0.036, max_relative = 1e-12);
        for i in 0..6 {
            assert_eq!(m.a[(i, i)], 1.0);
        }
        assert_eq!(m.a[(IX, IVX)], 0.03);
    }

    #[test]
    fn step_linear_basics() {
        let m = build_linear_model(0.03, 1.0, 1.0, 9.81);
        let zero = State::zeros();
        assert_eq!(step_linear(&m, &zero, &Input::zeros()), zero);

        let mut x = State::zeros();
        x[IVX] = 0.1;
        let next = step_linear(&m, &x, &Input::zeros());
        assert_relative_eq!(next[IX], 0.003, max_relative = 1e-12);
        assert_eq!(next[IVX], 0.1);
        assert_eq!(next[IY], 0.0);

        let mut x = State::zeros();
        x[IA] = 0.01;
        let next = step_linear(&m, &x, &Input::zeros());
        assert_relative_eq!(next[IVX], -0.0021021428571428573, max_relative = 1e-12);
    }

    #[test]
    fn nonlinear_accel_cases() {
        let g = 9.81;
        assert_eq!(nonlinear_plate_accel(&State::zeros(), 0.0, 0.0, g), Vec2::zeros());

        // Small alpha: matches -(5/7) g alpha to O(alpha^3).
        let mut x = State::zeros();
        x[IA] = 1e-3;
        let a = nonlinear_plate_accel(&x, 0.0, 0.0, g);
        assert_relative_eq!(a.x, -(5.0 / 7.0) * g * 1e-3, max_relative = 1e-6);

        // Centrifugal term: x_b = 0.1, da = 0.2 -> (5/7) * 0.1 * 0.04
        let mut x = State::zeros();
        x[IX] = 0.1;
        let a = nonlinear_plate_accel(&x, 0.2, 0.0, g);
        assert_relative_eq!(a.x, 0.002857142857142857, max_relative = 1e-12);
        assert_eq!(a.y, 0.0);
    }

    #[test]
    fn tilt_offset_matches_angle_coupling() {
        let m = build_linear_model(0.03, 1.0, 1.0, 9.81);
        let off = m.tilt_offset(Vec2::new(0.01, -0.02));
        assert_relative_eq!(off[IVX], -0.21021428571428572 * 0.01, max_relative = 1e-12);
        assert_relative_eq!(off[IVY], -0.21021428571428572 * -0.02, max_relative = 1e-12);
        assert_eq!(off[IX], 0.0);
        assert_eq!(off[IA], 0.0);
    }
}
