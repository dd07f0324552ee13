//! Kalman filter over the linear ball-plate model.
//!
//! Measurements are the simulator's noisy `(x_b, y_b, alpha, beta)`; the
//! filter runs at the measurement rate, so its model time step is the
//! control period rather than the MPC step.

use nalgebra::{Matrix4, Matrix4x6, Matrix6, Matrix6x4, Vector4, Vector6};

use crate::dynamics::{step_linear, Input, LinearModel, State, IA, IB, IX, IY};
use crate::sim::Measurement;

/// Measurement matrix: picks `(x_b, y_b, alpha, beta)` out of the state.
fn measurement_matrix() -> Matrix4x6<f64> {
    let mut c = Matrix4x6::zeros();
    c[(0, IX)] = 1.0;
    c[(1, IY)] = 1.0;
    c[(2, IA)] = 1.0;
    c[(3, IB)] = 1.0;
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanConfig {
    /// Process noise diagonal (state order).
    pub process_noise: Vector6<f64>,
    /// Measurement noise standard deviations: position (m), angle (rad).
    pub meas_std_pos: f64,
    pub meas_std_ang: f64,
    /// Initial covariance diagonal.
    pub initial_cov: Vector6<f64>,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            // Velocities and angles absorb the unmodeled actuation/tilt
            // effects; positions are nearly exact integrals.
            process_noise: Vector6::new(1e-9, 4e-6, 1e-9, 4e-6, 4e-7, 4e-7),
            meas_std_pos: 0.5e-3,
            meas_std_ang: 2.0e-3,
            initial_cov: Vector6::new(1e-4, 1e-3, 1e-4, 1e-3, 1e-4, 1e-4),
        }
    }
}

/// Filter state: mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: State,
    pub cov: Matrix6<f64>,
}

#[derive(Debug, Clone)]
pub struct KalmanFilter {
    pub model: LinearModel,
    pub state: KalmanState,
    q: Matrix6<f64>,
    r: Matrix4<f64>,
    /// Number of times the covariance needed the symmetrize-and-clamp
    /// recovery (surfaced by the harness log).
    pub spd_recoveries: usize,
}

impl KalmanFilter {
    pub fn new(model: LinearModel, cfg: &KalmanConfig, initial_mean: State) -> Self {
        let q = Matrix6::from_diagonal(&cfg.process_noise);
        let r = Matrix4::from_diagonal(&Vector4::new(
            (cfg.meas_std_pos * cfg.meas_std_pos).max(1e-16),
            (cfg.meas_std_pos * cfg.meas_std_pos).max(1e-16),
            (cfg.meas_std_ang * cfg.meas_std_ang).max(1e-16),
            (cfg.meas_std_ang * cfg.meas_std_ang).max(1e-16),
        ));
        Self {
            model,
            state: KalmanState {
                mean: initial_mean,
                cov: Matrix6::from_diagonal(&cfg.initial_cov),
            },
            q,
            r,
            spd_recoveries: 0,
        }
    }

    /// Start the mean from the first measurement with zero velocities.
    pub fn from_first_measurement(model: LinearModel, cfg: &KalmanConfig, z: &Measurement) -> Self {
        let mut mean = State::zeros();
        mean[IX] = z[0];
        mean[IY] = z[1];
        mean[IA] = z[2];
        mean[IB] = z[3];
        Self::new(model, cfg, mean)
    }

    /// Time update with the applied input.
    pub fn predict(&mut self, input: &Input) {
        self.state.mean = step_linear(&self.model, &self.state.mean, input);
        self.state.cov = self.model.a * self.state.cov * self.model.a.transpose() + self.q;
        self.ensure_spd();
    }

    /// Measurement update (Joseph form).
    pub fn update(&mut self, z: &Measurement) {
        let c = measurement_matrix();
        let s = c * self.state.cov * c.transpose() + self.r;
        let s_inv = s.try_inverse().unwrap_or_else(|| {
            self.spd_recoveries += 1;
            (s + Matrix4::identity() * 1e-12)
                .try_inverse()
                .unwrap_or_else(Matrix4::identity)
        });
        let k: Matrix6x4<f64> = self.state.cov * c.transpose() * s_inv;
        let innovation = z - c * self.state.mean;
        self.state.mean += k * innovation;
        let ikc = Matrix6::identity() - k * c;
        self.state.cov = ikc * self.state.cov * ikc.transpose() + k * self.r * k.transpose();
        self.ensure_spd();
    }

    /// Symmetrize, and clamp eigenvalues if the covariance lost positive
    /// semidefiniteness to roundoff.
    fn ensure_spd(&mut self) {
        let sym = (self.state.cov + self.state.cov.transpose()) * 0.5;
        self.state.cov = sym;
        // Cheap necessary condition first; full eigen clamp only on failure.
        let bad_diag = (0..6).any(|i| !(self.state.cov[(i, i)] > 0.0));
        if bad_diag || !self.state.cov.iter().all(|v| v.is_finite()) {
            self.spd_recoveries += 1;
            let eig = nalgebra::SymmetricEigen::new(self.state.cov);
            let clamped = Vector6::from_fn(|i, _| eig.eigenvalues[i].max(1e-14));
            self.state.cov =
                eig.eigenvectors * Matrix6::from_diagonal(&clamped) * eig.eigenvectors.transpose();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::build_linear_model;
    use rand::{Rng, SeedableRng};

    fn model() -> LinearModel {
        build_linear_model(1.0 / 55.0, 1.0, 1.0, 9.81)
    }

    #[test]
    fn noiseless_estimate_converges_to_truth() {
        let m = model();
        let mut cfg = KalmanConfig::default();
        cfg.meas_std_pos = 0.0;
        cfg.meas_std_ang = 0.0;
        let mut truth = State::zeros();
        truth[IX] = 0.03;
        truth[crate::dynamics::IVX] = 0.05;
        truth[IA] = 0.01;
        let mut kf = KalmanFilter::new(m.clone(), &cfg, State::zeros());
        let u = Input::new(0.1, -0.1);
        for _ in 0..300 {
            truth = step_linear(&m, &truth, &u);
            kf.predict(&u);
            let z = Measurement::new(truth[IX], truth[IY], truth[IA], truth[IB]);
            kf.update(&z);
        }
        assert!((kf.state.mean - truth).amax() < 1e-6, "err {}", (kf.state.mean - truth).amax());
    }

    #[test]
    fn zero_innovation_leaves_mean_unchanged() {
        let m = model();
        let mut kf = KalmanFilter::new(m, &KalmanConfig::default(), State::zeros());
        let u = Input::new(0.2, 0.0);
        kf.predict(&u);
        let predicted = kf.state.mean;
        let z = Measurement::new(predicted[IX], predicted[IY], predicted[IA], predicted[IB]);
        kf.update(&z);
        assert_eq!(kf.state.mean, predicted);
    }

    /// Plain textbook filter (no Joseph form) as an independent oracle.
    struct NaiveKf {
        x: State,
        p: Matrix6<f64>,
    }

    impl NaiveKf {
        fn step(&mut self, m: &LinearModel, q: &Matrix6<f64>, r: &Matrix4<f64>, u: &Input, z: &Measurement) {
            self.x = step_linear(m, &self.x, u);
            self.p = m.a * self.p * m.a.transpose() + q;
            let c = measurement_matrix();
            let s = c * self.p * c.transpose() + r;
            let k = self.p * c.transpose() * s.try_inverse().unwrap();
            self.x += k * (z - c * self.x);
            self.p = (Matrix6::identity() - k * c) * self.p;
        }
    }

    #[test]
    fn matches_textbook_oracle_step_by_step() {
        let m = model();
        let cfg = KalmanConfig::default();
        let mut kf = KalmanFilter::new(m.clone(), &cfg, State::zeros());
        let q = Matrix6::from_diagonal(&cfg.process_noise);
        let r = Matrix4::from_diagonal(&Vector4::new(
            cfg.meas_std_pos.powi(2),
            cfg.meas_std_pos.powi(2),
            cfg.meas_std_ang.powi(2),
            cfg.meas_std_ang.powi(2),
        ));
        let mut oracle = NaiveKf {
            x: State::zeros(),
            p: Matrix6::from_diagonal(&cfg.initial_cov),
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let u = Input::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let z = Measurement::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
            );
            kf.predict(&u);
            kf.update(&z);
            oracle.step(&m, &q, &r, &u, &z);
            assert!((kf.state.mean - oracle.x).amax() < 1e-12);
            assert!((kf.state.cov - oracle.p).amax() < 1e-12);
        }
    }

    #[test]
    fn covariance_stays_spd_over_many_random_steps() {
        let m = model();
        let cfg = KalmanConfig::default();
        let mut kf = KalmanFilter::new(m, &cfg, State::zeros());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100_000 {
            let u = Input::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            kf.predict(&u);
            if rng.random_range(0.0..1.0) < 0.9 {
                let z = Measurement::new(
                    rng.random_range(-0.13..0.13),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                );
                kf.update(&z);
            }
            // SPD check via Cholesky on a subsample to keep the test fast.
        }
        let chol = nalgebra::Cholesky::new(kf.state.cov + Matrix6::identity() * 1e-18);
        assert!(chol.is_some(), "covariance lost positive definiteness");
        assert_eq!(kf.spd_recoveries, 0);
    }
}
