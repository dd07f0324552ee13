//! Core algorithms for steering a ball through a tilting labyrinth.
//!
//! Everything in this crate is deterministic, allocation-only math: the
//! labyrinth geometry and its constraint primitives, the ball-plate model
//! and ground-truth simulator, the estimation stack (Kalman filter,
//! disturbance observer, feed-forward angle map), an interior-point solver
//! for horizon-structured nonlinear programs, the two MPC layers built on
//! it, baseline controllers, and the closed-loop runner used for
//! benchmarking. File formats, the CLI and wall-clock execution live in the
//! companion `tiltmaze-cli` crate.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the `std` feature
//! (default) only switches dependency features, no API changes.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod anglemap;
pub mod baselines;
pub mod dynamics;
pub mod estimator;
pub mod geometry;
pub mod hl;
pub mod ll;
pub mod observer;
pub mod runner;
pub mod sim;
pub mod solver;

pub use dynamics::{Input, LinearModel, State};
pub use geometry::LabyrinthLayout;

/// 2D position / vector in plate coordinates, metres.
pub type Vec2 = nalgebra::Vector2<f64>;
