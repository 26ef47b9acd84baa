//! Inverted pendulum with a saturated torque, augmented with an input state.
//!
//! States are `(x1, x2, xu)`: angle from upright, angular velocity and the
//! commanded torque, whose rate `v` is the input.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::explore::DEFAULT_LAMBDA;
use crate::gp::PolyKernel;
use crate::orchestrator::{LearnConfig, SystemSpec};
use crate::poly::{PolyMatrix, PolyVector, Polynomial};
use crate::roa::SynthesisOptions;
use crate::sim::TrueSystem;

pub const SYSTEM_NAME: &str = "pendulum-sat";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumParams {
    /// kg
    pub mass: f64,
    /// m
    pub length: f64,
    /// N m s / rad
    pub friction: f64,
    /// m / s^2
    pub gravity: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            mass: 0.15,
            length: 0.5,
            friction: 0.05,
            gravity: 9.81,
        }
    }
}

impl PendulumParams {
    /// Torque that holds the pendulum at 30 degrees from upright.
    pub fn u_max(&self) -> f64 {
        self.mass * self.gravity * self.length * 30f64.to_radians().sin()
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("mass", self.mass),
            ("length", self.length),
            ("friction", self.friction),
            ("gravity", self.gravity),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    fn inertia(&self) -> f64 {
        self.mass * self.length * self.length
    }
}

/// `x1' = x2`, `x2' = (g/l) sin x1 - mu/(M l^2) x2 + Sat(xu)/(M l^2)`, `xu' = v`.
pub fn true_dynamics(p: &PendulumParams) -> TrueSystem {
    let (gl, damp, gain, umax) = (p.gravity / p.length, p.friction / p.inertia(), 1.0 / p.inertia(), p.u_max());
    TrueSystem::new(
        3,
        1,
        Arc::new(move |x: &[f64], u: &[f64]| {
            let sat = x[2].clamp(-umax, umax);
            vec![x[1], gl * x[0].sin() - damp * x[1] + gain * sat, u[0]]
        }),
    )
    .expect("pendulum rests at the origin")
}

/// Linearization used as the known part of the dynamics.
pub fn baseline_model(p: &PendulumParams) -> (PolyVector, PolyMatrix) {
    let n = 3;
    let f = PolyVector::new(
        vec![
            Polynomial::var(n, 1),
            Polynomial::linear(&[p.gravity / p.length, -p.friction / p.inertia(), 1.0 / p.inertia()]),
            Polynomial::zero(n),
        ],
        n,
    );
    let g = PolyMatrix::constant(&DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]), n);
    (f, g)
}

/// Only the angular acceleration carries unmodeled dynamics.
pub const ACTIVE_OUTPUTS: [usize; 1] = [1];

pub fn prior_kernel() -> PolyKernel {
    PolyKernel::new(vec![0.075, 0.075, 1.5]).expect("valid weights")
}

/// The benchmark configuration: one explore-and-refit iteration from 3 degrees,
/// with 14 degrees queued for a second.
pub fn default_config() -> LearnConfig {
    LearnConfig {
        system: SystemSpec::PendulumSat {
            params: PendulumParams::default(),
        },
        kernel: prior_kernel(),
        noise_reg: 0.01,
        eta: 3.0,
        synthesis: SynthesisOptions::default(),
        iterations: 1,
        initial_conditions: vec![rest_state(3.0), rest_state(14.0)],
        dt: 0.01,
        horizon: 10.0,
        stride: 5,
        label_noise: 0.0,
        lambda: DEFAULT_LAMBDA,
        volume_samples: 100_000,
        seed: 0,
        output_dir: None,
    }
}

/// Rest state at `deg` degrees from upright.
pub fn rest_state(deg: f64) -> Vec<f64> {
    vec![deg.to_radians(), 0.0, 0.0]
}
