//! Discrete time-varying prediction model around a nominal trajectory.
//!
//! State ordering (13): `[ẋ, ẏ, ż, θp, φp, θ̇p, φ̇p, θc, φc, ψc, θ̇c, φ̇c, ψ̇c]`.
//! Control ordering (6): `[ẍ, ÿ, z̈, θ̈c, φ̈c, ψ̈c]`.
//!
//! The pendulum block is the small-angle form of the slosh dynamics with the
//! bilinear `z̈·θ`, `z̈·φ` terms kept and linearized about the nominal point:
//! `θ̈ = -(g + z̈)/l·θ - ẍ/l`, `φ̈ = -(g + z̈)/l·φ + ÿ/l`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slosh::PendulumParams;

pub const STATE_DIM: usize = 13;
pub const CONTROL_DIM: usize = 6;

pub type MpcState = SVector<f64, STATE_DIM>;
pub type ControlInput = SVector<f64, CONTROL_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, CONTROL_DIM>;

/// Named positions inside [`MpcState`].
pub mod idx {
    pub const VX: usize = 0;
    pub const VY: usize = 1;
    pub const VZ: usize = 2;
    pub const THETA_P: usize = 3;
    pub const PHI_P: usize = 4;
    pub const THETA_P_DOT: usize = 5;
    pub const PHI_P_DOT: usize = 6;
    pub const THETA_C: usize = 7;
    pub const PHI_C: usize = 8;
    pub const PSI_C: usize = 9;
    pub const THETA_C_DOT: usize = 10;
    pub const PHI_C_DOT: usize = 11;
    pub const PSI_C_DOT: usize = 12;

    /// Indices of the six Cartesian velocity components (linear then angular).
    pub const VELOCITY: [usize; 6] = [VX, VY, VZ, THETA_C_DOT, PHI_C_DOT, PSI_C_DOT];
}

/// Six-component Cartesian velocity of a state, linear then angular.
pub fn velocity_of(x: &MpcState) -> SVector<f64, 6> {
    SVector::<f64, 6>::from_fn(|i, _| x[idx::VELOCITY[i]])
}

/// Operating point for the bilinear terms at one horizon step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NominalPoint {
    pub zdd: f64,
    pub theta_p: f64,
    pub phi_p: f64,
}

/// Per-step `(A_k, B_k)` pairs of the prediction model.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub steps: Vec<(StateMatrix, InputMatrix)>,
    pub dt: f64,
}

/// Pendulum position gain `α_k` of the discrete pendulum block.
pub fn alpha(nominal_zdd: f64, p: &PendulumParams, dt: f64) -> f64 {
    1.0 - (p.gravity + nominal_zdd) * dt * dt / (2.0 * p.rod_length)
}

/// Pendulum rate gain `β_k` of the discrete pendulum block.
pub fn beta(nominal_zdd: f64, p: &PendulumParams, dt: f64) -> f64 {
    -(p.gravity + nominal_zdd) * dt / p.rod_length
}

pub fn build_step_model(
    nominal: &NominalPoint,
    p: &PendulumParams,
    dt: f64,
) -> (StateMatrix, InputMatrix) {
    let l = p.rod_length;
    let a_k = alpha(nominal.zdd, p, dt);
    let b_k = beta(nominal.zdd, p, dt);
    let gamma = dt * dt / (2.0 * l);
    let rate = dt / l;

    let mut a = StateMatrix::identity();
    // pendulum block [θ, φ, θ̇, φ̇]
    for (pos, vel) in [
        (idx::THETA_P, idx::THETA_P_DOT),
        (idx::PHI_P, idx::PHI_P_DOT),
    ] {
        a[(pos, pos)] = a_k;
        a[(pos, vel)] = dt;
        a[(vel, pos)] = b_k;
    }
    // container orientation: double integrator
    for (pos, vel) in [
        (idx::THETA_C, idx::THETA_C_DOT),
        (idx::PHI_C, idx::PHI_C_DOT),
        (idx::PSI_C, idx::PSI_C_DOT),
    ] {
        a[(pos, vel)] = dt;
    }

    let mut b = InputMatrix::zeros();
    for i in 0..3 {
        b[(idx::VX + i, i)] = dt;
    }
    b[(idx::THETA_P, 0)] = -gamma;
    b[(idx::THETA_P, 2)] = -gamma * nominal.theta_p;
    b[(idx::PHI_P, 1)] = gamma;
    b[(idx::PHI_P, 2)] = -gamma * nominal.phi_p;
    b[(idx::THETA_P_DOT, 0)] = -rate;
    b[(idx::THETA_P_DOT, 2)] = -rate * nominal.theta_p;
    b[(idx::PHI_P_DOT, 1)] = rate;
    b[(idx::PHI_P_DOT, 2)] = -rate * nominal.phi_p;
    for i in 0..3 {
        b[(idx::THETA_C + i, 3 + i)] = 0.5 * dt * dt;
        b[(idx::THETA_C_DOT + i, 3 + i)] = dt;
    }
    (a, b)
}

impl LinearModel {
    pub fn build(nominal: &[NominalPoint], p: &PendulumParams, dt: f64) -> Result<Self> {
        p.validate()?;
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive, got {dt}"
            )));
        }
        Ok(Self {
            steps: nominal.iter().map(|n| build_step_model(n, p, dt)).collect(),
            dt,
        })
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Applies `x_{k+1} = A_k x_k + B_k u_k`; returns `controls.len() + 1` states.
    pub fn rollout(&self, x0: &MpcState, controls: &[ControlInput]) -> Result<Vec<MpcState>> {
        if controls.len() > self.horizon() {
            return Err(Error::HorizonMismatch {
                model: self.horizon(),
                given: controls.len(),
            });
        }
        let mut out = Vec::with_capacity(controls.len() + 1);
        out.push(*x0);
        let mut x = *x0;
        for ((a, b), u) in self.steps.iter().zip(controls) {
            x = a * x + b * u;
            out.push(x);
        }
        Ok(out)
    }
}
