//! Ground-truth plant: container motion (task space or through the arm) and
//! the nonlinear spherical pendulum.

use nalgebra::{SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{rotation_vector, JointState, RobotModel};
use crate::model::{idx, ControlInput, MpcState};
use crate::rac::{RacController, RacWeights};
use crate::slosh::{integrate_pendulum, PendulumParams, PendulumState, PivotAcceleration};

pub type Velocity6 = SVector<f64, 6>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    TaskSpace,
    JointSpace,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "task_space" | "task" => Ok(Mode::TaskSpace),
            "joint_space" | "joint" => Ok(Mode::JointSpace),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub time: f64,
    pub position: Vector3<f64>,
    /// Container orientation deviation `(θc, φc, ψc)` [rad].
    pub orientation: Vector3<f64>,
    /// Linear then angular velocity, world frame.
    pub velocity: Velocity6,
    pub pendulum: PendulumState,
    pub joints: Option<JointState>,
}

impl PlantState {
    /// Container moving with `velocity`, liquid surface level.
    pub fn moving(velocity: Velocity6) -> Self {
        let mut s = Self {
            time: 0.0,
            position: Vector3::zeros(),
            orientation: Vector3::zeros(),
            velocity,
            pendulum: PendulumState::default(),
            joints: None,
        };
        s.pin_pendulum();
        s
    }

    pub fn at_rest() -> Self {
        Self::moving(Velocity6::zeros())
    }

    /// Level liquid surface: pendulum tilt and tilt rate follow the container.
    pub fn pin_pendulum(&mut self) {
        self.pendulum = PendulumState::new(
            self.orientation[0],
            self.orientation[1],
            self.velocity[3],
            self.velocity[4],
        );
    }

    /// `(θp − θc, φp − φc)` [rad].
    pub fn relative_tilt(&self) -> (f64, f64) {
        (
            self.pendulum.theta - self.orientation[0],
            self.pendulum.phi - self.orientation[1],
        )
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.pendulum.is_finite()
    }

    /// Planner state built from the measured container motion and a pendulum
    /// estimate.
    pub fn mpc_state(&self, pendulum: &PendulumState) -> MpcState {
        let mut x = MpcState::zeros();
        for (c, &i) in idx::VELOCITY.iter().enumerate() {
            x[i] = self.velocity[c];
        }
        x[idx::THETA_P] = pendulum.theta;
        x[idx::PHI_P] = pendulum.phi;
        x[idx::THETA_P_DOT] = pendulum.theta_dot;
        x[idx::PHI_P_DOT] = pendulum.phi_dot;
        x[idx::THETA_C] = self.orientation[0];
        x[idx::PHI_C] = self.orientation[1];
        x[idx::PSI_C] = self.orientation[2];
        x
    }
}

/// Result of one plant step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    /// Acceleration actually realized by the container.
    pub realized: ControlInput,
    /// RAC task-space slack (zero in task-space mode).
    pub slack: ControlInput,
}

#[derive(Debug, Clone)]
struct Arm {
    robot: RobotModel,
    rac: RacController,
    reference: UnitQuaternion<f64>,
}

#[derive(Debug, Clone)]
pub struct Plant {
    pub state: PlantState,
    pub params: PendulumParams,
    pub dt: f64,
    /// Before the trigger the liquid is held level with the container.
    pub slosh_active: bool,
    arm: Option<Arm>,
}

impl Plant {
    pub fn task_space(state: PlantState, params: PendulumParams, dt: f64) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "plant dt must be positive, got {dt}"
            )));
        }
        Ok(Self {
            state,
            params,
            dt,
            slosh_active: false,
            arm: None,
        })
    }

    /// Arm-driven plant starting at joint configuration `q` with joint rates
    /// chosen to realize `state.velocity` (least-squares through `J⁺`).
    pub fn joint_space(
        mut state: PlantState,
        params: PendulumParams,
        dt: f64,
        robot: RobotModel,
        q: crate::kinematics::JointVector,
        weights: RacWeights,
    ) -> Result<Self> {
        robot.validate()?;
        let j = robot.jacobian(&q);
        let qd = j
            .pseudo_inverse(1e-9)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            * state.velocity;
        let js = JointState { q, qd };
        if !robot.within_limits(&js, 0.0) {
            return Err(Error::InvalidParameter(
                "initial joint state violates the robot limits".into(),
            ));
        }
        let pose = robot.forward_kinematics(&q);
        state.position = pose.translation.vector;
        state.orientation = Vector3::zeros();
        state.velocity = j * qd;
        state.joints = Some(js);
        state.pin_pendulum();
        let mut plant = Self::task_space(state, params, dt)?;
        plant.arm = Some(Arm {
            robot,
            rac: RacController::new(weights),
            reference: pose.rotation,
        });
        Ok(plant)
    }

    pub fn mode(&self) -> Mode {
        if self.arm.is_some() {
            Mode::JointSpace
        } else {
            Mode::TaskSpace
        }
    }

    /// Zero-order-hold step under command `u`.
    pub fn step(&mut self, u: &ControlInput) -> Result<StepOutput> {
        let dt = self.dt;
        let out = match &mut self.arm {
            None => {
                let s = &mut self.state;
                let lin = u.fixed_rows::<3>(0).into_owned();
                let ang = u.fixed_rows::<3>(3).into_owned();
                let v = s.velocity.fixed_rows::<3>(0).into_owned();
                let w = s.velocity.fixed_rows::<3>(3).into_owned();
                s.position += v * dt + lin * (0.5 * dt * dt);
                s.orientation += w * dt + ang * (0.5 * dt * dt);
                s.velocity += u * dt;
                StepOutput {
                    realized: *u,
                    slack: ControlInput::zeros(),
                }
            }
            Some(arm) => {
                let js = self.state.joints.ok_or_else(|| {
                    Error::InvalidParameter("joint-space plant without joints".into())
                })?;
                let r = arm.rac.step(&arm.robot, &js, u, dt)?;
                let realized = arm.robot.jacobian_dot_times_qd(&js.q, &js.qd)
                    + arm.robot.jacobian(&js.q) * r.qdd;
                // the RAC's Euler rows only shape its limit handling; the arm
                // itself integrates the held joint acceleration exactly
                let next = JointState {
                    q: js.q + js.qd * dt + r.qdd * (0.5 * dt * dt),
                    qd: js.qd + r.qdd * dt,
                };
                let pose = arm.robot.forward_kinematics(&next.q);
                let s = &mut self.state;
                s.position = pose.translation.vector;
                s.orientation = rotation_vector(&(pose.rotation * arm.reference.inverse()));
                s.velocity = arm.robot.jacobian(&next.q) * next.qd;
                s.joints = Some(next);
                StepOutput {
                    realized,
                    slack: r.slack,
                }
            }
        };

        if self.slosh_active {
            let a = PivotAcceleration::new(out.realized[0], out.realized[1], out.realized[2]);
            self.state.pendulum = integrate_pendulum(&self.state.pendulum, &a, &self.params, dt)?;
        } else {
            self.state.pin_pendulum();
        }
        self.state.time += dt;
        Ok(out)
    }
}

/// Pure form of [`Plant::step`] for task-space plants.
pub fn plant_step(
    s: &PlantState,
    u: &ControlInput,
    p: &PendulumParams,
    dt: f64,
    slosh_active: bool,
) -> Result<PlantState> {
    let mut plant = Plant::task_space(s.clone(), *p, dt)?;
    plant.slosh_active = slosh_active;
    plant.step(u)?;
    Ok(plant.state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slosh::equilibrium_tilt;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_input_keeps_state() {
        let s = PlantState::at_rest();
        let p = PendulumParams::new(0.03).unwrap();
        let next = plant_step(&s, &ControlInput::zeros(), &p, 1.0 / 60.0, true).unwrap();
        assert_eq!(next.position, s.position);
        assert_eq!(next.velocity, s.velocity);
        assert_eq!(next.pendulum, s.pendulum);
        assert_abs_diff_eq!(next.time, 1.0 / 60.0);
    }

    #[test]
    fn constant_acceleration_integrates_velocity() {
        let p = PendulumParams::new(0.03).unwrap();
        let mut plant = Plant::task_space(PlantState::at_rest(), p, 1.0 / 60.0).unwrap();
        plant.slosh_active = true;
        let mut u = ControlInput::zeros();
        u[0] = 1.0;
        let (eq_theta, _) = equilibrium_tilt(&PivotAcceleration::new(1.0, 0.0, 0.0), p.gravity);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..60 {
            plant.step(&u).unwrap();
            lo = lo.min(plant.state.pendulum.theta);
            hi = hi.max(plant.state.pendulum.theta);
        }
        assert_abs_diff_eq!(plant.state.velocity[0], 1.0, epsilon = 1e-9);
        // released from level, the pendulum swings between 0 and twice the
        // equilibrium tilt
        assert_abs_diff_eq!(0.5 * (lo + hi), eq_theta, epsilon = 0.1 * eq_theta.abs());
    }

    #[test]
    fn pinned_pendulum_follows_container() {
        let p = PendulumParams::new(0.03).unwrap();
        let mut v = Velocity6::zeros();
        v[3] = 0.2;
        let mut plant = Plant::task_space(PlantState::moving(v), p, 0.01).unwrap();
        plant.step(&ControlInput::zeros()).unwrap();
        assert_eq!(plant.state.relative_tilt(), (0.0, 0.0));
        assert_abs_diff_eq!(plant.state.pendulum.theta_dot, 0.2);
    }
}
