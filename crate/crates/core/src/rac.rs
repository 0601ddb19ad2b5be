//! Resolved Acceleration Control: maps a Cartesian acceleration command to
//! joint accelerations through `ẍ = J̇ q̇ + J q̈`, relaxed by a task-space
//! slack and subject to joint position, velocity and acceleration limits.
//!
//! The program is posed over `(q, q̇, q̈, δ)` with Euler steps
//! `q̇ = q̇₀ + dt q̈`, `q = q₀ + dt q̇` and the task row
//! `u + δ = J̇ q̇ + J q̈`. All three are affine in `q̈`, so they are
//! substituted out and the solver only sees the seven joint accelerations
//! under box limits. The optimum is the same; the reduced problem avoids
//! penalizing twenty equality rows against a cost spread of ten decades.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use crate::error::{Error, Result};
use crate::kinematics::{JointState, JointVector, RobotModel, NUM_JOINTS};
use crate::model::ControlInput;
use crate::qp::{QpProblem, QpSettings, QpSolver, QpStatus, WarmStart};

/// Decision variables of the reduced program (`q̈`).
pub const RAC_VARS: usize = NUM_JOINTS;

#[derive(Debug, Clone, PartialEq)]
pub struct RacWeights {
    pub q: JointVector,
    pub qd: JointVector,
    pub qdd: JointVector,
    pub slack: SVector<f64, 6>,
}

impl Default for RacWeights {
    fn default() -> Self {
        Self {
            q: JointVector::repeat(1e-4),
            qd: JointVector::repeat(1e-4),
            qdd: JointVector::repeat(1e-2),
            slack: SVector::<f64, 6>::repeat(1e6),
        }
    }
}

impl RacWeights {
    pub fn validate(&self) -> Result<()> {
        let others = self.q.iter().chain(self.qd.iter()).chain(self.qdd.iter());
        if others.clone().chain(self.slack.iter()).any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidParameter(
                "RAC weights must be positive".into(),
            ));
        }
        let max_other = others.fold(0.0_f64, |m, w| m.max(*w));
        if self.slack.min() < 1e4 * max_other {
            return Err(Error::InvalidParameter(
                "RAC slack weights must dominate the joint weights by 1e4".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RacOutput {
    pub qdd: JointVector,
    pub slack: SVector<f64, 6>,
    /// Joint state after one Euler step under `qdd`.
    pub next: JointState,
    pub status: QpStatus,
}

/// Everything in the full program as an affine map of `q̈`.
struct Affine {
    js: JointState,
    dt: f64,
    /// `δ = c + M q̈` with `M = J + dt J̇`, `c = J̇ q̇₀ − u`.
    m: SMatrix<f64, 6, NUM_JOINTS>,
    c: SVector<f64, 6>,
}

impl Affine {
    fn new(robot: &RobotModel, js: &JointState, u: &ControlInput, dt: f64) -> Self {
        let j = robot.jacobian(&js.q);
        let jdot = robot.jacobian_dot(&js.q, &js.qd);
        Self {
            js: *js,
            dt,
            m: j + jdot * dt,
            c: jdot * js.qd - u,
        }
    }

    fn output(&self, qdd: JointVector, status: QpStatus) -> RacOutput {
        let qd = self.js.qd + qdd * self.dt;
        RacOutput {
            qdd,
            slack: self.c + self.m * qdd,
            next: JointState {
                q: self.js.q + qd * self.dt,
                qd,
            },
            status,
        }
    }
}

/// Builds the RAC program over `q̈`. With `hard = true` the slack is pinned
/// to zero, which turns the task row into six equality constraints.
pub fn build_rac_qp(
    m: &RobotModel,
    js: &JointState,
    u: &ControlInput,
    w: &RacWeights,
    dt: f64,
    hard: bool,
) -> Result<QpProblem> {
    w.validate()?;
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let af = Affine::new(m, js, u, dt);
    let n = NUM_JOINTS;
    let (dt2, dt4) = (dt * dt, dt.powi(4));
    // q at zero acceleration
    let coast = js.q + js.qd * dt;

    // Σ w_q q² + w_q̇ q̇² + w_q̈ q̈² + w_δ δ², constants dropped, in ½xᵀHx form
    let ws = SMatrix::<f64, 6, 6>::from_diagonal(&w.slack);
    let mut h = DMatrix::zeros(n, n);
    h.copy_from(&(af.m.transpose() * ws * af.m * 2.0));
    let mut f = DVector::from_column_slice((af.m.transpose() * ws * af.c * 2.0).as_slice());
    for i in 0..n {
        h[(i, i)] += 2.0 * (w.q[i] * dt4 + w.qd[i] * dt2 + w.qdd[i]);
        f[i] += 2.0 * (w.q[i] * dt2 * coast[i] + w.qd[i] * dt * js.qd[i]);
    }
    // exact symmetry for the solver's check
    let h = (&h + h.transpose()) * 0.5;

    let (a_eq, b_eq) = if hard {
        (
            DMatrix::from_column_slice(6, n, af.m.as_slice()),
            DVector::from_column_slice((-af.c).as_slice()),
        )
    } else {
        (DMatrix::zeros(0, n), DVector::zeros(0))
    };

    // position, velocity and acceleration limits as boxes on q̈
    let mut a_in = DMatrix::zeros(3 * n, n);
    let mut lo = DVector::zeros(3 * n);
    let mut hi = DVector::zeros(3 * n);
    for i in 0..n {
        for (block, lmin, lmax) in [
            (
                0,
                (m.q_min[i] - coast[i]) / dt2,
                (m.q_max[i] - coast[i]) / dt2,
            ),
            (
                n,
                (m.qd_min[i] - js.qd[i]) / dt,
                (m.qd_max[i] - js.qd[i]) / dt,
            ),
            (2 * n, m.qdd_min[i], m.qdd_max[i]),
        ] {
            a_in[(block + i, i)] = 1.0;
            lo[block + i] = lmin;
            hi[block + i] = lmax;
        }
    }
    QpProblem::from_dense(&h, &f, &a_eq, &b_eq, &a_in, &lo, &hi)
}

/// Executor-side RAC stage with its own solver workspace.
#[derive(Debug, Clone)]
pub struct RacController {
    pub weights: RacWeights,
    solver: QpSolver,
    warm: Option<WarmStart>,
}

impl Default for RacController {
    fn default() -> Self {
        Self::new(RacWeights::default())
    }
}

impl RacController {
    pub fn new(weights: RacWeights) -> Self {
        Self {
            weights,
            solver: QpSolver::new(QpSettings::default()),
            warm: None,
        }
    }

    pub fn step(
        &mut self,
        m: &RobotModel,
        js: &JointState,
        u: &ControlInput,
        dt: f64,
    ) -> Result<RacOutput> {
        let prob = build_rac_qp(m, js, u, &self.weights, dt, false)?;
        let sol = self.solver.solve(&prob, self.warm.as_ref())?;
        if sol.status != QpStatus::Optimal {
            self.warm = None;
            return Err(Error::SolverFailure(sol.status));
        }
        self.warm = Some(WarmStart {
            x: sol.x.clone(),
            y: Some(sol.y.clone()),
        });
        let qdd = JointVector::from_column_slice(sol.x.as_slice());
        Ok(Affine::new(m, js, u, dt).output(qdd, sol.status))
    }
}

/// Stateless convenience wrapper around [`RacController::step`].
pub fn rac_step(
    m: &RobotModel,
    js: &JointState,
    u: &ControlInput,
    w: &RacWeights,
    dt: f64,
) -> Result<RacOutput> {
    RacController::new(w.clone()).step(m, js, u, dt)
}
