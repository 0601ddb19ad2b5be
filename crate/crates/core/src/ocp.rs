//! Task-space emergency-stop optimal control problem and its receding-horizon
//! planner.
//!
//! Decision vector, stage-major: for each step `k = 0..N-1` the block
//! `[u_k (6), x_{k+1} (13), δθ_{k+1}, δφ_{k+1}]` (slacks only when slosh
//! constraints are enabled). Constraint rows are stage-major as well so a
//! previous solution can be shifted row-for-row into a warm start.

use nalgebra::{DVector, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::RobotModel;
use crate::model::{
    idx, ControlInput, LinearModel, MpcState, NominalPoint, CONTROL_DIM, STATE_DIM,
};
use crate::qp::{QpProblem, QpSettings, QpSolution, QpSolver, QpStatus, TripletBuilder, WarmStart};
use crate::slosh::PendulumParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcpConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Weight on squared Cartesian velocity.
    pub c_velocity: f64,
    /// Weight on squared jerk.
    pub c_jerk: f64,
    pub c_slack_theta: f64,
    pub c_slack_phi: f64,
    /// Per-component weighting inside the velocity norm (linear, then angular).
    pub velocity_weights: [f64; 6],
    pub theta_min: f64,
    pub theta_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub v_min: [f64; 6],
    pub v_max: [f64; 6],
    pub a_min: [f64; 6],
    pub a_max: [f64; 6],
    /// `false` drops the no-spill rows and slacks (jerk-only baseline).
    pub slosh_constraints: bool,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self::from_robot(&RobotModel::panda(), 5.0_f64.to_radians())
    }
}

impl OcpConfig {
    /// Defaults with symmetric slosh limits and Cartesian bounds of `robot`.
    pub fn from_robot(robot: &RobotModel, slosh_limit: f64) -> Self {
        let c = robot.cartesian;
        let v = [
            c.linear_velocity,
            c.linear_velocity,
            c.linear_velocity,
            c.angular_velocity,
            c.angular_velocity,
            c.angular_velocity,
        ];
        let a = [
            c.linear_acceleration,
            c.linear_acceleration,
            c.linear_acceleration,
            c.angular_acceleration,
            c.angular_acceleration,
            c.angular_acceleration,
        ];
        Self {
            horizon: 40,
            dt: 0.05,
            c_velocity: 1.0,
            c_jerk: 1e-4,
            c_slack_theta: 1e4,
            c_slack_phi: 1e4,
            velocity_weights: [1.0, 1.0, 1.0, 10.0, 10.0, 10.0],
            theta_min: -slosh_limit,
            theta_max: slosh_limit,
            phi_min: -slosh_limit,
            phi_max: slosh_limit,
            v_min: v.map(|x| -x),
            v_max: v,
            a_min: a.map(|x| -x),
            a_max: a,
            slosh_constraints: true,
            qp_tol: 1e-6,
            qp_max_iter: 4000,
        }
    }

    pub fn with_slosh_limit(mut self, limit: f64) -> Self {
        self.theta_min = -limit;
        self.theta_max = limit;
        self.phi_min = -limit;
        self.phi_max = limit;
        self
    }

    /// Same problem with the no-spill rows removed.
    pub fn baseline(mut self) -> Self {
        self.slosh_constraints = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be positive");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.c_velocity > 0.0 && self.c_jerk > 0.0) {
            return bad("velocity and jerk weights must be positive");
        }
        if self.c_slack_theta != self.c_slack_phi || self.c_slack_theta < 1000.0 * self.c_velocity {
            return bad("slack weights must be equal and at least 1000x the velocity weight");
        }
        if self.velocity_weights.iter().any(|w| !(*w >= 0.0)) {
            return bad("velocity weights must be non-negative");
        }
        if !(self.theta_min < 0.0
            && self.theta_max > 0.0
            && self.phi_min < 0.0
            && self.phi_max > 0.0)
        {
            return bad("slosh limits must bracket zero");
        }
        for i in 0..6 {
            if !(self.v_min[i] < self.v_max[i] && self.a_min[i] < self.a_max[i]) {
                return bad("kinematic bounds must satisfy lo < hi");
            }
        }
        Ok(())
    }

    fn stage_size(&self) -> usize {
        CONTROL_DIM + STATE_DIM + if self.slosh_constraints { 2 } else { 0 }
    }

    fn stage_rows(&self) -> usize {
        12 + if self.slosh_constraints { 6 } else { 0 }
    }

    pub fn num_vars(&self) -> usize {
        self.horizon * self.stage_size()
    }
}

/// Column offsets into the stage-major decision vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    stage: usize,
    slacks: bool,
}

impl Layout {
    fn new(cfg: &OcpConfig) -> Self {
        Self {
            stage: cfg.stage_size(),
            slacks: cfg.slosh_constraints,
        }
    }

    fn u(&self, k: usize) -> usize {
        k * self.stage
    }

    /// Column of `x_{k+1}`.
    fn x_next(&self, k: usize) -> usize {
        k * self.stage + CONTROL_DIM
    }

    fn slack(&self, k: usize) -> usize {
        debug_assert!(self.slacks);
        k * self.stage + CONTROL_DIM + STATE_DIM
    }
}

/// One receding-horizon solution: the planner/executor handoff unit.
#[derive(Debug, Clone, PartialEq)]
pub struct StopPlan {
    pub controls: Vec<ControlInput>,
    pub predicted_states: Vec<MpcState>,
    /// `(δθ, δφ)` per step; zero when slosh constraints are off.
    pub slacks: Vec<[f64; 2]>,
    pub created_at: f64,
    pub dt: f64,
    pub objective: f64,
    pub qp_iterations: usize,
}

impl StopPlan {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// Control scheduled for plant time `t`, if `t` falls inside the horizon.
    pub fn control_at(&self, t: f64) -> Option<ControlInput> {
        let elapsed = t - self.created_at;
        if elapsed < -1e-9 {
            return None;
        }
        let k = (elapsed / self.dt + 1e-9).floor() as usize;
        self.controls.get(k).copied()
    }

    /// `Σ‖v_k‖²` over the predicted states `k = 1..N`.
    pub fn velocity_cost(&self) -> f64 {
        self.predicted_states[1..]
            .iter()
            .map(|x| idx::VELOCITY.iter().map(|&i| x[i] * x[i]).sum::<f64>())
            .sum()
    }

    pub fn max_slack(&self) -> f64 {
        self.slacks
            .iter()
            .fold(0.0_f64, |m, s| m.max(s[0]).max(s[1]))
    }

    /// Largest predicted relative tilt `max |θp − θc|, |φp − φc|` [rad].
    pub fn max_relative_tilt(&self) -> f64 {
        self.predicted_states.iter().fold(0.0_f64, |m, x| {
            m.max((x[idx::THETA_P] - x[idx::THETA_C]).abs())
                .max((x[idx::PHI_P] - x[idx::PHI_C]).abs())
        })
    }
}

/// Jerk terms `(u_k − u_{k−1}) / dt` with `u_{−1} = last_control`.
pub fn jerks(controls: &[ControlInput], last_control: &ControlInput, dt: f64) -> Vec<ControlInput> {
    let mut prev = *last_control;
    controls
        .iter()
        .map(|u| {
            let j = (u - prev) / dt;
            prev = *u;
            j
        })
        .collect()
}

/// Full stop objective `Σ c1‖v‖²_W + c2‖j‖² + c3 δθ + c4 δφ` of a plan.
pub fn plan_objective(plan: &StopPlan, last_control: &ControlInput, cfg: &OcpConfig) -> f64 {
    let vel: f64 = plan.predicted_states[1..]
        .iter()
        .map(|x| {
            idx::VELOCITY
                .iter()
                .zip(cfg.velocity_weights)
                .map(|(&i, w)| w * x[i] * x[i])
                .sum::<f64>()
        })
        .sum();
    let jerk: f64 = jerks(&plan.controls, last_control, cfg.dt)
        .iter()
        .map(|j| j.norm_squared())
        .sum();
    let slack: f64 = plan
        .slacks
        .iter()
        .map(|s| cfg.c_slack_theta * s[0] + cfg.c_slack_phi * s[1])
        .sum();
    cfg.c_velocity * vel + cfg.c_jerk * jerk + slack
}

/// Assembles the stop QP around `nominal` (one point per horizon step).
pub fn build_ocp(
    x0: &MpcState,
    last_control: &ControlInput,
    nominal: &[NominalPoint],
    cfg: &OcpConfig,
    p: &PendulumParams,
) -> Result<QpProblem> {
    cfg.validate()?;
    let n_steps = cfg.horizon;
    if nominal.len() != n_steps {
        return Err(Error::DimensionMismatch(format!(
            "nominal trajectory has {} points, horizon is {n_steps}",
            nominal.len()
        )));
    }
    if x0.iter().chain(last_control.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "initial state must be finite".into(),
        ));
    }
    let model = LinearModel::build(nominal, p, cfg.dt)?;
    let lay = Layout::new(cfg);
    let nv = cfg.num_vars();

    // cost
    let mut h = TripletBuilder::new(nv, nv);
    let mut f = DVector::zeros(nv);
    let jerk_w = 2.0 * cfg.c_jerk / (cfg.dt * cfg.dt);
    for k in 0..n_steps {
        for (c, &i) in idx::VELOCITY.iter().enumerate() {
            let w = 2.0 * cfg.c_velocity * cfg.velocity_weights[c];
            h.push(lay.x_next(k) + i, lay.x_next(k) + i, w);
        }
        for c in 0..CONTROL_DIM {
            let uk = lay.u(k) + c;
            h.push(uk, uk, jerk_w);
            if k > 0 {
                let um = lay.u(k - 1) + c;
                h.push(um, um, jerk_w);
                h.push(uk, um, -jerk_w);
                h.push(um, uk, -jerk_w);
            } else {
                f[uk] -= jerk_w * last_control[c];
            }
        }
        if lay.slacks {
            f[lay.slack(k)] = cfg.c_slack_theta;
            f[lay.slack(k) + 1] = cfg.c_slack_phi;
        }
    }

    // dynamics: x_{k+1} − A_k x_k − B_k u_k = 0 (A_0 x0 moves to the rhs)
    let mut a_eq = TripletBuilder::new(n_steps * STATE_DIM, nv);
    let mut b_eq = DVector::zeros(n_steps * STATE_DIM);
    for (k, (a, b)) in model.steps.iter().enumerate() {
        let row0 = k * STATE_DIM;
        for r in 0..STATE_DIM {
            a_eq.push(row0 + r, lay.x_next(k) + r, 1.0);
            for c in 0..CONTROL_DIM {
                a_eq.push(row0 + r, lay.u(k) + c, -b[(r, c)]);
            }
            if k == 0 {
                b_eq[row0 + r] = (a * x0)[r];
            } else {
                for c in 0..STATE_DIM {
                    a_eq.push(row0 + r, lay.x_next(k - 1) + c, -a[(r, c)]);
                }
            }
        }
    }

    // stage-major inequality rows
    let rows = cfg.stage_rows();
    let mut a_in = TripletBuilder::new(n_steps * rows, nv);
    let mut lo = DVector::from_element(n_steps * rows, f64::NEG_INFINITY);
    let mut hi = DVector::from_element(n_steps * rows, f64::INFINITY);
    for k in 0..n_steps {
        let mut r = k * rows;
        let x = lay.x_next(k);
        if lay.slacks {
            let s = lay.slack(k);
            for (ang_p, ang_c, slack, min, max) in [
                (idx::THETA_P, idx::THETA_C, s, cfg.theta_min, cfg.theta_max),
                (idx::PHI_P, idx::PHI_C, s + 1, cfg.phi_min, cfg.phi_max),
            ] {
                // rel − δ ≤ max
                a_in.push(r, x + ang_p, 1.0);
                a_in.push(r, x + ang_c, -1.0);
                a_in.push(r, slack, -1.0);
                hi[r] = max;
                r += 1;
                // rel + δ ≥ min
                a_in.push(r, x + ang_p, 1.0);
                a_in.push(r, x + ang_c, -1.0);
                a_in.push(r, slack, 1.0);
                lo[r] = min;
                r += 1;
            }
        }
        for (c, &i) in idx::VELOCITY.iter().enumerate() {
            a_in.push(r, x + i, 1.0);
            lo[r] = cfg.v_min[c];
            hi[r] = cfg.v_max[c];
            r += 1;
        }
        for c in 0..CONTROL_DIM {
            a_in.push(r, lay.u(k) + c, 1.0);
            lo[r] = cfg.a_min[c];
            hi[r] = cfg.a_max[c];
            r += 1;
        }
        if lay.slacks {
            for j in 0..2 {
                a_in.push(r, lay.slack(k) + j, 1.0);
                lo[r] = 0.0;
                r += 1;
            }
        }
        debug_assert_eq!(r, (k + 1) * rows);
    }

    QpProblem::new(h.build(), f, a_eq.build(), b_eq, a_in.build(), lo, hi)
}

fn unpack_plan(
    sol: &QpSolution,
    x0: &MpcState,
    cfg: &OcpConfig,
    created_at: f64,
    last_control: &ControlInput,
) -> StopPlan {
    let lay = Layout::new(cfg);
    let n = cfg.horizon;
    let x = &sol.x;
    let controls: Vec<ControlInput> = (0..n)
        .map(|k| ControlInput::from_fn(|i, _| x[lay.u(k) + i]))
        .collect();
    let mut predicted_states = Vec::with_capacity(n + 1);
    predicted_states.push(*x0);
    predicted_states.extend((0..n).map(|k| MpcState::from_fn(|i, _| x[lay.x_next(k) + i])));
    let slacks = (0..n)
        .map(|k| {
            if lay.slacks {
                [x[lay.slack(k)].max(0.0), x[lay.slack(k) + 1].max(0.0)]
            } else {
                [0.0, 0.0]
            }
        })
        .collect();
    let mut plan = StopPlan {
        controls,
        predicted_states,
        slacks,
        created_at,
        dt: cfg.dt,
        objective: 0.0,
        qp_iterations: sol.iterations,
    };
    plan.objective = plan_objective(&plan, last_control, cfg);
    plan
}

/// Nominal trajectory from `previous` shifted by `shift` steps, padded by
/// repeating its last point. Without a previous plan the nominal is at rest.
pub fn shifted_nominal(
    previous: Option<&StopPlan>,
    shift: usize,
    horizon: usize,
) -> Vec<NominalPoint> {
    match previous {
        None => vec![NominalPoint::default(); horizon],
        Some(prev) => (0..horizon)
            .map(|k| {
                let uk = (k + shift).min(prev.controls.len() - 1);
                let xk = (k + shift).min(prev.predicted_states.len() - 1);
                NominalPoint {
                    zdd: prev.controls[uk][2],
                    theta_p: prev.predicted_states[xk][idx::THETA_P],
                    phi_p: prev.predicted_states[xk][idx::PHI_P],
                }
            })
            .collect(),
    }
}

/// Receding-horizon planner owning its QP workspace.
#[derive(Debug, Clone)]
pub struct StopPlanner {
    pub cfg: OcpConfig,
    pub params: PendulumParams,
    solver: QpSolver,
    last_raw: Option<(DVector<f64>, DVector<f64>)>,
}

impl StopPlanner {
    pub fn new(cfg: OcpConfig, params: PendulumParams) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        let solver = QpSolver::new(QpSettings {
            tol: cfg.qp_tol,
            max_iter: cfg.qp_max_iter,
            ..QpSettings::default()
        });
        Ok(Self {
            cfg,
            params,
            solver,
            last_raw: None,
        })
    }

    pub fn set_verbose(&mut self, verbose: bool) {
        self.solver.settings.verbose = verbose;
    }

    /// Drops cached solver state so the next solve starts cold.
    pub fn reset(&mut self) {
        self.last_raw = None;
    }

    fn shift_of(&self, previous: Option<&StopPlan>, now: f64) -> usize {
        previous.map_or(0, |p| {
            (((now - p.created_at) / self.cfg.dt).round().max(0.0) as usize).min(self.cfg.horizon)
        })
    }

    fn warm_start(&self, previous: Option<&StopPlan>, shift: usize) -> Option<WarmStart> {
        previous?;
        let (x_prev, y_prev) = self.last_raw.as_ref()?;
        let n = self.cfg.horizon;
        let ss = self.cfg.stage_size();
        if x_prev.len() != n * ss {
            return None;
        }
        let src = |k: usize| (k + shift).min(n - 1);
        let x = DVector::from_iterator(
            n * ss,
            (0..n * ss).map(|i| x_prev[src(i / ss) * ss + i % ss]),
        );
        let n_eq = n * STATE_DIM;
        let rows = self.cfg.stage_rows();
        let y = DVector::from_iterator(
            y_prev.len(),
            (0..y_prev.len()).map(|i| {
                if i < n_eq {
                    y_prev[src(i / STATE_DIM) * STATE_DIM + i % STATE_DIM]
                } else {
                    let j = i - n_eq;
                    y_prev[n_eq + src(j / rows) * rows + j % rows]
                }
            }),
        );
        Some(WarmStart { x, y: Some(y) })
    }

    /// Solves the stop problem from `x0` at plant time `now`, linearizing
    /// around `previous` and warm-starting from it when given.
    pub fn plan(
        &mut self,
        x0: &MpcState,
        last_control: &ControlInput,
        previous: Option<&StopPlan>,
        now: f64,
    ) -> Result<StopPlan> {
        let shift = self.shift_of(previous, now);
        let nominal = shifted_nominal(previous, shift, self.cfg.horizon);
        let prob = build_ocp(x0, last_control, &nominal, &self.cfg, &self.params)?;
        let warm = self.warm_start(previous, shift);
        let sol = self.solver.solve(&prob, warm.as_ref())?;
        if sol.status != QpStatus::Optimal {
            return Err(Error::SolverFailure(sol.status));
        }
        self.last_raw = Some((sol.x.clone(), sol.y.clone()));
        Ok(unpack_plan(&sol, x0, &self.cfg, now, last_control))
    }

    /// Solves without warm start or cached state, for comparisons.
    pub fn plan_cold(
        &self,
        x0: &MpcState,
        last_control: &ControlInput,
        previous: Option<&StopPlan>,
        now: f64,
    ) -> Result<(StopPlan, QpSolution)> {
        let shift = self.shift_of(previous, now);
        let nominal = shifted_nominal(previous, shift, self.cfg.horizon);
        let prob = build_ocp(x0, last_control, &nominal, &self.cfg, &self.params)?;
        let mut solver = QpSolver::new(self.solver.settings.clone());
        let sol = solver.solve(&prob, None)?;
        if sol.status != QpStatus::Optimal {
            return Err(Error::SolverFailure(sol.status));
        }
        Ok((unpack_plan(&sol, x0, &self.cfg, now, last_control), sol))
    }
}

/// One-shot planning call with a fresh workspace; the previous executed
/// control is taken to be zero.
pub fn plan_stop(
    x0: &MpcState,
    previous: Option<&StopPlan>,
    cfg: &OcpConfig,
    p: &PendulumParams,
    now: f64,
) -> Result<StopPlan> {
    let mut planner = StopPlanner::new(cfg.clone(), *p)?;
    planner.plan(x0, &ControlInput::zeros(), previous, now)
}

/// Velocity part of a state as a 6-vector (linear, then angular).
pub fn state_velocity(x: &MpcState) -> SVector<f64, 6> {
    crate::model::velocity_of(x)
}
