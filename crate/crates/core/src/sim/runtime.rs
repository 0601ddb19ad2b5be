//! Dual-rate emergency-stop loop: a receding-horizon planner feeding an
//! executor that advances the plant at the control rate.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::mailbox::Mailbox;
use super::metrics::{
    violation_deg, violation_stats, RunMetrics, SloshLimits, StopDetector, TraceRow,
};
use super::plant::{Mode, Plant, PlantState};
use crate::error::{Error, Result};
use crate::kinematics::{panda_ready_pose, JointVector, RobotModel};
use crate::model::{ControlInput, MpcState};
use crate::ocp::{OcpConfig, StopPlan, StopPlanner};
use crate::rac::RacWeights;
use crate::slosh::{integrate_pendulum, PendulumParams, PendulumState, PivotAcceleration};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeConfig {
    pub plant_rate_hz: f64,
    pub planner_rate_hz: f64,
    /// `‖v‖∞` threshold of the stop criterion [m/s and rad/s].
    pub stop_tolerance: f64,
    /// How long the velocity must stay below the threshold [s].
    pub stop_window: f64,
    /// Simulated time after the trigger before giving up [s].
    pub timeout: f64,
    /// Synchronous interleaving instead of a planner thread.
    pub deterministic: bool,
    pub mode: Mode,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            plant_rate_hz: 60.0,
            planner_rate_hz: 20.0,
            stop_tolerance: 0.01,
            stop_window: 0.1,
            timeout: 10.0,
            deterministic: true,
            mode: Mode::TaskSpace,
        }
    }
}

impl RuntimeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.plant_rate_hz > 0.0 && self.planner_rate_hz > 0.0) {
            return Err(Error::Config("rates must be positive".into()));
        }
        if self.planner_rate_hz > self.plant_rate_hz {
            return Err(Error::Config(
                "planner cannot run faster than the plant".into(),
            ));
        }
        if !(self.stop_tolerance > 0.0 && self.stop_window >= 0.0 && self.timeout > 0.0) {
            return Err(Error::Config("invalid stop criterion".into()));
        }
        Ok(())
    }

    pub fn plant_dt(&self) -> f64 {
        1.0 / self.plant_rate_hz
    }

    /// Plant steps per planner period.
    pub fn replan_every(&self) -> usize {
        ((self.plant_rate_hz / self.planner_rate_hz).round() as usize).max(1)
    }
}

/// Everything a single stop run needs besides the runtime settings.
#[derive(Debug, Clone)]
pub struct StopSetup {
    pub initial: PlantState,
    /// Commands applied before the trigger, one per plant step.
    pub prelude: Vec<ControlInput>,
    pub ocp: OcpConfig,
    /// Rod length of the simulated liquid.
    pub plant_params: PendulumParams,
    /// Rod length assumed by the planner and its slosh estimator.
    pub planner_params: PendulumParams,
    pub robot: RobotModel,
    pub start_q: JointVector,
    pub rac: RacWeights,
}

impl StopSetup {
    pub fn new(initial: PlantState, ocp: OcpConfig, params: PendulumParams) -> Self {
        Self {
            initial,
            prelude: Vec::new(),
            ocp,
            plant_params: params,
            planner_params: params,
            robot: RobotModel::panda(),
            start_q: panda_ready_pose(),
            rac: RacWeights::default(),
        }
    }

    fn limits(&self) -> SloshLimits {
        SloshLimits {
            theta_min: self.ocp.theta_min,
            theta_max: self.ocp.theta_max,
            phi_min: self.ocp.phi_min,
            phi_max: self.ocp.phi_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Finish {
    Stopped(f64),
    TimedOut,
    Spilled,
}

/// Executor side: owns the plant, the slosh estimate and the trace.
struct Executor {
    plant: Plant,
    estimate: PendulumState,
    planner_params: PendulumParams,
    limits: SloshLimits,
    detector: StopDetector,
    rows: Vec<TraceRow>,
    t0: f64,
    step: usize,
    trigger_step: Option<usize>,
    last_u: ControlInput,
    timeout_steps: usize,
    max_plan_age: f64,
    finish: Option<Finish>,
}

impl Executor {
    fn new(setup: &StopSetup, rt: &RuntimeConfig) -> Result<Self> {
        let dt = rt.plant_dt();
        let plant = match rt.mode {
            Mode::TaskSpace => Plant::task_space(setup.initial.clone(), setup.plant_params, dt)?,
            Mode::JointSpace => Plant::joint_space(
                setup.initial.clone(),
                setup.plant_params,
                dt,
                setup.robot.clone(),
                setup.start_q,
                setup.rac.clone(),
            )?,
        };
        let mut ex = Self {
            estimate: plant.state.pendulum,
            t0: plant.state.time,
            plant,
            planner_params: setup.planner_params,
            limits: setup.limits(),
            detector: StopDetector::new(rt.stop_tolerance, rt.stop_window, dt),
            rows: Vec::new(),
            step: 0,
            trigger_step: None,
            last_u: ControlInput::zeros(),
            timeout_steps: (rt.timeout / dt).round() as usize,
            max_plan_age: 0.0,
            finish: None,
        };
        ex.record(&ControlInput::zeros());
        Ok(ex)
    }

    fn time(&self) -> f64 {
        self.t0 + self.step as f64 * self.plant.dt
    }

    fn trigger_time(&self) -> f64 {
        self.t0 + self.trigger_step.unwrap_or(self.step) as f64 * self.plant.dt
    }

    fn post_steps(&self) -> usize {
        self.trigger_step.map_or(0, |s| self.step - s)
    }

    fn mpc_state(&self) -> MpcState {
        self.plant.state.mpc_state(&self.estimate)
    }

    fn record(&mut self, u: &ControlInput) {
        let s = &self.plant.state;
        let (rt, rp) = s.relative_tilt();
        let viol = if self.trigger_step.is_some() {
            violation_deg(rt, rp, &self.limits)
        } else {
            0.0
        };
        self.rows.push(TraceRow {
            t: self.time(),
            vx: s.velocity[0],
            vy: s.velocity[1],
            vz: s.velocity[2],
            wx: s.velocity[3],
            wy: s.velocity[4],
            wz: s.velocity[5],
            theta_p: s.pendulum.theta,
            phi_p: s.pendulum.phi,
            theta_c: s.orientation[0],
            phi_c: s.orientation[1],
            psi_c: s.orientation[2],
            ux: u[0],
            uy: u[1],
            uz: u[2],
            u_theta: u[3],
            u_phi: u[4],
            u_psi: u[5],
            violation_deg: viol,
            violating: u8::from(viol > 0.0),
        });
    }

    fn trigger(&mut self) {
        self.trigger_step = Some(self.step);
        self.plant.slosh_active = true;
        self.estimate = self.plant.state.pendulum;
        self.observe();
    }

    fn observe(&mut self) {
        let v: [f64; 6] = self.plant.state.velocity.into();
        if let Some(t) = self.detector.feed(self.post_steps(), &v) {
            self.finish = Some(Finish::Stopped(t));
        } else if self.post_steps() >= self.timeout_steps {
            self.finish = Some(Finish::TimedOut);
        }
    }

    fn apply(&mut self, u: &ControlInput) -> Result<()> {
        let out = match self.plant.step(u) {
            Ok(o) => o,
            Err(Error::GimbalSingularity { .. }) => {
                self.finish = Some(Finish::Spilled);
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        self.step += 1;
        self.plant.state.time = self.time();
        if self.trigger_step.is_some() {
            let a = PivotAcceleration::new(out.realized[0], out.realized[1], out.realized[2]);
            self.estimate =
                integrate_pendulum(&self.estimate, &a, &self.planner_params, self.plant.dt)
                    .unwrap_or(self.estimate);
        } else {
            self.estimate = self.plant.state.pendulum;
        }
        self.last_u = *u;
        self.record(u);
        if self.trigger_step.is_some() {
            self.observe();
        }
        Ok(())
    }

    fn control_from(&mut self, plan: Option<&StopPlan>) -> ControlInput {
        let t = self.time();
        match plan.and_then(|p| p.control_at(t).map(|u| (u, t - p.created_at))) {
            Some((u, age)) => {
                self.max_plan_age = self.max_plan_age.max(age);
                u
            }
            None => ControlInput::zeros(),
        }
    }

    fn into_metrics(self, plans: usize, failures: usize, iterations: usize) -> RunMetrics {
        let dt = self.plant.dt;
        let trigger_time = self.trigger_time();
        let (max_tilt, max_viol, t_viol, t_viol_big) =
            violation_stats(&self.rows, trigger_time, dt);
        let elapsed = self.post_steps() as f64 * dt;
        let finish = self.finish.unwrap_or(Finish::TimedOut);
        RunMetrics {
            stopping_time: match finish {
                Finish::Stopped(t) => t,
                _ => elapsed,
            },
            stopped: matches!(finish, Finish::Stopped(_)),
            timed_out: finish == Finish::TimedOut,
            spilled: finish == Finish::Spilled,
            trigger_time,
            slosh_limit_deg: self
                .limits
                .theta_max
                .min(-self.limits.theta_min)
                .min(self.limits.phi_max)
                .min(-self.limits.phi_min)
                .to_degrees(),
            max_tilt_deg: max_tilt,
            max_violation_deg: max_viol,
            time_in_violation: t_viol,
            time_in_violation_gt_0p2deg: t_viol_big,
            plant_dt: dt,
            plans,
            solver_failures: failures,
            mean_qp_iterations: if plans > 0 {
                iterations as f64 / plans as f64
            } else {
                0.0
            },
            max_plan_age: self.max_plan_age,
            traces: self.rows,
        }
    }
}

/// Runs the prelude, triggers the stop and replans until the container is
/// at rest, the timeout expires or the liquid spills.
pub fn run_emergency_stop(setup: &StopSetup, rt: &RuntimeConfig) -> Result<RunMetrics> {
    rt.validate()?;
    if !setup.initial.is_finite() {
        return Err(Error::InvalidParameter(
            "initial plant state must be finite".into(),
        ));
    }
    let planner = StopPlanner::new(setup.ocp.clone(), setup.planner_params)?;
    if rt.deterministic {
        run_synchronous(setup, rt, planner)
    } else {
        run_threaded(setup, rt, planner)
    }
}

fn run_synchronous(
    setup: &StopSetup,
    rt: &RuntimeConfig,
    mut planner: StopPlanner,
) -> Result<RunMetrics> {
    let mut ex = Executor::new(setup, rt)?;
    for u in &setup.prelude {
        ex.apply(u)?;
        if ex.finish.is_some() {
            break;
        }
    }
    ex.trigger();

    let every = rt.replan_every();
    let (mut plans, mut failures, mut iterations) = (0, 0, 0);
    let mut plan: Option<StopPlan> = None;
    while ex.finish.is_none() {
        if ex.post_steps() % every == 0 {
            match planner.plan(&ex.mpc_state(), &ex.last_u, plan.as_ref(), ex.time()) {
                Ok(p) => {
                    plans += 1;
                    iterations += p.qp_iterations;
                    plan = Some(p);
                }
                // keep executing the previous plan
                Err(Error::SolverFailure(_)) => failures += 1,
                Err(e) => return Err(e),
            }
        }
        let u = ex.control_from(plan.as_ref());
        ex.apply(&u)?;
    }
    Ok(ex.into_metrics(plans, failures, iterations))
}

/// What the executor hands to the planner thread.
struct Snapshot {
    x0: MpcState,
    last_u: ControlInput,
    time: f64,
}

#[derive(Default)]
struct PlannerStats {
    plans: usize,
    failures: usize,
    iterations: usize,
}

fn run_threaded(
    setup: &StopSetup,
    rt: &RuntimeConfig,
    mut planner: StopPlanner,
) -> Result<RunMetrics> {
    let snapshots: Arc<Mailbox<Snapshot>> = Arc::new(Mailbox::new());
    let plans: Arc<Mailbox<StopPlan>> = Arc::new(Mailbox::new());
    let done = Arc::new(AtomicBool::new(false));
    let period = Duration::from_secs_f64(1.0 / rt.planner_rate_hz);

    let worker = {
        let (snapshots, plans, done) = (
            Arc::clone(&snapshots),
            Arc::clone(&plans),
            Arc::clone(&done),
        );
        std::thread::spawn(move || -> Result<PlannerStats> {
            let mut stats = PlannerStats::default();
            let mut seen = 0;
            let mut previous: Option<Arc<StopPlan>> = None;
            while !done.load(Ordering::Acquire) {
                let Some((seq, snap)) = snapshots.wait_newer(seen, Duration::from_millis(20))
                else {
                    continue;
                };
                seen = seq;
                let started = Instant::now();
                match planner.plan(&snap.x0, &snap.last_u, previous.as_deref(), snap.time) {
                    Ok(p) => {
                        stats.plans += 1;
                        stats.iterations += p.qp_iterations;
                        plans.publish(p);
                        previous = plans.latest().map(|(_, p)| p);
                    }
                    Err(Error::SolverFailure(_)) => stats.failures += 1,
                    Err(e) => {
                        done.store(true, Ordering::Release);
                        return Err(e);
                    }
                }
                if let Some(rest) = period.checked_sub(started.elapsed()) {
                    std::thread::sleep(rest);
                }
            }
            Ok(stats)
        })
    };

    let result = (|| -> Result<Executor> {
        let mut ex = Executor::new(setup, rt)?;
        let tick = Duration::from_secs_f64(rt.plant_dt());
        let start = Instant::now();
        let mut n = 0u32;
        let mut pace = || {
            n += 1;
            if let Some(rest) = (start + tick * n).checked_duration_since(Instant::now()) {
                std::thread::sleep(rest);
            }
        };
        for u in &setup.prelude {
            ex.apply(u)?;
            pace();
        }
        ex.trigger();
        while ex.finish.is_none() && !done.load(Ordering::Acquire) {
            snapshots.publish(Snapshot {
                x0: ex.mpc_state(),
                last_u: ex.last_u,
                time: ex.time(),
            });
            let latest = plans.latest();
            let u = ex.control_from(latest.as_ref().map(|(_, p)| p.as_ref()));
            ex.apply(&u)?;
            pace();
        }
        Ok(ex)
    })();

    done.store(true, Ordering::Release);
    let stats = worker
        .join()
        .map_err(|_| Error::Config("planner thread panicked".into()))??;
    let ex = result?;
    Ok(ex.into_metrics(stats.plans, stats.failures, stats.iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::plant::Velocity6;

    fn setup(v: [f64; 6]) -> StopSetup {
        StopSetup::new(
            PlantState::moving(Velocity6::from(v)),
            OcpConfig::default(),
            PendulumParams::new(0.05).unwrap(),
        )
    }

    #[test]
    fn at_rest_stops_immediately() {
        let m = run_emergency_stop(&setup([0.0; 6]), &RuntimeConfig::default()).unwrap();
        assert!(m.stopped);
        assert_eq!(m.stopping_time, 0.0);
        assert_eq!(m.max_violation_deg, 0.0);
    }

    #[test]
    fn replan_period() {
        assert_eq!(RuntimeConfig::default().replan_every(), 3);
        let bad = RuntimeConfig {
            planner_rate_hz: 120.0,
            ..RuntimeConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
