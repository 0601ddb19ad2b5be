//! Stop detection, per-step traces and run summaries.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Rows must exceed the limit by more than this much to count toward
/// `time_in_violation_gt_0p2deg` [deg].
pub const SIGNIFICANT_VIOLATION_DEG: f64 = 0.2;

/// Sustained-velocity stop criterion: every sample in a window of
/// `window` seconds must have `‖v‖∞ ≤ tolerance`. The reported stop instant is
/// the start of the first such window.
#[derive(Debug, Clone)]
pub struct StopDetector {
    tolerance: f64,
    window_steps: usize,
    dt: f64,
    streak_start: Option<usize>,
    streak_len: usize,
}

impl StopDetector {
    pub fn new(tolerance: f64, window: f64, dt: f64) -> Self {
        Self {
            tolerance,
            window_steps: (window / dt).round().max(0.0) as usize,
            dt,
            streak_start: None,
            streak_len: 0,
        }
    }

    /// Feeds the sample taken `step` plant steps after the trigger. Returns the
    /// stopping time (seconds after the trigger) once the window is complete.
    pub fn feed(&mut self, step: usize, velocity: &[f64]) -> Option<f64> {
        let still = velocity.iter().all(|v| v.abs() <= self.tolerance);
        if !still {
            self.streak_start = None;
            self.streak_len = 0;
            return None;
        }
        let start = *self.streak_start.get_or_insert(step);
        self.streak_len += 1;
        (self.streak_len > self.window_steps).then_some(start as f64 * self.dt)
    }
}

/// Recomputes the stop instant from post-trigger velocity samples.
pub fn detect_stop(velocities: &[[f64; 6]], tolerance: f64, window: f64, dt: f64) -> Option<f64> {
    let mut det = StopDetector::new(tolerance, window, dt);
    velocities
        .iter()
        .enumerate()
        .find_map(|(k, v)| det.feed(k, v))
}

/// One plant step. Column order is the CSV schema:
/// `t,vx,vy,vz,wx,wy,wz,theta_p,phi_p,theta_c,phi_c,psi_c,ux,uy,uz,u_theta,u_phi,u_psi,violation_deg,violating`.
/// Angles in radians; `u` is the command held over the step that ended at `t`;
/// `violation_deg` is how far the relative tilt exceeds the slosh limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
    pub theta_p: f64,
    pub phi_p: f64,
    pub theta_c: f64,
    pub phi_c: f64,
    pub psi_c: f64,
    pub ux: f64,
    pub uy: f64,
    pub uz: f64,
    pub u_theta: f64,
    pub u_phi: f64,
    pub u_psi: f64,
    pub violation_deg: f64,
    pub violating: u8,
}

pub const TRACE_COLUMNS: [&str; 20] = [
    "t",
    "vx",
    "vy",
    "vz",
    "wx",
    "wy",
    "wz",
    "theta_p",
    "phi_p",
    "theta_c",
    "phi_c",
    "psi_c",
    "ux",
    "uy",
    "uz",
    "u_theta",
    "u_phi",
    "u_psi",
    "violation_deg",
    "violating",
];

impl TraceRow {
    pub fn velocity(&self) -> [f64; 6] {
        [self.vx, self.vy, self.vz, self.wx, self.wy, self.wz]
    }

    pub fn control(&self) -> [f64; 6] {
        [
            self.ux,
            self.uy,
            self.uz,
            self.u_theta,
            self.u_phi,
            self.u_psi,
        ]
    }

    /// Largest relative tilt `max(|θp − θc|, |φp − φc|)` [deg].
    pub fn relative_tilt_deg(&self) -> f64 {
        (self.theta_p - self.theta_c)
            .abs()
            .max((self.phi_p - self.phi_c).abs())
            .to_degrees()
    }
}

/// Excess of the relative tilt over the (possibly asymmetric) limits [deg].
pub fn violation_deg(rel_theta: f64, rel_phi: f64, lim: &SloshLimits) -> f64 {
    let over = (rel_theta - lim.theta_max)
        .max(lim.theta_min - rel_theta)
        .max(rel_phi - lim.phi_max)
        .max(lim.phi_min - rel_phi);
    over.max(0.0).to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SloshLimits {
    pub theta_min: f64,
    pub theta_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
}

/// Summary of one emergency stop; serialized as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Seconds from the trigger to the start of the sustained stop window;
    /// the elapsed simulated time if the run timed out or spilled.
    pub stopping_time: f64,
    pub stopped: bool,
    pub timed_out: bool,
    /// The pendulum reached the gimbal singularity (liquid spilled).
    pub spilled: bool,
    pub trigger_time: f64,
    pub slosh_limit_deg: f64,
    pub max_tilt_deg: f64,
    pub max_violation_deg: f64,
    pub time_in_violation: f64,
    pub time_in_violation_gt_0p2deg: f64,
    pub plant_dt: f64,
    pub plans: usize,
    pub solver_failures: usize,
    pub mean_qp_iterations: f64,
    /// Oldest plan the executor applied, measured from its creation [s].
    pub max_plan_age: f64,
    #[serde(skip)]
    pub traces: Vec<TraceRow>,
}

/// Post-trigger violation statistics recomputed from trace rows:
/// `(max_tilt_deg, max_violation_deg, time_in_violation, time_gt_0p2)`.
/// Every row after the trigger stands for the plant step that ended at it.
pub fn violation_stats(rows: &[TraceRow], trigger_time: f64, dt: f64) -> (f64, f64, f64, f64) {
    let post = rows.iter().filter(|r| r.t > trigger_time + 0.5 * dt);
    let mut out = (0.0_f64, 0.0_f64, 0.0, 0.0);
    for r in post {
        out.0 = out.0.max(r.relative_tilt_deg());
        out.1 = out.1.max(r.violation_deg);
        if r.violating == 1 {
            out.2 += dt;
        }
        if r.violation_deg > SIGNIFICANT_VIOLATION_DEG {
            out.3 += dt;
        }
    }
    out
}

impl RunMetrics {
    pub fn write_traces_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_traces(&self.traces, path)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }
}

pub fn write_traces(rows: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_traces(path: impl AsRef<Path>) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_requires_sustained_window() {
        let dt = 0.01;
        let mut v = vec![[0.5; 6]; 3];
        v.push([0.0; 6]);
        v.push([0.02; 6]); // a zero crossing is not a stop
        v.extend(std::iter::repeat_n([0.005; 6], 11));
        assert_eq!(detect_stop(&v, 0.01, 0.1, dt), Some(0.05));
        assert_eq!(detect_stop(&v[..14], 0.01, 0.1, dt), None);
    }

    #[test]
    fn zero_velocity_stops_at_trigger() {
        let v = vec![[0.0; 6]; 7];
        assert_eq!(detect_stop(&v, 0.01, 0.1, 1.0 / 60.0), Some(0.0));
    }

    #[test]
    fn violation_is_excess_over_limit() {
        let lim = SloshLimits {
            theta_min: -0.1,
            theta_max: 0.1,
            phi_min: -0.1,
            phi_max: 0.1,
        };
        assert_eq!(violation_deg(0.05, -0.05, &lim), 0.0);
        assert!((violation_deg(0.0, -0.12, &lim) - 0.02_f64.to_degrees()).abs() < 1e-12);
    }
}
