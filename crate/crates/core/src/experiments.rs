//! Study drivers: the rod-length/slosh-limit heatmap, the model-error
//! robustness sweep and the single trigger-stop run, plus their artifacts.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ControlInput;
use crate::ocp::OcpConfig;
use crate::sim::{run_emergency_stop, PlantState, RunMetrics, RuntimeConfig, StopSetup, Velocity6};
use crate::slosh::{estimate_rod_length, ContainerGeometry, PendulumParams, STANDARD_GRAVITY};

/// Velocity of the container when the stop is triggered in the trigger-stop
/// scenario: `[ẋ, ẏ, ż, ω₁, ω₂, ω₃]`.
pub const TRIGGER_VELOCITY: [f64; 6] = [-0.12, 0.32, 0.35, 0.35, 0.06, -0.01];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SweepHeatmap,
    Robustness,
    TriggerStop,
    BaselineCompare,
    RodLength,
}

/// Pre-trigger motion of the sweeps: from rest, the velocity follows a
/// smoothstep `3τ² − 2τ³` up to `speed` on every selected translational axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RampConfig {
    pub speed: f64,
    pub duration: f64,
    pub axes: [bool; 3],
}

impl Default for RampConfig {
    fn default() -> Self {
        Self {
            speed: 1.0,
            duration: 1.0,
            axes: [true; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Heatmap rod lengths [m].
    pub rod_lengths: Vec<f64>,
    /// Heatmap slosh limits [deg].
    pub slosh_limits_deg: Vec<f64>,
    /// Relative rod-length errors handed to the planner in the robustness sweep.
    pub error_fractions: Vec<f64>,
    /// True rod length of the robustness sweep [m].
    pub robustness_rod_length: f64,
    /// Slosh limit of the robustness and trigger-stop runs [deg].
    pub slosh_limit_deg: f64,
    /// Container used to estimate the rod length of the trigger stop [m].
    pub container_radius: f64,
    pub container_fill_height: f64,
    pub trigger_velocity: [f64; 6],
    pub ramp: RampConfig,
    /// Recorded in the outputs; every scenario is deterministic given the
    /// config, so it only labels runs.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub runtime: RuntimeConfig,
    pub ocp: OcpConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::TriggerStop,
            rod_lengths: (1..=10).map(|k| k as f64 * 0.01).collect(),
            slosh_limits_deg: vec![1.0, 3.0, 5.0, 7.0, 9.0, 11.0],
            error_fractions: vec![-0.5, -0.4, -0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            robustness_rod_length: 0.05,
            slosh_limit_deg: 5.0,
            container_radius: 0.04,
            container_fill_height: 0.1,
            trigger_velocity: TRIGGER_VELOCITY,
            ramp: RampConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
            runtime: RuntimeConfig::default(),
            ocp: OcpConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn for_scenario(scenario: Scenario) -> Self {
        Self {
            scenario,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        match self.scenario {
            Scenario::SweepHeatmap
                if self.rod_lengths.is_empty() || self.slosh_limits_deg.is_empty() =>
            {
                return bad("heatmap grids must be non-empty")
            }
            Scenario::Robustness if self.error_fractions.is_empty() => {
                return bad("error grid must be non-empty")
            }
            _ => {}
        }
        if self.rod_lengths.iter().any(|l| !(*l > 0.0)) || !(self.robustness_rod_length > 0.0) {
            return bad("rod lengths must be positive");
        }
        if self
            .slosh_limits_deg
            .iter()
            .chain([&self.slosh_limit_deg])
            .any(|d| !(*d > 0.0))
        {
            return bad("slosh limits must be positive");
        }
        if self.error_fractions.iter().any(|e| !(*e > -1.0)) {
            return bad("error fractions must exceed -1");
        }
        if !(self.ramp.speed.is_finite() && self.ramp.duration > 0.0) {
            return bad("ramp needs a finite speed and positive duration");
        }
        self.runtime.validate()?;
        self.ocp.validate()
    }

    /// Rod length of the configured container.
    pub fn container_rod_length(&self) -> Result<f64> {
        let geom = ContainerGeometry::cylinder(self.container_radius, self.container_fill_height)?;
        estimate_rod_length(&geom, STANDARD_GRAVITY)
    }

    fn ocp_with_limit(&self, limit_deg: f64) -> OcpConfig {
        self.ocp.clone().with_slosh_limit(limit_deg.to_radians())
    }
}

/// Per-step commands of the smoothstep ramp. Each command is the mean
/// acceleration over its step so the sampled velocity lands exactly on the
/// profile.
pub fn smoothstep_ramp(ramp: &RampConfig, dt: f64) -> Vec<ControlInput> {
    let steps = (ramp.duration / dt).round() as usize;
    let profile = |k: usize| {
        let tau = (k as f64 / steps as f64).min(1.0);
        tau * tau * (3.0 - 2.0 * tau)
    };
    (0..steps)
        .map(|k| {
            let a = ramp.speed * (profile(k + 1) - profile(k)) / dt;
            let mut u = ControlInput::zeros();
            for (axis, on) in ramp.axes.iter().enumerate() {
                if *on {
                    u[axis] = a;
                }
            }
            u
        })
        .collect()
}

/// One cell of a sweep. Failed cells keep their grid position with
/// `status = "failed"` and NaN metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub rod_length_mm: f64,
    pub slosh_limit_deg: f64,
    pub error_fraction: f64,
    pub planner_rod_length_mm: f64,
    /// `stopped`, `timeout`, `spilled` or `failed`.
    pub status: String,
    pub stopping_time: f64,
    pub max_tilt_deg: f64,
    pub max_violation_deg: f64,
    pub time_in_violation: f64,
    pub time_in_violation_gt_0p2deg: f64,
    pub solver_failures: usize,
    pub error: String,
}

pub const SWEEP_COLUMNS: [&str; 13] = [
    "index",
    "rod_length_mm",
    "slosh_limit_deg",
    "error_fraction",
    "planner_rod_length_mm",
    "status",
    "stopping_time",
    "max_tilt_deg",
    "max_violation_deg",
    "time_in_violation",
    "time_in_violation_gt_0p2deg",
    "solver_failures",
    "error",
];

impl SweepRow {
    fn new(
        index: usize,
        rod: f64,
        limit_deg: f64,
        error: f64,
        outcome: Result<RunMetrics>,
    ) -> Self {
        let mut row = Self {
            index,
            rod_length_mm: rod * 1e3,
            slosh_limit_deg: limit_deg,
            error_fraction: error,
            planner_rod_length_mm: rod * (1.0 + error) * 1e3,
            status: "failed".into(),
            stopping_time: f64::NAN,
            max_tilt_deg: f64::NAN,
            max_violation_deg: f64::NAN,
            time_in_violation: f64::NAN,
            time_in_violation_gt_0p2deg: f64::NAN,
            solver_failures: 0,
            error: String::new(),
        };
        match outcome {
            Ok(m) => {
                row.status = if m.stopped {
                    "stopped"
                } else if m.spilled {
                    "spilled"
                } else {
                    "timeout"
                }
                .into();
                row.stopping_time = m.stopping_time;
                row.max_tilt_deg = m.max_tilt_deg;
                row.max_violation_deg = m.max_violation_deg;
                row.time_in_violation = m.time_in_violation;
                row.time_in_violation_gt_0p2deg = m.time_in_violation_gt_0p2deg;
                row.solver_failures = m.solver_failures;
            }
            Err(e) => row.error = e.to_string(),
        }
        row
    }

    pub fn stopped(&self) -> bool {
        self.status == "stopped"
    }
}

/// Aggregate written to `metrics.json` by the sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub scenario: Scenario,
    pub seed: u64,
    pub cells: usize,
    pub stopped: usize,
    pub failed: usize,
    pub mean_max_violation_deg: f64,
    pub peak_violation_deg: f64,
    pub mean_stopping_time: f64,
}

impl SweepSummary {
    pub fn from_rows(scenario: Scenario, seed: u64, rows: &[SweepRow]) -> Self {
        let done: Vec<&SweepRow> = rows.iter().filter(|r| r.status != "failed").collect();
        let mean = |f: fn(&SweepRow) -> f64| {
            if done.is_empty() {
                0.0
            } else {
                done.iter().map(|r| f(r)).sum::<f64>() / done.len() as f64
            }
        };
        Self {
            scenario,
            seed,
            cells: rows.len(),
            stopped: rows.iter().filter(|r| r.stopped()).count(),
            failed: rows.len() - done.len(),
            mean_max_violation_deg: mean(|r| r.max_violation_deg),
            peak_violation_deg: done.iter().map(|r| r.max_violation_deg).fold(0.0, f64::max),
            mean_stopping_time: mean(|r| r.stopping_time),
        }
    }
}

/// Stop from the end of the ramp with a planner assuming `planner_rod`.
fn ramp_stop(
    cfg: &ExperimentConfig,
    rod: f64,
    planner_rod: f64,
    limit_deg: f64,
) -> Result<RunMetrics> {
    let mut setup = StopSetup::new(
        PlantState::at_rest(),
        cfg.ocp_with_limit(limit_deg),
        PendulumParams::new(rod)?,
    );
    setup.planner_params = PendulumParams::new(planner_rod)?;
    setup.prelude = smoothstep_ramp(&cfg.ramp, cfg.runtime.plant_dt());
    run_emergency_stop(&setup, &cfg.runtime)
}

/// Rod length × slosh limit grid, row-major in rod length.
pub fn run_heatmap_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let cells: Vec<(usize, f64, f64)> = cfg
        .rod_lengths
        .iter()
        .flat_map(|&l| cfg.slosh_limits_deg.iter().map(move |&d| (l, d)))
        .enumerate()
        .map(|(i, (l, d))| (i, l, d))
        .collect();
    let mut rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(i, l, d)| SweepRow::new(i, l, d, 0.0, ramp_stop(cfg, l, l, d)))
        .collect();
    rows.sort_by_key(|r| r.index);
    Ok(rows)
}

/// Planner rod length `l·(1 + e)` against the true `l`, one cell per error.
pub fn run_robustness_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let l = cfg.robustness_rod_length;
    let d = cfg.slosh_limit_deg;
    let mut rows: Vec<SweepRow> = cfg
        .error_fractions
        .par_iter()
        .enumerate()
        .map(|(i, &e)| SweepRow::new(i, l, d, e, ramp_stop(cfg, l, l * (1.0 + e), d)))
        .collect();
    rows.sort_by_key(|r| r.index);
    Ok(rows)
}

/// Setup of the trigger stop: the container moves with the trigger velocity
/// and carries liquid whose rod length comes from the container geometry.
pub fn trigger_setup(cfg: &ExperimentConfig, baseline: bool) -> Result<StopSetup> {
    cfg.validate()?;
    let params = PendulumParams::new(cfg.container_rod_length()?)?;
    let mut ocp = cfg.ocp_with_limit(cfg.slosh_limit_deg);
    if baseline {
        ocp = ocp.baseline();
    }
    Ok(StopSetup::new(
        PlantState::moving(Velocity6::from(cfg.trigger_velocity)),
        ocp,
        params,
    ))
}

pub fn run_trigger_stop(cfg: &ExperimentConfig, baseline: bool) -> Result<RunMetrics> {
    run_emergency_stop(&trigger_setup(cfg, baseline)?, &cfg.runtime)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ramp_reaches_target_speed() {
        let ramp = RampConfig::default();
        let dt = 1.0 / 60.0;
        let u = smoothstep_ramp(&ramp, dt);
        assert_eq!(u.len(), 60);
        let v: f64 = u.iter().map(|u| u[0] * dt).sum();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        assert_eq!(u[10][3], 0.0);
        // smooth start and end, peak in the middle
        assert!(u[0][1] < u[30][1] && u[59][2] < u[30][2]);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::for_scenario(Scenario::Robustness);
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let partial =
            ExperimentConfig::from_toml("scenario = \"sweep_heatmap\"\nrod_lengths = [0.03]\n")
                .unwrap();
        assert_eq!(partial.rod_lengths, vec![0.03]);
        assert_eq!(partial.slosh_limits_deg.len(), 6);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let mut cfg = ExperimentConfig::for_scenario(Scenario::SweepHeatmap);
        cfg.slosh_limits_deg.clear();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn failed_cell_keeps_its_slot() {
        let row = SweepRow::new(3, 0.02, 5.0, 0.1, Err(Error::NotConvex));
        assert_eq!(row.status, "failed");
        assert!(row.stopping_time.is_nan());
        assert!(!row.error.is_empty());
        assert_abs_diff_eq!(row.planner_rod_length_mm, 22.0, epsilon = 1e-9);
    }
}
