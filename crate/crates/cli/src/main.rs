use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use slosh_stop::experiments::{
    run_heatmap_sweep, run_robustness_sweep, run_trigger_stop, write_json, write_sweep_csv,
    ExperimentConfig, Scenario, SweepRow, SweepSummary,
};
use slosh_stop::sim::{Mode, RunMetrics};
use slosh_stop::slosh::{estimate_rod_length, ContainerGeometry, STANDARD_GRAVITY};

#[derive(Parser)]
#[command(
    name = "slosh-stop",
    version,
    about = "Spill-free emergency stop experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pendulum rod length of a cylindrical container.
    RodLength {
        /// Inner radius [mm].
        #[arg(long, default_value_t = 40.0)]
        radius: f64,
        /// Liquid fill height [mm].
        #[arg(long, default_value_t = 100.0)]
        fill_height: f64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Emergency stop from the trigger velocity.
    Stop(Common),
    /// Same stop with and without the slosh constraints.
    Baseline(Common),
    /// Stopping time over rod lengths and slosh limits.
    Heatmap(Common),
    /// Slosh violation under a misspecified rod length.
    Robustness(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; flags override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Run the planner on its own thread in real time.
    #[arg(long)]
    threaded: bool,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Heatmap rod lengths [mm].
    #[arg(long, value_delimiter = ',')]
    rods: Option<Vec<f64>>,
    /// Heatmap slosh limits [deg].
    #[arg(long, value_delimiter = ',')]
    limits: Option<Vec<f64>>,
    /// Robustness rod-length errors as fractions.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    errors: Option<Vec<f64>>,
    /// Slosh limit of the stop and robustness runs [deg].
    #[arg(long)]
    limit: Option<f64>,
    /// Jerk weight of the stop problem.
    #[arg(long)]
    jerk_weight: Option<f64>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: slosh_stop::Error| e.to_string())
}

impl Common {
    fn config(&self, scenario: Scenario) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        cfg.scenario = scenario;
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if self.threaded {
            cfg.runtime.deterministic = false;
        }
        if let Some(m) = self.mode {
            cfg.runtime.mode = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = &self.rods {
            cfg.rod_lengths = r.iter().map(|mm| mm * 1e-3).collect();
        }
        if let Some(l) = &self.limits {
            cfg.slosh_limits_deg = l.clone();
        }
        if let Some(e) = &self.errors {
            cfg.error_fractions = e.clone();
        }
        if let Some(l) = self.limit {
            cfg.slosh_limit_deg = l;
        }
        if let Some(w) = self.jerk_weight {
            cfg.ocp.c_jerk = w;
        }
        cfg.validate()?;
        std::fs::create_dir_all(&cfg.output_dir)
            .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct RodLengthReport {
    radius_mm: f64,
    fill_height_mm: f64,
    rod_length_mm: f64,
}

#[derive(Serialize)]
struct Comparison<'a> {
    ours: &'a RunMetrics,
    baseline: &'a RunMetrics,
}

fn write_run(m: &RunMetrics, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    m.write_traces_csv(dir.join("traces.csv"))?;
    m.write_json(dir.join("metrics.json"))?;
    Ok(())
}

fn print_run(label: &str, m: &RunMetrics) {
    println!(
        "{label}: stopping time {:.3} s ({}), max tilt {:.2} deg, max violation {:.3} deg, {} plans, {} solver failures",
        m.stopping_time,
        if m.stopped {
            "stopped"
        } else if m.spilled {
            "spilled"
        } else {
            "timed out"
        },
        m.max_tilt_deg,
        m.max_violation_deg,
        m.plans,
        m.solver_failures,
    );
}

fn write_sweep(cfg: &ExperimentConfig, rows: &[SweepRow]) -> Result<()> {
    write_sweep_csv(rows, cfg.output_dir.join("sweep.csv"))?;
    let summary = SweepSummary::from_rows(cfg.scenario, cfg.seed, rows);
    write_json(&summary, cfg.output_dir.join("metrics.json"))?;
    for r in rows {
        println!(
            "l {:6.1} mm  limit {:4.1} deg  err {:+.2}  {:8}  t {:.3} s  violation {:.3} deg",
            r.rod_length_mm,
            r.slosh_limit_deg,
            r.error_fraction,
            r.status,
            r.stopping_time,
            r.max_violation_deg
        );
    }
    println!(
        "{} cells, {} failed, mean max violation {:.3} deg, peak {:.3} deg",
        summary.cells, summary.failed, summary.mean_max_violation_deg, summary.peak_violation_deg
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    match cli.command {
        Command::RodLength {
            radius,
            fill_height,
            out,
        } => {
            let geom = ContainerGeometry::cylinder(radius * 1e-3, fill_height * 1e-3)?;
            let l = estimate_rod_length(&geom, STANDARD_GRAVITY)?;
            println!("rod length {:.2} mm", l * 1e3);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let report = RodLengthReport {
                    radius_mm: radius,
                    fill_height_mm: fill_height,
                    rod_length_mm: l * 1e3,
                };
                write_json(&report, dir.join("metrics.json"))?;
            }
        }
        Command::Stop(c) => {
            let cfg = c.config(Scenario::TriggerStop)?;
            let m = run_trigger_stop(&cfg, false)?;
            write_run(&m, &cfg.output_dir)?;
            print_run("stop", &m);
        }
        Command::Baseline(c) => {
            let cfg = c.config(Scenario::BaselineCompare)?;
            let ours = run_trigger_stop(&cfg, false)?;
            let baseline = run_trigger_stop(&cfg, true)?;
            write_run(&ours, &cfg.output_dir.join("ours"))?;
            write_run(&baseline, &cfg.output_dir.join("baseline"))?;
            write_json(
                &Comparison {
                    ours: &ours,
                    baseline: &baseline,
                },
                cfg.output_dir.join("metrics.json"),
            )?;
            print_run("ours", &ours);
            print_run("baseline", &baseline);
        }
        Command::Heatmap(c) => {
            let cfg = c.config(Scenario::SweepHeatmap)?;
            let rows = run_heatmap_sweep(&cfg)?;
            write_sweep(&cfg, &rows)?;
        }
        Command::Robustness(c) => {
            let cfg = c.config(Scenario::Robustness)?;
            let rows = run_robustness_sweep(&cfg)?;
            write_sweep(&cfg, &rows)?;
        }
    }
    eprintln!("done in {:.2?}", started.elapsed());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
