//! Closed-loop simulation of the emergency stop.

pub mod mailbox;
pub mod metrics;
pub mod plant;
pub mod runtime;

pub use metrics::{detect_stop, RunMetrics, StopDetector, TraceRow, TRACE_COLUMNS};
pub use plant::{plant_step, Mode, Plant, PlantState, Velocity6};
pub use runtime::{run_emergency_stop, RuntimeConfig, StopSetup};
