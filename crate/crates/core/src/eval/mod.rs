//! Reconstruction metrics, sensor scenarios, fault simulation and ablations.

mod fault;
mod metrics;
mod scenario;

pub use fault::{FaultMask, FaultSchedule};
pub use metrics::{compute_metrics, DiagnosticCounts, FrameMetrics, MetricsReport, ScenarioDescriptor, Stat};
pub use scenario::{reconstruct_clip, run_ablation, run_scenario, standard_scenarios, ClipRun, Models, ReportTable, ScenarioRun, Variant};
