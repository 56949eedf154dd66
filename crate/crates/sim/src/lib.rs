//! Simulated study participants for the re-embodied navigation gateway.

pub mod endpoint;
pub mod metrics;
pub mod runner;
pub mod schedule;
pub mod script;
pub mod telemetry;

pub use endpoint::{Endpoint, EndpointError, InProcess, Live, Received};
pub use metrics::{render_json, render_table, scenario_results, summarize, MetricsError, MetricsRow, MetricsSummary, ScenarioResult};
pub use runner::{in_process_endpoint, run_batch, run_in_process, run_scenario, scenario_seed, RunOptions, SimError, World};
pub use schedule::{latin_square_schedule, ScheduleError, ScheduleRow, Slot};
pub use script::{
    generate_batch, generate_script, load_scenarios, parse_scenarios, scenarios_to_toml, Behavior, ConditionKind, Place, Role,
    ScenarioScript, ScriptError, Step,
};
pub use telemetry::{read_csv, write_csv, EventKind, TelemetryRecord, CSV_HEADER};
