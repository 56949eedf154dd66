//! `reembody` command line.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use tracing::{info, warn};

use reembody_core::handoff::TriggerConfig;
use reembody_core::{DialogueConfig, ErrorModel, LatencyModel, RouteGraph, VoiceConfig};
use reembody_gateway::{Engine, EngineConfig, ServerConfig};
use reembody_sim::{Behavior, RunOptions, ScenarioScript, World};

pub const DEFAULT_ADDR: &str = "127.0.0.1:7700";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 3,
        }
    }
}

fn config(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "reembody", version, about = "Conversational navigation gateway with robot-to-watch hand-off")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the gateway until interrupted. SIGHUP reloads the trigger file.
    Serve(ServeArgs),
    /// Run scripted participants and write their telemetry.
    Simulate(SimulateArgs),
    /// Summarize a telemetry CSV.
    Report(ReportArgs),
    /// Check a route graph and print its study routes.
    ValidateRoutes(ValidateArgs),
    /// Print the condition and route order for each participant.
    Schedule(ScheduleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SttBackend {
    /// Deterministic text pass-through with optional seeded errors.
    Mock,
}

/// World and agent configuration shared by `serve` and `simulate`.
#[derive(Debug, Args)]
pub struct AgentArgs {
    /// Route graph TOML [default: built-in campus graph]
    #[arg(long, value_name = "PATH")]
    pub routes: Option<PathBuf>,
    /// Hand-off trigger TOML [default: built-in triggers]
    #[arg(long, value_name = "PATH")]
    pub triggers: Option<PathBuf>,
    /// Dialogue rules and reply templates TOML [default: built-in]
    #[arg(long, value_name = "PATH")]
    pub dialogue: Option<PathBuf>,
    /// Seed for latency jitter, recognition errors and participants
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mean response time of the stationary device
    #[arg(long, value_name = "MS", default_value_t = 2890)]
    pub robot_latency_ms: u64,
    /// Mean response time of the wearable
    #[arg(long, value_name = "MS", default_value_t = 4260)]
    pub watch_latency_ms: u64,
    /// Time from the transfer request to the greeting on the target
    #[arg(long, value_name = "MS", default_value_t = 3960)]
    pub handoff_latency_ms: u64,
    /// Uniform relative jitter applied to every latency, in [0, 1)
    #[arg(long, value_name = "FRACTION", default_value_t = 0.15)]
    pub latency_jitter: f64,
    /// Speech recognizer
    #[arg(long, value_enum, default_value_t = SttBackend::Mock)]
    pub stt: SttBackend,
    /// Per-word substitution rate of the mock recognizer
    #[arg(long, value_name = "RATE", default_value_t = 0.0)]
    pub stt_sub_rate: f64,
    /// Synthesized speech rate; 1.0 is the reference pace
    #[arg(long, value_name = "RATE", default_value_t = 1.0)]
    pub speaking_rate: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TCP address for JSON-lines clients
    #[arg(long, env = "REEMBODY_ADDR", default_value = DEFAULT_ADDR)]
    pub addr: SocketAddr,
    /// Address for the WebSocket endpoint at /ws and the UI bundle
    #[arg(long, value_name = "ADDR")]
    pub ws_addr: Option<SocketAddr>,
    /// Static UI bundle to serve next to /ws (needs --ws-addr)
    #[arg(long, value_name = "DIR", requires = "ws_addr")]
    pub ui_dir: Option<PathBuf>,
    /// Write gateway events as JSON lines, flushed on shutdown
    #[arg(long, value_name = "PATH")]
    pub telemetry_out: Option<PathBuf>,
    #[command(flatten)]
    pub agent: AgentArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario TOML to run instead of generating scripts
    #[arg(value_name = "SCENARIOS", conflicts_with = "generate", required_unless_present = "generate")]
    pub scenarios: Option<PathBuf>,
    /// Generate scripts for this many participants (three each)
    #[arg(long, value_name = "N")]
    pub generate: Option<u32>,
    /// Telemetry CSV destination
    #[arg(long, value_name = "PATH", default_value = "telemetry.csv")]
    pub out: PathBuf,
    /// Also write the summary as JSON
    #[arg(long, value_name = "PATH")]
    pub json_out: Option<PathBuf>,
    /// Save the scripts that were run as scenario TOML
    #[arg(long, value_name = "PATH")]
    pub write_scenarios: Option<PathBuf>,
    /// Run against a live gateway instead of an in-process one
    #[arg(long, value_name = "ADDR")]
    pub endpoint: Option<SocketAddr>,
    /// Walking speed of generated participants, m/s
    #[arg(long, value_name = "M_PER_S", default_value_t = reembody_sim::script::DEFAULT_WALKING_SPEED)]
    pub walking_speed: f64,
    /// Per-leg probability that a generated participant takes a wrong turn
    #[arg(long, value_name = "P", default_value_t = reembody_sim::script::DEFAULT_DEVIATION_PROBABILITY)]
    pub deviation_probability: f64,
    /// Simulated time limit per scenario
    #[arg(long, value_name = "MS", default_value_t = reembody_sim::runner::DEFAULT_TIMEOUT_MS)]
    pub timeout_ms: u64,
    /// Log every display directive as a `display` event
    #[arg(long)]
    pub capture_display: bool,
    #[command(flatten)]
    pub agent: AgentArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Telemetry CSV written by `simulate`
    #[arg(value_name = "CSV")]
    pub input: PathBuf,
    /// Also write the summary as JSON
    #[arg(long, value_name = "PATH")]
    pub json_out: Option<PathBuf>,
    /// Print JSON instead of the text table
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Route graph TOML [default: built-in campus graph]
    #[arg(long, value_name = "PATH")]
    pub routes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Number of participants
    #[arg(long, value_name = "N", default_value_t = 24)]
    pub participants: u32,
    /// Route graph whose routes are assigned [default: built-in campus graph]
    #[arg(long, value_name = "PATH")]
    pub routes: Option<PathBuf>,
}

/// Logging filter from `REEMBODY_LOG`, default `info`.
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("REEMBODY_LOG").unwrap_or_else(|_| "info".into());
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

pub fn load_graph(path: Option<&Path>) -> Result<RouteGraph, CliError> {
    match path {
        None => Ok(RouteGraph::campus_default()),
        Some(p) => RouteGraph::load_file(p).map_err(|e| match e {
            reembody_core::RouteError::Io { .. } => config(e),
            other => CliError::Config(format!("{}: {other}", p.display())),
        }),
    }
}

fn load_triggers(path: Option<&Path>) -> Result<TriggerConfig, CliError> {
    match path {
        None => Ok(TriggerConfig::default()),
        Some(p) => TriggerConfig::load_file(p).map_err(|e| CliError::Config(prefixed(p, e))),
    }
}

fn load_dialogue(path: Option<&Path>) -> Result<DialogueConfig, CliError> {
    match path {
        None => Ok(DialogueConfig::shipped().clone()),
        Some(p) => DialogueConfig::load_file(p).map_err(|e| CliError::Config(prefixed(p, e))),
    }
}

fn prefixed(p: &Path, e: reembody_core::dialogue::ConfigError) -> String {
    match e {
        reembody_core::dialogue::ConfigError::Io { .. } => e.to_string(),
        other => format!("{}: {other}", p.display()),
    }
}

impl AgentArgs {
    pub fn engine_config(&self) -> Result<EngineConfig, CliError> {
        if !(0.0..1.0).contains(&self.latency_jitter) {
            return Err(CliError::Config(format!("--latency-jitter {} outside [0, 1)", self.latency_jitter)));
        }
        let stt_errors = ErrorModel {
            substitution_rate: self.stt_sub_rate,
            drop_rate: 0.0,
            seed: self.seed,
        };
        stt_errors.validate().map_err(|e| CliError::Config(format!("--stt-sub-rate: {e}")))?;
        let voice = VoiceConfig::new(VoiceConfig::default().voice_id, self.speaking_rate)
            .map_err(|e| CliError::Config(format!("--speaking-rate: {e}")))?;
        Ok(EngineConfig {
            stationary_latency: LatencyModel::from_total(self.robot_latency_ms),
            wearable_latency: LatencyModel::from_total(self.watch_latency_ms),
            handoff_latency_ms: self.handoff_latency_ms,
            voice,
            stt_errors,
            seed: self.seed,
            ..EngineConfig::default()
        }
        .with_jitter(self.latency_jitter))
    }

    pub fn world(&self) -> Result<World, CliError> {
        let graph = load_graph(self.routes.as_deref())?;
        let mut world = World::new(graph);
        world.triggers = load_triggers(self.triggers.as_deref())?;
        world.dialogue = std::sync::Arc::new(load_dialogue(self.dialogue.as_deref())?);
        Ok(world)
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Serve(a) => serve(a),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => report(a),
        Command::ValidateRoutes(a) => validate_routes(a),
        Command::Schedule(a) => schedule(a),
    }
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let world = a.agent.world()?;
    let engine_config = a.agent.engine_config()?;
    if let Some(dir) = &a.ui_dir {
        if !dir.is_dir() {
            return Err(CliError::Config(format!("UI directory {} does not exist", dir.display())));
        }
    }
    let engine = Engine::new(world.graph, world.dialogue, world.triggers, engine_config);
    let mut server = ServerConfig::new(a.addr);
    server.ws_addr = a.ws_addr;
    server.ui_dir = a.ui_dir.clone();
    server.telemetry_out = a.telemetry_out.clone();
    let triggers_path = a.agent.triggers.clone();

    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(async move {
        let gw = reembody_gateway::start(engine, server).await.map_err(|e| match e {
            reembody_gateway::ServerError::Telemetry { .. } | reembody_gateway::ServerError::UiDir(_) => config(e),
            other => runtime(other),
        })?;
        info!(tcp = %gw.tcp_addr, ws = ?gw.ws_addr, "gateway listening");
        wait_for_shutdown(&gw, triggers_path.as_deref()).await;
        info!("shutting down");
        gw.shutdown().await.map_err(runtime)?;
        Ok(())
    })
}

#[cfg(unix)]
async fn wait_for_shutdown(gw: &reembody_gateway::RunningGateway, triggers: Option<&Path>) {
    use tokio::signal::unix::{signal, SignalKind};
    let (Ok(mut hup), Ok(mut term)) = (signal(SignalKind::hangup()), signal(SignalKind::terminate())) else {
        let _ = tokio::signal::ctrl_c().await;
        return;
    };
    loop {
        tokio::select! {
            _ = tokio::signal::ctrl_c() => return,
            _ = term.recv() => return,
            _ = hup.recv() => match load_triggers(triggers) {
                Ok(t) => {
                    if gw.reload_triggers(t).is_ok() {
                        info!("trigger configuration reloaded");
                    }
                }
                Err(e) => warn!("keeping previous triggers: {e}"),
            },
        }
    }
}

#[cfg(not(unix))]
async fn wait_for_shutdown(_gw: &reembody_gateway::RunningGateway, _triggers: Option<&Path>) {
    let _ = tokio::signal::ctrl_c().await;
}

fn write_file(path: &Path, what: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::Config(format!("cannot create {what} {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let world = a.agent.world()?;
    let engine = a.agent.engine_config()?;
    let scripts: Vec<ScenarioScript> = match (&a.scenarios, a.generate) {
        (Some(path), _) => reembody_sim::load_scenarios(path).map_err(config)?,
        (None, Some(n)) => {
            let behavior = Behavior {
                walking_speed: a.walking_speed,
                deviation_probability: a.deviation_probability,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(a.agent.seed);
            reembody_sim::generate_batch(n, &world.graph, behavior, &mut rng).map_err(config)?
        }
        (None, None) => return Err(CliError::Config("give a scenario file or --generate N".into())),
    };
    for s in &scripts {
        s.validate(&world.graph, &world.triggers).map_err(config)?;
    }
    if let Some(path) = &a.write_scenarios {
        let text = reembody_sim::scenarios_to_toml(&scripts);
        write_file(path, "scenario file", |w| w.write_all(text.as_bytes()))?;
    }
    let options = RunOptions {
        engine,
        seed: a.agent.seed,
        timeout_ms: a.timeout_ms,
        capture_display: a.capture_display,
    };
    let records = match a.endpoint {
        None => reembody_sim::run_in_process(&scripts, &world, &options),
        Some(addr) => reembody_sim::run_batch(&scripts, &world, &options, |_| reembody_sim::Live::new(addr)),
    }
    .map_err(|e| match e {
        reembody_sim::SimError::Script(s) => config(s),
        other => runtime(other),
    })?;
    write_file(&a.out, "telemetry file", |w| reembody_sim::write_csv(w, &records).map_err(std::io::Error::other))?;
    let summary = reembody_sim::summarize(&records).map_err(runtime)?;
    println!("{} scenarios, telemetry in {}", scripts.len(), a.out.display());
    print!("{}", reembody_sim::render_table(&summary));
    if let Some(path) = &a.json_out {
        let json = reembody_sim::render_json(&summary);
        write_file(path, "summary file", |w| writeln!(w, "{json}"))?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), CliError> {
    let file = File::open(&a.input).map_err(|e| CliError::Config(format!("cannot read {}: {e}", a.input.display())))?;
    let records = reembody_sim::read_csv(file).map_err(|e| CliError::Config(format!("{}: {e}", a.input.display())))?;
    let summary = reembody_sim::summarize(&records).map_err(|e| CliError::Config(format!("{}: {e}", a.input.display())))?;
    let json = reembody_sim::render_json(&summary);
    if a.json {
        println!("{json}");
    } else {
        print!("{}", reembody_sim::render_table(&summary));
    }
    if let Some(path) = &a.json_out {
        write_file(path, "summary file", |w| writeln!(w, "{json}"))?;
    }
    Ok(())
}

fn validate_routes(a: ValidateArgs) -> Result<(), CliError> {
    let g = load_graph(a.routes.as_deref())?;
    let landmarks = g.nodes().filter(|n| n.is_landmark()).count();
    println!("{} nodes ({landmarks} landmarks), {} edges", g.node_count(), g.edge_count());
    let mut failed = Vec::new();
    for r in g.routes() {
        match g.plan_route(&r.start, &r.destination) {
            Ok(plan) => {
                let path: Vec<&str> = plan.checkpoints.iter().map(|c| c.as_str()).collect();
                println!("{:<16} {} legs, {:.1} m: {}", r.id, plan.legs.len(), plan.total_cost_m, path.join(" -> "));
            }
            Err(e) => failed.push(format!("route `{}`: {e}", r.id)),
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(failed.join("\n")))
    }
}

fn schedule(a: ScheduleArgs) -> Result<(), CliError> {
    let g = load_graph(a.routes.as_deref())?;
    let mut routes: Vec<&str> = g.routes().iter().map(|r| r.id.as_str()).collect();
    routes.sort_unstable();
    if routes.len() != 3 {
        return Err(CliError::Config(format!("the schedule needs exactly 3 routes, found {}", routes.len())));
    }
    let rows = reembody_sim::latin_square_schedule(a.participants).map_err(config)?;
    let cell = |s: &reembody_sim::Slot| format!("{}/{}", s.condition, routes[s.route]);
    let width = rows
        .iter()
        .flat_map(|r| r.slots.iter().map(|s| cell(s).len()))
        .max()
        .unwrap_or(0);
    println!("{:>11}  {:<width$}  {:<width$}  third", "participant", "first", "second");
    for r in &rows {
        println!(
            "{:>11}  {:<width$}  {:<width$}  {}",
            r.participant,
            cell(&r.slots[0]),
            cell(&r.slots[1]),
            cell(&r.slots[2])
        );
    }
    Ok(())
}
