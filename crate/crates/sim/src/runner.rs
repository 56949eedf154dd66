//! Walks a scripted participant through a route against an endpoint.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use reembody_core::handoff::TriggerConfig;
use reembody_core::{DeviceId, DialogueConfig, Millis, NodeId, ReplyKind, RouteGraph, RoutePlan, SessionId};
use reembody_gateway::{Body, Engine, EngineConfig};

use crate::endpoint::{Endpoint, EndpointError, InProcess, Received};
use crate::script::{Place, Role, ScenarioScript, ScriptError};
use crate::telemetry::{EventKind, TelemetryRecord};

pub const DEFAULT_TIMEOUT_MS: Millis = 600_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
}

/// Everything the agent and the participants share.
#[derive(Debug, Clone)]
pub struct World {
    pub graph: Arc<RouteGraph>,
    pub dialogue: Arc<DialogueConfig>,
    pub triggers: TriggerConfig,
}

impl World {
    pub fn new(graph: RouteGraph) -> Self {
        Self {
            graph: Arc::new(graph),
            dialogue: Arc::new(DialogueConfig::shipped().clone()),
            triggers: TriggerConfig::default(),
        }
    }

    pub fn campus() -> Self {
        Self::new(RouteGraph::campus_default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Latency and voice settings for in-process engines. The seed is
    /// replaced per scenario.
    pub engine: EngineConfig,
    pub seed: u64,
    pub timeout_ms: Millis,
    /// Log every display directive as a `display` event.
    pub capture_display: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            seed: 0,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            capture_display: false,
        }
    }
}

/// Per-scenario seed, stable across runs and independent of batch order.
pub fn scenario_seed(seed: u64, script: &ScenarioScript) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in script.session_id().bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

enum Position {
    At(usize),
    /// Back at the robot, having reached this checkpoint.
    Robot(usize),
}

struct TimedOut;

struct Run<'a> {
    script: &'a ScenarioScript,
    g: &'a RouteGraph,
    plan: RoutePlan,
    ep: &'a mut dyn Endpoint,
    rng: ChaCha8Rng,
    session: SessionId,
    records: Vec<TelemetryRecord>,
    deadline: Millis,
    capture: bool,
    pos: Position,
    carry_ms: f64,
}

impl Run<'_> {
    fn log(&mut self, ts_ms: Millis, event: EventKind, detail: serde_json::Value) {
        self.records.push(TelemetryRecord {
            ts_ms,
            participant: self.script.participant,
            condition: self.script.condition,
            route: self.script.route.clone(),
            event,
            detail: detail.to_string(),
        });
    }

    /// Logs what every device sees. Returns the message back for matching.
    fn observe(&mut self, r: &Received) {
        match &r.msg.body {
            Body::DisplayUpdate(d) if self.capture => {
                self.log(r.at, EventKind::Display, json!({ "device": r.device, "ops": d.directives }));
            }
            _ => {}
        }
    }

    fn drain_until(&mut self, at: Millis) -> Result<(), SimError> {
        while let Some(r) = self.ep.recv(at)? {
            self.observe(&r);
            if let Body::AssistantSay(a) = &r.msg.body {
                self.log(r.at, EventKind::Response, json!({ "device": r.device, "kind": a.reply_kind, "text": a.text }));
            }
        }
        Ok(())
    }

    fn walk(&mut self, metres: f64) -> Result<(), TimedOut> {
        let exact = metres / self.script.walking_speed * 1000.0 + self.carry_ms;
        let ms = exact.floor();
        self.carry_ms = exact - ms;
        let target = self.ep.now() + ms as Millis;
        if target > self.deadline {
            self.ep.advance(self.deadline);
            return Err(TimedOut);
        }
        self.ep.advance(target);
        Ok(())
    }

    fn cost(&self, path: &[NodeId]) -> f64 {
        self.g.path_cost(path).unwrap_or_else(|| {
            self.g
                .plan_route(&path[0], &path[path.len() - 1])
                .map(|p| p.total_cost_m)
                .unwrap_or(0.0)
        })
    }

    /// Distance between the robot at the start and checkpoint `k`, retracing
    /// the route.
    fn robot_distance(&self, k: usize) -> f64 {
        let mut back: Vec<NodeId> = self.plan.checkpoints[..=k].to_vec();
        back.reverse();
        self.cost(&back)
    }

    fn walk_to(&mut self, k: usize) -> Result<(), TimedOut> {
        let mut i = match self.pos {
            Position::At(i) => i,
            Position::Robot(j) => {
                let d = self.cost(&self.plan.checkpoints[..=j]);
                self.walk(d)?;
                j
            }
        };
        while i < k {
            let from = self.plan.checkpoints[i].clone();
            let to = self.plan.checkpoints[i + 1].clone();
            if self.script.deviation_probability > 0.0 && self.rng.gen_bool(self.script.deviation_probability) {
                let previous = i.checked_sub(1).map(|p| self.plan.checkpoints[p].clone());
                let wrong: Vec<_> = self.g.out_edges(&from).filter(|e| e.to != to).cloned().collect();
                let forward: Vec<_> = wrong.iter().filter(|e| Some(&e.to) != previous.as_ref()).cloned().collect();
                let pool = if forward.is_empty() { wrong } else { forward };
                if let Some(e) = pool.choose(&mut self.rng).cloned() {
                    let now = self.ep.now();
                    self.log(now, EventKind::Deviation, json!({ "leg": i, "from": from, "wrong": e.to, "expected": to }));
                    self.walk(2.0 * e.cost_m)?;
                }
            }
            let d = self.cost(&[from, to]);
            self.walk(d)?;
            i += 1;
        }
        self.pos = Position::At(k);
        Ok(())
    }

    fn back_to_robot(&mut self) -> Result<(), TimedOut> {
        let Position::At(k) = self.pos else { return Ok(()) };
        let d = self.robot_distance(k);
        self.walk(d)?;
        self.pos = Position::Robot(k);
        Ok(())
    }

    /// Waits for the next message; `None` means the deadline passed.
    fn next(&mut self) -> Result<Option<Received>, SimError> {
        let r = self.ep.recv(self.deadline)?;
        if let Some(r) = &r {
            self.observe(r);
        }
        Ok(r)
    }

    fn speak(&mut self, device: &DeviceId, text: &str) -> Result<Result<(), TimedOut>, SimError> {
        self.drain_until(self.ep.now())?;
        let sent = self.ep.now();
        let seq = self.ep.ptt(&self.session.clone(), device, text)?;
        self.log(sent, EventKind::Interaction, json!({ "device": device, "text": text }));
        // Separate connections may deliver the greeting before the
        // confirmation, so either order completes the exchange.
        let mut confirmed = false;
        let mut transfer_done = false;
        loop {
            let Some(r) = self.next()? else { return Ok(Err(TimedOut)) };
            match &r.msg.body {
                Body::AssistantSay(a) => {
                    let prompted = a.in_reply_to == Some(seq) && &r.device == device;
                    self.log(
                        r.at,
                        EventKind::Response,
                        json!({
                            "device": r.device,
                            "kind": a.reply_kind,
                            "latency_ms": r.at - sent,
                            "prompted": prompted,
                            "text": a.text,
                        }),
                    );
                    if prompted {
                        if a.reply_kind != ReplyKind::HandoffConfirm {
                            return Ok(Ok(()));
                        }
                        confirmed = true;
                    } else if a.reply_kind == ReplyKind::HandoffGreeting {
                        self.log(r.at, EventKind::Handoff, json!({ "from": device, "to": r.device, "latency_ms": r.at - sent }));
                        transfer_done = true;
                    } else if a.reply_kind == ReplyKind::HandoffFailed {
                        transfer_done = true;
                    }
                    if confirmed && transfer_done {
                        return Ok(Ok(()));
                    }
                }
                Body::Error(e) if e.in_reply_to == Some(seq) && &r.device == device => {
                    self.log(
                        r.at,
                        EventKind::Response,
                        json!({ "device": r.device, "error": e.code, "latency_ms": r.at - sent, "prompted": true, "text": e.message }),
                    );
                    return Ok(Ok(()));
                }
                _ => {}
            }
        }
    }

    fn join(&mut self) -> Result<Result<(), TimedOut>, SimError> {
        let start = self.plan.start().clone();
        for role in self.script.condition.roles() {
            let home = (*role == Role::Robot).then_some(&start);
            let id = role.device_id();
            self.ep.join(&self.session.clone(), &id, role.kind(), home)?;
            loop {
                let Some(r) = self.next()? else { return Ok(Err(TimedOut)) };
                if r.device == id && matches!(r.msg.body, Body::HelloAck(_)) {
                    break;
                }
            }
        }
        Ok(Ok(()))
    }

    fn run(&mut self) -> Result<(), SimError> {
        let legs = self.plan.legs.len();
        let steps = self.script.steps.clone();
        let outcome = (|| -> Result<Result<(), TimedOut>, SimError> {
            if let Err(t) = self.join()? {
                return Ok(Err(t));
            }
            for step in &steps {
                let moved = match step.at {
                    Place::Start => Ok(()),
                    Place::Checkpoint => self.walk_to(step.checkpoint),
                    Place::Robot => self.walk_to(step.checkpoint).and_then(|_| self.back_to_robot()),
                };
                if let Err(t) = moved {
                    return Ok(Err(t));
                }
                if let Err(t) = self.speak(&step.device.device_id(), &step.text)? {
                    return Ok(Err(t));
                }
            }
            Ok(self.walk_to(legs))
        })()?;
        match outcome {
            Ok(()) => {
                let now = self.ep.now();
                self.drain_until(now)?;
                let dest = self.plan.destination().clone();
                self.log(now, EventKind::Arrival, json!({ "node": dest }));
            }
            Err(TimedOut) => {
                let deadline = self.deadline;
                self.log(deadline, EventKind::Timeout, json!({ "after_ms": deadline }));
            }
        }
        Ok(())
    }
}

/// Runs one script. The participant's devices join at the endpoint's
/// current time, which is also where the scenario clock starts.
pub fn run_scenario(
    script: &ScenarioScript,
    world: &World,
    endpoint: &mut dyn Endpoint,
    options: &RunOptions,
) -> Result<Vec<TelemetryRecord>, SimError> {
    script.validate(&world.graph, &world.triggers)?;
    let plan = script.plan(&world.graph)?;
    let deadline = endpoint.now() + options.timeout_ms;
    let mut run = Run {
        script,
        g: &world.graph,
        plan,
        ep: endpoint,
        rng: ChaCha8Rng::seed_from_u64(scenario_seed(options.seed, script)),
        session: SessionId::new(script.session_id()),
        records: Vec::new(),
        deadline,
        capture: options.capture_display,
        pos: Position::At(0),
        carry_ms: 0.0,
    };
    run.run()?;
    let mut records = run.records;
    records.sort_by_key(|r| r.ts_ms);
    Ok(records)
}

/// A fresh in-process gateway for `script`, seeded from the batch seed.
pub fn in_process_endpoint(script: &ScenarioScript, world: &World, options: &RunOptions) -> InProcess {
    let mut config = options.engine.clone();
    config.seed = scenario_seed(options.seed ^ 0x6761_7465, script);
    InProcess::new(Engine::new(
        world.graph.clone(),
        world.dialogue.clone(),
        world.triggers.clone(),
        config,
    ))
}

/// Runs every script against its own endpoint from `connect`, in order.
pub fn run_batch<E: Endpoint>(
    scripts: &[ScenarioScript],
    world: &World,
    options: &RunOptions,
    mut connect: impl FnMut(&ScenarioScript) -> E,
) -> Result<Vec<TelemetryRecord>, SimError> {
    for s in scripts {
        s.validate(&world.graph, &world.triggers)?;
    }
    let mut all = Vec::new();
    for s in scripts {
        let mut ep = connect(s);
        all.extend(run_scenario(s, world, &mut ep, options)?);
    }
    Ok(all)
}

pub fn run_in_process(scripts: &[ScenarioScript], world: &World, options: &RunOptions) -> Result<Vec<TelemetryRecord>, SimError> {
    run_batch(scripts, world, options, |s| in_process_endpoint(s, world, options))
}
