//! Participant scripts: what to say, where, and on which device.
//!
//! Scenario files are TOML with one `[[scenario]]` table per script and
//! `[[scenario.steps]]` for its utterance plan. See `docs/scenarios.md`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use reembody_core::handoff::TriggerConfig;
use reembody_core::{parse_intent, DeviceId, DeviceKind, Intent, NodeId, RouteGraph, RoutePlan};

use crate::schedule::latin_square_schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    RobotOnly,
    WearableOnly,
    Handoff,
}

impl ConditionKind {
    pub const ALL: [ConditionKind; 3] = [Self::RobotOnly, Self::WearableOnly, Self::Handoff];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::RobotOnly => "robot_only",
            Self::WearableOnly => "wearable_only",
            Self::Handoff => "handoff",
        }
    }

    pub fn roles(self) -> &'static [Role] {
        match self {
            Self::RobotOnly => &[Role::Robot],
            Self::WearableOnly => &[Role::Watch],
            Self::Handoff => &[Role::Robot, Role::Watch],
        }
    }
}

impl fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown condition `{s}`"))
    }
}

/// Which of the participant's devices an utterance goes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Robot,
    Watch,
}

impl Role {
    pub fn device_id(self) -> DeviceId {
        match self {
            Self::Robot => DeviceId::new("robot1"),
            Self::Watch => DeviceId::new("watch1"),
        }
    }

    pub fn kind(self) -> DeviceKind {
        match self {
            Self::Robot => DeviceKind::Stationary,
            Self::Watch => DeviceKind::Wearable,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Place {
    /// The route's start, before walking.
    Start,
    /// On reaching `checkpoint`.
    Checkpoint,
    /// Back at the robot after reaching `checkpoint`.
    Robot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub at: Place,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub checkpoint: usize,
    pub device: Role,
    pub text: String,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

pub const DEFAULT_WALKING_SPEED: f64 = 1.4;
pub const DEFAULT_DEVIATION_PROBABILITY: f64 = 0.2;

fn default_speed() -> f64 {
    DEFAULT_WALKING_SPEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub participant: u32,
    pub condition: ConditionKind,
    pub route: String,
    #[serde(default = "default_speed")]
    pub walking_speed: f64,
    #[serde(default)]
    pub deviation_probability: f64,
    #[serde(default)]
    pub return_to_robot: bool,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    scenario: Vec<ScenarioScript>,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("participant {participant} {condition} on `{route}`: {message}")]
    Invalid {
        participant: u32,
        condition: ConditionKind,
        route: String,
        message: String,
    },
}

impl ScenarioScript {
    pub fn session_id(&self) -> String {
        format!("p{}-{}-{}", self.participant, self.condition, self.route)
    }

    fn invalid(&self, message: impl Into<String>) -> ScriptError {
        ScriptError::Invalid {
            participant: self.participant,
            condition: self.condition,
            route: self.route.clone(),
            message: message.into(),
        }
    }

    /// The checkpoint path this script walks.
    pub fn plan(&self, g: &RouteGraph) -> Result<RoutePlan, ScriptError> {
        let def = g.route(&self.route).ok_or_else(|| self.invalid("route is not defined in the graph"))?;
        g.plan_route(&def.start, &def.destination)
            .map_err(|e| self.invalid(format!("route cannot be planned: {e}")))
    }

    pub fn validate(&self, g: &RouteGraph, triggers: &TriggerConfig) -> Result<(), ScriptError> {
        if !(self.walking_speed.is_finite() && self.walking_speed > 0.0) {
            return Err(self.invalid("walking_speed must be positive"));
        }
        if !(0.0..=1.0).contains(&self.deviation_probability) {
            return Err(self.invalid("deviation_probability must be within [0, 1]"));
        }
        let plan = self.plan(g)?;
        let legs = plan.legs.len();
        if legs == 0 {
            return Err(self.invalid("route starts at its destination"));
        }
        match self.steps.first() {
            None => return Err(self.invalid("no steps")),
            Some(s) if s.at != Place::Start => return Err(self.invalid("first step must be at the start")),
            _ => {}
        }
        if self.return_to_robot && self.condition != ConditionKind::RobotOnly {
            return Err(self.invalid("only robot_only scripts may return to the robot"));
        }
        let mut reached = 0;
        let mut handoffs = 0;
        for (i, step) in self.steps.iter().enumerate() {
            let n = i + 1;
            if !self.condition.roles().contains(&step.device) {
                return Err(self.invalid(format!("step {n}: no {:?} device in this condition", step.device)));
            }
            let here = match step.at {
                Place::Start if step.checkpoint != 0 => {
                    return Err(self.invalid(format!("step {n}: start has no checkpoint")));
                }
                Place::Start => 0,
                Place::Robot if !self.return_to_robot => {
                    return Err(self.invalid(format!("step {n}: robot steps need return_to_robot")));
                }
                Place::Checkpoint | Place::Robot => step.checkpoint,
            };
            if here >= legs {
                return Err(self.invalid(format!("step {n}: checkpoint {here} is at or past the destination")));
            }
            if here < reached {
                return Err(self.invalid(format!("step {n}: checkpoints must not go backwards")));
            }
            reached = here;
            if step.text.trim().is_empty() {
                return Err(self.invalid(format!("step {n}: empty utterance")));
            }
            if matches!(parse_intent(&step.text, g, triggers), Intent::HandoffRequest(_)) {
                handoffs += 1;
            }
        }
        let wanted = usize::from(self.condition == ConditionKind::Handoff);
        if handoffs != wanted {
            return Err(self.invalid(format!("expected {wanted} hand-off request(s), found {handoffs}")));
        }
        Ok(())
    }
}

pub fn parse_scenarios(text: &str) -> Result<Vec<ScenarioScript>, ScriptError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ScriptError::Parse(e.to_string()))?;
    Ok(file.scenario)
}

pub fn load_scenarios(path: impl AsRef<Path>) -> Result<Vec<ScenarioScript>, ScriptError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenarios(&text).map_err(|e| match e {
        ScriptError::Parse(m) => ScriptError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn scenarios_to_toml(scripts: &[ScenarioScript]) -> String {
    toml::to_string(&ScenarioFile { scenario: scripts.to_vec() }).expect("scripts serialize")
}

/// Knobs shared by generated scripts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Behavior {
    pub walking_speed: f64,
    pub deviation_probability: f64,
}

impl Default for Behavior {
    fn default() -> Self {
        Self {
            walking_speed: DEFAULT_WALKING_SPEED,
            deviation_probability: DEFAULT_DEVIATION_PROBABILITY,
        }
    }
}

/// A phrase naming `node` that the parser resolves back to it: the label
/// when it is unambiguous, else the node id.
fn name_for(g: &RouteGraph, node: &NodeId, template: &str, expect: impl Fn(&Intent) -> bool) -> String {
    let label = g.node(node).map(|n| n.label.clone()).unwrap_or_default();
    let triggers = TriggerConfig::default();
    for name in [label, node.as_str().replace('_', " ")] {
        let text = template.replace("{}", &name);
        if expect(&parse_intent(&text, g, &triggers)) {
            return text;
        }
    }
    template.replace("{}", node.as_str())
}

pub const FULL_ROUTE: &str = "Can you tell me the whole route?";
pub const NEXT_STEP: &str = "What's next?";
pub const TRANSFER: &str = "Can we continue on my watch?";

/// The study script for one participant, condition and route. Robot-only
/// participants either ask for the whole route up front or walk back to the
/// robot for each next step; `rng` picks which.
pub fn generate_script(
    participant: u32,
    condition: ConditionKind,
    route: &str,
    g: &RouteGraph,
    behavior: Behavior,
    rng: &mut impl Rng,
) -> Result<ScenarioScript, ScriptError> {
    let mut script = ScenarioScript {
        participant,
        condition,
        route: route.to_owned(),
        walking_speed: behavior.walking_speed,
        deviation_probability: behavior.deviation_probability,
        return_to_robot: false,
        steps: Vec::new(),
    };
    let plan = script.plan(g)?;
    let start = plan.start().clone();
    let dest = plan.destination().clone();
    let hello = name_for(g, &start, "Hi, I'm at the {}.", |i| *i == Intent::ProvideLocation(start.clone()));
    let ask = name_for(g, &dest, "Where is the {}?", |i| *i == Intent::AskDestination(dest.clone()));
    let first = if condition == ConditionKind::WearableOnly { Role::Watch } else { Role::Robot };
    let step = |at, checkpoint, device, text: &str| Step {
        at,
        checkpoint,
        device,
        text: text.to_owned(),
    };
    script.steps.push(step(Place::Start, 0, first, &hello));
    script.steps.push(step(Place::Start, 0, first, &ask));
    let legs = plan.legs.len();
    match condition {
        ConditionKind::RobotOnly => {
            if legs > 1 && rng.gen_bool(0.5) {
                script.return_to_robot = true;
                for k in 1..legs {
                    script.steps.push(step(Place::Robot, k, Role::Robot, NEXT_STEP));
                }
            } else {
                script.steps.push(step(Place::Start, 0, Role::Robot, FULL_ROUTE));
            }
        }
        ConditionKind::WearableOnly | ConditionKind::Handoff => {
            if condition == ConditionKind::Handoff {
                script.steps.push(step(Place::Start, 0, Role::Robot, TRANSFER));
            }
            for k in 1..legs {
                script.steps.push(step(Place::Checkpoint, k, Role::Watch, NEXT_STEP));
            }
        }
    }
    Ok(script)
}

/// Three scripts per participant following the Latin-square schedule over
/// the graph's routes in id order.
pub fn generate_batch(
    participants: u32,
    g: &RouteGraph,
    behavior: Behavior,
    rng: &mut impl Rng,
) -> Result<Vec<ScenarioScript>, ScriptError> {
    let mut routes: Vec<&str> = g.routes().iter().map(|r| r.id.as_str()).collect();
    routes.sort_unstable();
    if routes.len() != 3 {
        return Err(ScriptError::Parse(format!(
            "generated batches need exactly 3 routes in the graph, found {}",
            routes.len()
        )));
    }
    let rows = latin_square_schedule(participants).map_err(|e| ScriptError::Parse(e.to_string()))?;
    let mut out = Vec::with_capacity(rows.len() * 3);
    for row in rows {
        for slot in row.slots {
            out.push(generate_script(row.participant, slot.condition, routes[slot.route], g, behavior, rng)?);
        }
    }
    Ok(out)
}
