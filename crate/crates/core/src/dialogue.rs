//! The conversational agent: closed-domain intent parsing, phase
//! transitions and templated replies over the route world.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::handoff::TriggerConfig;
use crate::model::{DeviceKind, DialoguePhase, Intent, NodeId, SessionState};
use crate::routes::{render_instruction, RenderMode, RouteError, RouteGraph, RoutePlan};

pub const DEFAULT_DIALOGUE_CONFIG: &str = include_str!("../../../config/dialogue.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("intent `{0}` has no patterns")]
    EmptyPatterns(String),
    #[error("pattern `{pattern}`: {reason}")]
    BadPattern { pattern: String, reason: String },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

// ---- text normalization and patterns --------------------------------------

/// Lowercases, drops apostrophes, turns other punctuation into spaces.
pub fn normalize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| *c != '\'' && *c != '’')
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Place,
    Landmark,
    Device,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternToken {
    Word(String),
    Slot(SlotKind),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub source: String,
    pub tokens: Vec<PatternToken>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotValue {
    Node(NodeId),
    Device(DeviceKind),
}

impl Pattern {
    pub fn compile(source: &str, allowed: &[SlotKind]) -> Result<Self, ConfigError> {
        let bad = |reason: &str| ConfigError::BadPattern {
            pattern: source.to_owned(),
            reason: reason.to_owned(),
        };
        let mut tokens = Vec::new();
        for raw in source.split_whitespace() {
            let token = match raw {
                "{place}" => PatternToken::Slot(SlotKind::Place),
                "{landmark}" => PatternToken::Slot(SlotKind::Landmark),
                "{device}" => PatternToken::Slot(SlotKind::Device),
                w if w.contains('{') || w.contains('}') => return Err(bad("unknown slot marker")),
                w => {
                    let norm = normalize(w);
                    if norm.len() != 1 {
                        return Err(bad("pattern words must be plain lowercase words"));
                    }
                    PatternToken::Word(norm.into_iter().next().expect("one word"))
                }
            };
            if let PatternToken::Slot(k) = &token {
                if !allowed.contains(k) {
                    return Err(bad("slot not allowed here"));
                }
            }
            tokens.push(token);
        }
        if tokens.is_empty() {
            return Err(bad("empty pattern"));
        }
        if tokens.iter().filter(|t| matches!(t, PatternToken::Slot(_))).count() > 1 {
            return Err(bad("at most one slot per pattern"));
        }
        Ok(Self {
            source: source.to_owned(),
            tokens,
        })
    }

    /// First (leftmost) match in `words`, with its slot value if any.
    pub fn find(&self, words: &[String], vocab: &Vocabulary) -> Option<Option<SlotValue>> {
        (0..words.len()).find_map(|start| self.match_at(words, start, vocab))
    }

    fn match_at(&self, words: &[String], start: usize, vocab: &Vocabulary) -> Option<Option<SlotValue>> {
        let mut pos = start;
        let mut slot = None;
        for (ti, token) in self.tokens.iter().enumerate() {
            match token {
                PatternToken::Word(w) => {
                    if words.get(pos) != Some(w) {
                        return None;
                    }
                    pos += 1;
                }
                PatternToken::Slot(kind) => {
                    // Longest name first, but it must leave the rest of the
                    // pattern matchable.
                    let rest = &self.tokens[ti + 1..];
                    let (len, value) = vocab.lookup(*kind, &words[pos..]).into_iter().find(|(len, _)| {
                        rest.iter().enumerate().all(|(k, t)| match t {
                            PatternToken::Word(w) => words.get(pos + len + k) == Some(w),
                            PatternToken::Slot(_) => false,
                        })
                    })?;
                    slot = Some(value);
                    pos += len;
                }
            }
        }
        Some(slot)
    }
}

/// Slot vocabulary resolved against one route graph and trigger config.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    /// (name words, node, rank) with rank 0 for label/id names and 1 for
    /// `<color> <shape>` descriptors.
    nodes: Vec<(Vec<String>, NodeId, u8)>,
    devices: Vec<(String, DeviceKind)>,
}

impl Vocabulary {
    pub fn build(g: &RouteGraph, triggers: &TriggerConfig, config: &DialogueConfig) -> Self {
        let mut nodes = Vec::new();
        for n in g.nodes() {
            let names = [n.label.clone(), n.id.as_str().replace('_', " ")];
            for name in names {
                let words = config.clean(&normalize(&name));
                if !words.is_empty() {
                    nodes.push((words, n.id.clone(), 0));
                }
            }
            if let Some(m) = &n.marker {
                nodes.push((config.clean(&normalize(&m.describe())), n.id.clone(), 1));
            }
        }
        let devices = triggers
            .device_words
            .iter()
            .map(|(w, k)| (w.to_lowercase(), *k))
            .collect();
        Self { nodes, devices }
    }

    /// Candidate (word count, value) pairs at the head of `words`,
    /// longest first.
    fn lookup(&self, kind: SlotKind, words: &[String]) -> Vec<(usize, SlotValue)> {
        match kind {
            SlotKind::Device => self
                .devices
                .iter()
                .filter(|(w, _)| words.first() == Some(w))
                .map(|(_, k)| (1, SlotValue::Device(*k)))
                .take(1)
                .collect(),
            SlotKind::Place | SlotKind::Landmark => {
                let mut by_len: BTreeMap<usize, (u8, NodeId)> = BTreeMap::new();
                for (name, id, rank) in &self.nodes {
                    if words.len() >= name.len() && words[..name.len()] == name[..] {
                        let cand = (*rank, id.clone());
                        by_len
                            .entry(name.len())
                            .and_modify(|best| {
                                if cand < *best {
                                    *best = cand.clone();
                                }
                            })
                            .or_insert(cand);
                    }
                }
                by_len
                    .into_iter()
                    .rev()
                    .map(|(len, (_, id))| (len, SlotValue::Node(id)))
                    .collect()
            }
        }
    }
}

// ---- configuration --------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentName {
    Greet,
    ProvideLocation,
    AskDestination,
    AskFullRoute,
    AskNextStep,
    ConfirmArrival,
}

/// One intent with its phrase templates.
#[derive(Debug, Clone)]
pub struct ParseRule {
    pub intent: IntentName,
    pub patterns: Vec<Pattern>,
}

impl ParseRule {
    fn build(&self, slot: Option<SlotValue>) -> Option<Intent> {
        Some(match (self.intent, slot) {
            (IntentName::Greet, _) => Intent::Greet,
            (IntentName::AskFullRoute, _) => Intent::AskFullRoute,
            (IntentName::AskNextStep, _) => Intent::AskNextStep,
            (IntentName::ConfirmArrival, _) => Intent::ConfirmArrival,
            (IntentName::ProvideLocation, Some(SlotValue::Node(n))) => Intent::ProvideLocation(n),
            (IntentName::AskDestination, Some(SlotValue::Node(n))) => Intent::AskDestination(n),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplyTemplates {
    pub greeting: String,
    pub greeting_known_location: String,
    pub elicit_location: String,
    pub elicit_destination: String,
    pub location_ack: String,
    pub reprompt: String,
    pub no_route: String,
    pub already_there: String,
    pub not_there_yet: String,
    pub arrived: String,
    pub already_arrived: String,
    pub handoff_confirm: String,
    pub handoff_greeting: String,
    pub handoff_unavailable: String,
    pub handoff_same_device: String,
    pub handoff_in_progress: String,
    pub handoff_failed: String,
    pub handoff_offer: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDocument {
    #[serde(default)]
    filler: Vec<String>,
    #[serde(default)]
    synonyms: BTreeMap<String, String>,
    intents: Vec<IntentDocument>,
    replies: ReplyTemplates,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntentDocument {
    intent: IntentName,
    patterns: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DialogueConfig {
    pub filler: Vec<String>,
    pub synonyms: BTreeMap<String, String>,
    pub rules: Vec<ParseRule>,
    pub replies: ReplyTemplates,
}

impl DialogueConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let doc: ConfigDocument = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut rules = Vec::new();
        for i in doc.intents {
            if i.patterns.is_empty() {
                return Err(ConfigError::EmptyPatterns(format!("{:?}", i.intent)));
            }
            let allowed: &[SlotKind] = match i.intent {
                IntentName::ProvideLocation => &[SlotKind::Landmark],
                IntentName::AskDestination => &[SlotKind::Place],
                _ => &[],
            };
            let patterns = i
                .patterns
                .iter()
                .map(|p| Pattern::compile(p, allowed))
                .collect::<Result<Vec<_>, _>>()?;
            rules.push(ParseRule {
                intent: i.intent,
                patterns,
            });
        }
        let filler: Vec<String> = doc.filler.iter().map(|w| w.to_lowercase()).collect();
        let mut config = Self {
            filler,
            synonyms: doc.synonyms,
            rules,
            replies: doc.replies,
        };
        let rules = std::mem::take(&mut config.rules);
        config.rules = rules
            .into_iter()
            .map(|mut rule| {
                rule.patterns = rule.patterns.iter().map(|p| config.clean_pattern(p)).collect();
                rule
            })
            .collect();
        Ok(config)
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    /// The shipped configuration.
    pub fn shipped() -> &'static DialogueConfig {
        static CONFIG: OnceLock<DialogueConfig> = OnceLock::new();
        CONFIG.get_or_init(|| DialogueConfig::from_toml(DEFAULT_DIALOGUE_CONFIG).expect("shipped dialogue config is valid"))
    }

    /// Drops filler words and maps synonyms.
    pub fn clean(&self, words: &[String]) -> Vec<String> {
        words
            .iter()
            .filter(|w| !self.filler.contains(w))
            .map(|w| self.synonyms.get(w).cloned().unwrap_or_else(|| w.clone()))
            .collect()
    }

    /// Cleans pattern words the same way utterances are cleaned.
    pub fn clean_pattern(&self, p: &Pattern) -> Pattern {
        let tokens = p
            .tokens
            .iter()
            .filter_map(|t| match t {
                PatternToken::Word(w) if self.filler.contains(w) => None,
                PatternToken::Word(w) => Some(PatternToken::Word(self.synonyms.get(w).cloned().unwrap_or_else(|| w.clone()))),
                slot => Some(slot.clone()),
            })
            .collect();
        Pattern {
            source: p.source.clone(),
            tokens,
        }
    }

    pub fn utterance_words(&self, text: &str) -> Vec<String> {
        self.clean(&normalize(text))
    }
}

/// Maps an utterance to an intent. The keyword parser is the only shipped
/// implementation; a learned classifier could sit behind the same trait.
pub trait IntentParser {
    fn parse(&self, text: &str, g: &RouteGraph, triggers: &TriggerConfig) -> Intent;
}

impl IntentParser for DialogueConfig {
    fn parse(&self, text: &str, g: &RouteGraph, triggers: &TriggerConfig) -> Intent {
        let words = self.utterance_words(text);
        if words.is_empty() {
            return Intent::Unknown;
        }
        let vocab = Vocabulary::build(g, triggers, self);
        if let Some(kind) = triggers.match_words(&words, &vocab, self) {
            return Intent::HandoffRequest(kind);
        }
        self.rules
            .iter()
            .flat_map(|rule| {
                rule.patterns
                    .iter()
                    .filter_map(|p| p.find(&words, &vocab))
                    .filter_map(move |slot| rule.build(slot))
            })
            .max_by_key(|intent| intent.priority())
            .unwrap_or(Intent::Unknown)
    }
}

/// Parses with the shipped configuration.
pub fn parse_intent(text: &str, g: &RouteGraph, triggers: &TriggerConfig) -> Intent {
    DialogueConfig::shipped().parse(text, g, triggers)
}

// ---- replies and the phase machine -----------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplayDirective {
    AppendBubble,
    ShowWatchIcon,
    ShowLastTurn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideEffect {
    BeginHandoff(DeviceKind),
    AdvanceStep,
    Complete,
}

/// Which template a reply came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyKind {
    Greeting,
    ElicitLocation,
    ElicitDestination,
    LocationAck,
    Instruction,
    NotThereYet,
    NoRoute,
    AlreadyThere,
    Arrived,
    AlreadyArrived,
    HandoffConfirm,
    HandoffGreeting,
    HandoffUnavailable,
    HandoffSameDevice,
    HandoffInProgress,
    HandoffFailed,
    Reprompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReply {
    pub text: String,
    pub kind: ReplyKind,
    pub display_directives: Vec<DisplayDirective>,
    pub side_effect: Option<SideEffect>,
}

impl AgentReply {
    pub fn say(kind: ReplyKind, text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            kind,
            display_directives: vec![DisplayDirective::AppendBubble],
            side_effect: None,
        }
    }

    pub fn with_effect(mut self, effect: SideEffect) -> Self {
        self.side_effect = Some(effect);
        self
    }
}

/// Fills `{name}` placeholders.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_owned();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// Joins per-leg texts into one spoken paragraph.
pub fn join_instructions(texts: &[&str]) -> String {
    let mut out = String::new();
    for (i, t) in texts.iter().enumerate() {
        if i == 0 {
            out.push_str(t);
        } else {
            out.push_str(" Then ");
            let mut chars = t.chars();
            if let Some(first) = chars.next() {
                out.extend(first.to_lowercase());
                out.push_str(chars.as_str());
            }
        }
    }
    out
}

impl DialogueConfig {
    fn describe(&self, g: &RouteGraph, id: &NodeId) -> String {
        g.node(id).map_or_else(|| id.to_string(), |n| n.describe())
    }

    fn prompt_for(&self, state: &SessionState) -> AgentReply {
        let r = &self.replies;
        if state.known_location.is_none() {
            AgentReply::say(ReplyKind::ElicitLocation, &r.elicit_location)
        } else {
            AgentReply::say(ReplyKind::ElicitDestination, &r.elicit_destination)
        }
    }

    fn prompt_phase(state: &SessionState) -> DialoguePhase {
        if state.known_location.is_none() {
            DialoguePhase::ElicitingLocation
        } else {
            DialoguePhase::ElicitingDestination
        }
    }

    fn current_leg_text(plan: &RoutePlan, step: usize) -> String {
        render_instruction(plan, step, RenderMode::StepByStep)
            .map(|v| v[0].text.clone())
            .unwrap_or_default()
    }

    /// Plans from the known location to the destination and enters
    /// `Guiding`; on failure the state is left untouched.
    fn start_guiding(&self, state: &SessionState, g: &RouteGraph, from: &NodeId, dest: &NodeId) -> (SessionState, AgentReply) {
        let r = &self.replies;
        let place = self.describe(g, dest);
        match g.plan_route(from, dest) {
            Ok(plan) if plan.legs.is_empty() => {
                let mut next = state.clone();
                next.known_location = Some(from.clone());
                next.destination = Some(dest.clone());
                next.route_plan = Some(plan);
                next.step_index = 0;
                next.phase = DialoguePhase::Arrived;
                let reply = AgentReply::say(ReplyKind::AlreadyThere, fill(&r.already_there, &[("place", &place)]))
                    .with_effect(SideEffect::Complete);
                (next, reply)
            }
            Ok(plan) => {
                let text = Self::current_leg_text(&plan, 0);
                let mut next = state.clone();
                next.known_location = Some(from.clone());
                next.destination = Some(dest.clone());
                next.route_plan = Some(plan);
                next.step_index = 0;
                next.phase = DialoguePhase::Guiding;
                (next, AgentReply::say(ReplyKind::Instruction, text))
            }
            Err(RouteError::NoRoute { .. }) | Err(_) => (
                state.clone(),
                AgentReply::say(ReplyKind::NoRoute, fill(&r.no_route, &[("place", &place)])),
            ),
        }
    }

    /// One dialogue turn. Pure in `(state, intent, graph)`.
    pub fn step_dialogue(&self, state: &SessionState, intent: &Intent, g: &RouteGraph) -> (SessionState, AgentReply) {
        use DialoguePhase::*;
        let r = &self.replies;

        if matches!(intent, Intent::Unknown) {
            return (state.clone(), AgentReply::say(ReplyKind::Reprompt, &r.reprompt));
        }
        if state.phase == HandoffPending {
            return (state.clone(), AgentReply::say(ReplyKind::HandoffInProgress, &r.handoff_in_progress));
        }
        if state.phase == Arrived {
            let place = state
                .destination
                .as_ref()
                .map_or_else(|| "destination".to_owned(), |d| self.describe(g, d));
            return (
                state.clone(),
                AgentReply::say(ReplyKind::AlreadyArrived, fill(&r.already_arrived, &[("place", &place)])),
            );
        }

        match intent {
            Intent::Unknown => unreachable!("handled above"),
            Intent::Greet => match state.phase {
                Greeting => {
                    let mut next = state.clone();
                    next.phase = Self::prompt_phase(state);
                    let reply = if state.known_location.is_some() {
                        AgentReply::say(ReplyKind::Greeting, &r.greeting_known_location)
                    } else {
                        AgentReply::say(ReplyKind::Greeting, &r.greeting)
                    };
                    (next, reply)
                }
                Guiding => {
                    let plan = state.route_plan.as_ref().expect("guiding has a plan");
                    (
                        state.clone(),
                        AgentReply::say(ReplyKind::Instruction, Self::current_leg_text(plan, state.step_index)),
                    )
                }
                _ => (state.clone(), self.prompt_for(state)),
            },

            Intent::ProvideLocation(spoken) => {
                if state.phase == Guiding {
                    return self.locate_while_guiding(state, spoken, g);
                }
                let mut located = state.clone();
                located.known_location = Some(spoken.clone());
                if let Some(dest) = &state.destination {
                    let (next, reply) = self.start_guiding(state, g, spoken, dest);
                    if reply.kind == ReplyKind::NoRoute {
                        return (state.clone(), reply);
                    }
                    return (next, reply);
                }
                located.phase = ElicitingDestination;
                let here = self.describe(g, spoken);
                (
                    located,
                    AgentReply::say(ReplyKind::LocationAck, fill(&r.location_ack, &[("landmark", &here)])),
                )
            }

            Intent::AskDestination(dest) => match &state.known_location {
                // While guiding, a new destination is planned from the start
                // of the current leg.
                Some(_) if state.phase == Guiding => {
                    let plan = state.route_plan.as_ref().expect("guiding has a plan");
                    let from = plan.checkpoints[state.step_index].clone();
                    self.start_guiding(state, g, &from, dest)
                }
                Some(from) => {
                    let from = from.clone();
                    self.start_guiding(state, g, &from, dest)
                }
                None => {
                    let mut next = state.clone();
                    next.destination = Some(dest.clone());
                    next.phase = ElicitingLocation;
                    (next, AgentReply::say(ReplyKind::ElicitLocation, &r.elicit_location))
                }
            },

            Intent::AskFullRoute => match (&state.route_plan, state.phase) {
                (Some(plan), Guiding) => {
                    let legs = render_instruction(plan, state.step_index, RenderMode::FullRoute)
                        .expect("step index within legs while guiding");
                    let texts: Vec<&str> = legs.iter().map(|l| l.text.as_str()).collect();
                    (state.clone(), AgentReply::say(ReplyKind::Instruction, join_instructions(&texts)))
                }
                _ => self.prompt_state(state),
            },

            Intent::AskNextStep => match (&state.route_plan, state.phase) {
                (Some(plan), Guiding) => {
                    let mut next = state.clone();
                    if state.step_index + 1 < plan.legs.len() {
                        next.step_index += 1;
                        next.known_location = Some(plan.checkpoints[next.step_index].clone());
                        let text = Self::current_leg_text(plan, next.step_index);
                        (next, AgentReply::say(ReplyKind::Instruction, text).with_effect(SideEffect::AdvanceStep))
                    } else {
                        let text = Self::current_leg_text(plan, state.step_index);
                        (next, AgentReply::say(ReplyKind::Instruction, text))
                    }
                }
                _ => self.prompt_state(state),
            },

            Intent::ConfirmArrival => match (&state.route_plan, state.phase) {
                (Some(plan), Guiding) => {
                    let place = self.describe(g, plan.destination());
                    if state.step_index + 1 >= plan.legs.len() {
                        self.arrive(state, plan, g)
                    } else {
                        let text = fill(
                            &r.not_there_yet,
                            &[("place", &place), ("instruction", &Self::current_leg_text(plan, state.step_index))],
                        );
                        (state.clone(), AgentReply::say(ReplyKind::NotThereYet, text))
                    }
                }
                _ => self.prompt_state(state),
            },

            Intent::HandoffRequest(target) => {
                let mut next = state.clone();
                let resume = if state.phase == Greeting {
                    Self::prompt_phase(state)
                } else {
                    state.phase
                };
                next.phase = HandoffPending;
                next.resume_phase = Some(resume);
                let reply = AgentReply::say(ReplyKind::HandoffConfirm, &r.handoff_confirm)
                    .with_effect(SideEffect::BeginHandoff(*target));
                (next, reply)
            }
        }
    }

    fn prompt_state(&self, state: &SessionState) -> (SessionState, AgentReply) {
        let mut next = state.clone();
        if state.phase == DialoguePhase::Greeting {
            next.phase = Self::prompt_phase(state);
        }
        (next, self.prompt_for(state))
    }

    fn arrive(&self, state: &SessionState, plan: &RoutePlan, g: &RouteGraph) -> (SessionState, AgentReply) {
        let mut next = state.clone();
        next.phase = DialoguePhase::Arrived;
        next.step_index = plan.legs.len();
        next.known_location = Some(plan.destination().clone());
        let place = self.describe(g, plan.destination());
        let text = fill(&self.replies.arrived, &[("place", &place)]);
        (next, AgentReply::say(ReplyKind::Arrived, text).with_effect(SideEffect::Complete))
    }

    fn locate_while_guiding(&self, state: &SessionState, spoken: &NodeId, g: &RouteGraph) -> (SessionState, AgentReply) {
        let plan = state.route_plan.as_ref().expect("guiding has a plan");
        let step = state.step_index;
        let target = &plan.checkpoints[(step + 1).min(plan.checkpoints.len() - 1)];
        let leg_start = &plan.checkpoints[step];
        // Duplicate shapes exist, so a descriptor naming the same marker as
        // the expected checkpoint is taken to mean that checkpoint.
        let same_marker = |a: &NodeId, b: &NodeId| {
            a == b || matches!((g.node(a).and_then(|n| n.marker), g.node(b).and_then(|n| n.marker)), (Some(x), Some(y)) if x == y)
        };
        if same_marker(spoken, target) {
            if step + 1 >= plan.legs.len() {
                return self.arrive(state, plan, g);
            }
            let mut next = state.clone();
            next.step_index += 1;
            next.known_location = Some(target.clone());
            let text = Self::current_leg_text(plan, next.step_index);
            return (next, AgentReply::say(ReplyKind::Instruction, text).with_effect(SideEffect::AdvanceStep));
        }
        if same_marker(spoken, leg_start) {
            let mut next = state.clone();
            next.known_location = Some(leg_start.clone());
            return (next, AgentReply::say(ReplyKind::Instruction, Self::current_leg_text(plan, step)));
        }
        let dest = plan.destination().clone();
        self.start_guiding(state, g, spoken, &dest)
    }
}

/// One turn with the shipped configuration.
pub fn step_dialogue(state: &SessionState, intent: &Intent, g: &RouteGraph) -> (SessionState, AgentReply) {
    DialogueConfig::shipped().step_dialogue(state, intent, g)
}
