//! Re-embodiment: moving a live session from one device to another.
//!
//! A hand-off runs through [`HandoffState`]:
//! `ActiveOnSource -> Confirmed -> Transferring -> (ActiveOnTarget | Aborted)`.
//! The [`SessionManager`] is the single owner of every [`SessionState`]
//! and the only place a transfer is applied, so a transfer is one atomic
//! step with respect to utterance processing.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{
    fill, AgentReply, ConfigError, DialogueConfig, DisplayDirective, Pattern, ReplyKind, SlotKind, SlotValue,
    Vocabulary,
};
use crate::model::{DeviceId, DeviceKind, DeviceProfile, DialoguePhase, Intent, Millis, SessionId, SessionState, Utterance};
use crate::routes::RouteGraph;

pub const DEFAULT_TRIGGER_CONFIG: &str = include_str!("../../../config/triggers.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoffState {
    ActiveOnSource,
    Confirmed,
    Transferring,
    ActiveOnTarget,
    Aborted,
}

impl HandoffState {
    pub fn can_transition(self, to: HandoffState) -> bool {
        use HandoffState::*;
        matches!(
            (self, to),
            (ActiveOnSource, Confirmed) | (Confirmed, Transferring) | (Transferring, ActiveOnTarget) | (Transferring, Aborted)
        )
    }

    pub fn advance(self, to: HandoffState) -> Result<HandoffState, HandoffError> {
        if self.can_transition(to) {
            Ok(to)
        } else {
            Err(HandoffError::IllegalTransition { from: self, to })
        }
    }

    pub fn in_flight(self) -> bool {
        matches!(self, Self::Confirmed | Self::Transferring)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandoffError {
    #[error("illegal hand-off transition {from:?} -> {to:?}")]
    IllegalTransition { from: HandoffState, to: HandoffState },
    #[error("session is already on a {0:?} device")]
    SameKind(DeviceKind),
    #[error("session has already arrived")]
    SessionArrived,
    #[error("session is not waiting for a hand-off")]
    NotPending,
    #[error("target device {0} disconnected")]
    TargetDisconnected(DeviceId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("active device {0} is not registered")]
    UnknownDevice(DeviceId),
}

// ---- triggers ---------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TriggerDocument {
    phrase_triggers: Vec<String>,
    #[serde(default)]
    proximity_trigger_enabled: bool,
    #[serde(default = "default_proximity_threshold")]
    proximity_threshold_m: f64,
    #[serde(default)]
    proactive_offer_enabled: bool,
    #[serde(default)]
    device_words: BTreeMap<String, DeviceKind>,
}

fn default_proximity_threshold() -> f64 {
    3.0
}

/// How a hand-off can be started.
#[derive(Debug, Clone)]
pub struct TriggerConfig {
    pub phrase_triggers: Vec<String>,
    /// Accept externally supplied distance events as triggers.
    pub proximity_trigger_enabled: bool,
    pub proximity_threshold_m: f64,
    /// Let the stationary device offer the transfer once guidance starts.
    pub proactive_offer_enabled: bool,
    pub device_words: BTreeMap<String, DeviceKind>,
    patterns: Vec<Pattern>,
}

impl TriggerConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let doc: TriggerDocument = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if doc.phrase_triggers.is_empty() {
            return Err(ConfigError::EmptyPatterns("phrase_triggers".into()));
        }
        let patterns = doc
            .phrase_triggers
            .iter()
            .map(|p| Pattern::compile(p, &[SlotKind::Device]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            phrase_triggers: doc.phrase_triggers,
            proximity_trigger_enabled: doc.proximity_trigger_enabled,
            proximity_threshold_m: doc.proximity_threshold_m,
            proactive_offer_enabled: doc.proactive_offer_enabled,
            device_words: doc.device_words,
            patterns,
        })
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    /// Target kind requested by the cleaned utterance, if any trigger fires.
    pub fn match_words(&self, words: &[String], vocab: &Vocabulary, config: &DialogueConfig) -> Option<DeviceKind> {
        self.patterns.iter().find_map(|p| {
            let cleaned = config.clean_pattern(p);
            match cleaned.find(words, vocab)? {
                Some(SlotValue::Device(kind)) => Some(kind),
                Some(SlotValue::Node(_)) => None,
                None => Some(DeviceKind::Wearable),
            }
        })
    }
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_TRIGGER_CONFIG).expect("shipped trigger config is valid")
    }
}

// ---- device lookup ------------------------------------------------------------

/// What the hand-off logic needs to know about registered devices.
pub trait DeviceDirectory {
    fn profile(&self, id: &DeviceId) -> Option<DeviceProfile>;
    /// Connected devices of `kind` the session may move to, best first.
    fn targets(&self, session: &SessionId, kind: DeviceKind) -> Vec<DeviceProfile>;
}

/// A plain device list: every connected device is a candidate for every
/// session.
impl DeviceDirectory for [DeviceProfile] {
    fn profile(&self, id: &DeviceId) -> Option<DeviceProfile> {
        self.iter().find(|d| &d.device_id == id).cloned()
    }

    fn targets(&self, _session: &SessionId, kind: DeviceKind) -> Vec<DeviceProfile> {
        let mut v: Vec<_> = self.iter().filter(|d| d.kind == kind && d.connected).cloned().collect();
        v.sort_by(|a, b| a.device_id.cmp(&b.device_id));
        v
    }
}

impl DeviceDirectory for Vec<DeviceProfile> {
    fn profile(&self, id: &DeviceId) -> Option<DeviceProfile> {
        self.as_slice().profile(id)
    }

    fn targets(&self, session: &SessionId, kind: DeviceKind) -> Vec<DeviceProfile> {
        self.as_slice().targets(session, kind)
    }
}

// ---- hand-off operations -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoffRecord {
    pub session_id: SessionId,
    pub source_device: DeviceId,
    pub target_device: DeviceId,
    pub requested_at: Millis,
    pub completed_at: Millis,
    pub outcome: HandoffState,
}

impl HandoffRecord {
    pub fn latency_ms(&self) -> Millis {
        self.completed_at - self.requested_at
    }
}

/// Result of asking for a hand-off.
#[derive(Debug, Clone, PartialEq)]
pub struct HandoffRequest {
    /// `Confirmed` when a target was found, `Aborted` when none was.
    pub state: HandoffState,
    pub session: SessionState,
    pub reply: AgentReply,
    pub target: Option<DeviceProfile>,
}

/// A request that could not be honored at all, with what to tell the user.
#[derive(Debug, Clone, PartialEq)]
pub struct HandoffRejection {
    pub error: HandoffError,
    pub reply: AgentReply,
}

pub fn request_handoff(
    session: &SessionState,
    target_kind: DeviceKind,
    registry: &(impl DeviceDirectory + ?Sized),
    config: &DialogueConfig,
    g: &RouteGraph,
) -> Result<HandoffRequest, HandoffRejection> {
    let r = &config.replies;
    if session.phase == DialoguePhase::Arrived {
        let (_, reply) = config.step_dialogue(session, &Intent::HandoffRequest(target_kind), g);
        return Err(HandoffRejection {
            error: HandoffError::SessionArrived,
            reply,
        });
    }
    let active = registry.profile(&session.active_device).ok_or_else(|| HandoffRejection {
        error: HandoffError::UnknownDevice(session.active_device.clone()),
        reply: AgentReply::say(ReplyKind::Reprompt, &r.reprompt),
    })?;
    if active.kind == target_kind {
        return Err(HandoffRejection {
            error: HandoffError::SameKind(target_kind),
            reply: AgentReply::say(
                ReplyKind::HandoffSameDevice,
                fill(&r.handoff_same_device, &[("device", target_kind.spoken_name())]),
            ),
        });
    }
    match registry.targets(&session.session_id, target_kind).into_iter().next() {
        Some(target) => {
            let (next, reply) = config.step_dialogue(session, &Intent::HandoffRequest(target_kind), g);
            Ok(HandoffRequest {
                state: HandoffState::ActiveOnSource.advance(HandoffState::Confirmed).expect("legal"),
                session: next,
                reply,
                target: Some(target),
            })
        }
        None => Ok(HandoffRequest {
            state: HandoffState::Aborted,
            session: session.clone(),
            reply: AgentReply::say(
                ReplyKind::HandoffUnavailable,
                fill(&r.handoff_unavailable, &[("device", target_kind.spoken_name())]),
            ),
            target: None,
        }),
    }
}

/// Everything a completed transfer produces.
#[derive(Debug, Clone, PartialEq)]
pub struct HandoffExecution {
    pub session: SessionState,
    /// For the device being left.
    pub source_directives: Vec<DisplayDirective>,
    /// Spoken check-in on the new device.
    pub greeting: AgentReply,
}

/// Moves a pending session onto `target`. Only `active_device`, the phase
/// bookkeeping and the appended greeting turn change.
pub fn execute_handoff(
    session: &SessionState,
    target: &DeviceProfile,
    at: Millis,
    config: &DialogueConfig,
) -> Result<HandoffExecution, HandoffError> {
    if session.phase != DialoguePhase::HandoffPending {
        return Err(HandoffError::NotPending);
    }
    if !target.connected {
        return Err(HandoffError::TargetDisconnected(target.device_id.clone()));
    }
    let resume = session.resume_phase.ok_or(HandoffError::NotPending)?;
    let text = config.replies.handoff_greeting.clone();
    let mut next = session.clone();
    next.active_device = target.device_id.clone();
    next.phase = resume;
    next.resume_phase = None;
    // Replies already scheduled past `at` keep the transcript ordered.
    let ts = at.max(session.last_timestamp().unwrap_or(0));
    next.push_turn(Utterance::assistant(text.clone(), target.device_id.clone(), ts))
        .map_err(|_| HandoffError::NotPending)?;
    let mut greeting = AgentReply::say(ReplyKind::HandoffGreeting, text);
    greeting.display_directives = vec![match target.display_mode {
        crate::model::DisplayMode::FullTranscript => DisplayDirective::AppendBubble,
        crate::model::DisplayMode::LastTurnOnly => DisplayDirective::ShowLastTurn,
    }];
    let source_directives = if target.kind == DeviceKind::Wearable {
        vec![DisplayDirective::ShowWatchIcon]
    } else {
        Vec::new()
    };
    Ok(HandoffExecution {
        session: next,
        source_directives,
        greeting,
    })
}

/// Restores the pre-request phase; the session stays on its source device.
pub fn abort_handoff(session: &SessionState, target_kind: DeviceKind, config: &DialogueConfig) -> (SessionState, AgentReply) {
    let mut next = session.clone();
    if let Some(resume) = next.resume_phase.take() {
        next.phase = resume;
    }
    let reply = AgentReply::say(
        ReplyKind::HandoffFailed,
        fill(&config.replies.handoff_failed, &[("device", target_kind.spoken_name())]),
    );
    (next, reply)
}

/// Reply for a trigger that arrives while a transfer is already under way.
pub fn handle_duplicate_trigger(state: HandoffState, config: &DialogueConfig) -> Option<AgentReply> {
    state
        .in_flight()
        .then(|| AgentReply::say(ReplyKind::HandoffInProgress, &config.replies.handoff_in_progress))
}

// ---- session manager -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct HandoffMachine {
    pub source: DeviceId,
    pub target: DeviceId,
    pub target_kind: DeviceKind,
    pub requested_at: Millis,
    pub state: HandoffState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManagedSession {
    pub state: SessionState,
    pub handoff: Option<HandoffMachine>,
}

impl ManagedSession {
    pub fn transfer_in_flight(&self) -> bool {
        self.handoff.as_ref().is_some_and(|h| h.state.in_flight())
    }
}

/// What became of a hand-off trigger handed to the manager.
#[derive(Debug, Clone, PartialEq)]
pub enum TriggerOutcome {
    /// A new transfer was confirmed toward `target`.
    Confirmed { reply: AgentReply, target: DeviceProfile },
    /// No target was available; session unchanged.
    Unavailable { reply: AgentReply },
    /// Same-kind or post-arrival request.
    Rejected { reply: AgentReply, error: HandoffError },
    /// A transfer is already in flight.
    Duplicate { reply: AgentReply },
}

/// What applying a pending transfer produced.
#[derive(Debug, Clone, PartialEq)]
pub enum CompletionOutcome {
    Transferred { execution: HandoffExecution, record: HandoffRecord },
    Aborted { reply: AgentReply, record: HandoffRecord },
}

#[derive(Debug, Default, Clone)]
pub struct SessionManager {
    sessions: BTreeMap<SessionId, ManagedSession>,
    records: Vec<HandoffRecord>,
}

impl SessionManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, state: SessionState) {
        self.sessions.insert(
            state.session_id.clone(),
            ManagedSession { state, handoff: None },
        );
    }

    pub fn remove(&mut self, id: &SessionId) -> Option<ManagedSession> {
        self.sessions.remove(id)
    }

    pub fn get(&self, id: &SessionId) -> Option<&ManagedSession> {
        self.sessions.get(id)
    }

    pub fn state(&self, id: &SessionId) -> Option<&SessionState> {
        self.sessions.get(id).map(|s| &s.state)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &ManagedSession> {
        self.sessions.values()
    }

    pub fn records(&self) -> &[HandoffRecord] {
        &self.records
    }

    /// Runs `f` on the session, replacing its state with the result.
    pub fn update<T>(
        &mut self,
        id: &SessionId,
        f: impl FnOnce(&SessionState) -> (SessionState, T),
    ) -> Result<T, HandoffError> {
        let slot = self.sessions.get_mut(id).ok_or_else(|| HandoffError::UnknownSession(id.clone()))?;
        let (next, out) = f(&slot.state);
        slot.state = next;
        Ok(out)
    }

    pub fn trigger(
        &mut self,
        id: &SessionId,
        target_kind: DeviceKind,
        registry: &(impl DeviceDirectory + ?Sized),
        config: &DialogueConfig,
        g: &RouteGraph,
        now: Millis,
    ) -> Result<TriggerOutcome, HandoffError> {
        let slot = self.sessions.get_mut(id).ok_or_else(|| HandoffError::UnknownSession(id.clone()))?;
        if let Some(machine) = &slot.handoff {
            if let Some(reply) = handle_duplicate_trigger(machine.state, config) {
                return Ok(TriggerOutcome::Duplicate { reply });
            }
        }
        match request_handoff(&slot.state, target_kind, registry, config, g) {
            Err(HandoffRejection { error, reply }) => Ok(TriggerOutcome::Rejected { reply, error }),
            Ok(HandoffRequest {
                target: Some(target),
                session,
                reply,
                state,
            }) => {
                slot.state = session;
                slot.handoff = Some(HandoffMachine {
                    source: slot.state.active_device.clone(),
                    target: target.device_id.clone(),
                    target_kind,
                    requested_at: now,
                    state,
                });
                Ok(TriggerOutcome::Confirmed { reply, target })
            }
            Ok(HandoffRequest { reply, .. }) => Ok(TriggerOutcome::Unavailable { reply }),
        }
    }

    /// Confirmation has been delivered; the transfer is now in progress.
    pub fn begin_transfer(&mut self, id: &SessionId) -> Result<(), HandoffError> {
        let machine = self
            .sessions
            .get_mut(id)
            .and_then(|s| s.handoff.as_mut())
            .ok_or(HandoffError::NotPending)?;
        machine.state = machine.state.advance(HandoffState::Transferring)?;
        Ok(())
    }

    /// Applies the pending transfer. `target` is the target's current
    /// profile, `None` if it has gone away.
    pub fn complete(
        &mut self,
        id: &SessionId,
        target: Option<&DeviceProfile>,
        now: Millis,
        config: &DialogueConfig,
    ) -> Result<CompletionOutcome, HandoffError> {
        let slot = self.sessions.get_mut(id).ok_or_else(|| HandoffError::UnknownSession(id.clone()))?;
        let machine = slot.handoff.as_mut().ok_or(HandoffError::NotPending)?;
        if machine.state == HandoffState::Confirmed {
            machine.state = machine.state.advance(HandoffState::Transferring)?;
        }
        let executed = match target {
            Some(t) if t.device_id == machine.target => execute_handoff(&slot.state, t, now, config),
            _ => Err(HandoffError::TargetDisconnected(machine.target.clone())),
        };
        let mut record = HandoffRecord {
            session_id: id.clone(),
            source_device: machine.source.clone(),
            target_device: machine.target.clone(),
            requested_at: machine.requested_at,
            completed_at: now.max(machine.requested_at),
            outcome: HandoffState::Aborted,
        };
        let outcome = match executed {
            Ok(execution) => {
                machine.state = machine.state.advance(HandoffState::ActiveOnTarget)?;
                record.outcome = HandoffState::ActiveOnTarget;
                slot.state = execution.session.clone();
                CompletionOutcome::Transferred {
                    execution,
                    record: record.clone(),
                }
            }
            Err(HandoffError::TargetDisconnected(_)) => {
                machine.state = machine.state.advance(HandoffState::Aborted)?;
                let (restored, reply) = abort_handoff(&slot.state, machine.target_kind, config);
                slot.state = restored;
                CompletionOutcome::Aborted {
                    reply,
                    record: record.clone(),
                }
            }
            Err(e) => return Err(e),
        };
        self.records.push(record);
        Ok(outcome)
    }
}
