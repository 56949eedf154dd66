//! Shared domain vocabulary: devices, sessions, utterances, intents and
//! dialogue phases.
//!
//! Everything here is a plain value type. Operations that "change" a
//! session return a new [`SessionState`]; the session manager in
//! [`crate::handoff`] owns the mutation discipline.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::routes::RoutePlan;

/// Logical monotonic milliseconds supplied by the gateway clock.
pub type Millis = u64;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(
    /// Opaque device identifier, unique within one gateway.
    DeviceId
);
string_id!(
    /// Opaque session identifier.
    SessionId
);
string_id!(
    /// Identifier of a landmark or place in a [`crate::routes::RouteGraph`].
    NodeId
);

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("device {0} is not connected")]
    DeviceNotConnected(DeviceId),
    #[error("utterance timestamp {got} precedes last transcript timestamp {last}")]
    TimestampRegression { last: Millis, got: Millis },
    #[error("assistant utterances must carry text")]
    EmptyAssistantText,
    #[error("{kind:?} device must use {expected:?} display")]
    DisplayModeMismatch {
        kind: DeviceKind,
        expected: DisplayMode,
    },
    #[error("invalid latency model: {0}")]
    InvalidLatency(String),
    #[error("speaking rate must be positive, got {0}")]
    InvalidSpeakingRate(f64),
    #[error("illegal phase transition {from:?} -> {to:?}")]
    IllegalTransition {
        from: DialoguePhase,
        to: DialoguePhase,
    },
    #[error("malformed session snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Stationary,
    Wearable,
}

impl DeviceKind {
    pub fn other(self) -> Self {
        match self {
            Self::Stationary => Self::Wearable,
            Self::Wearable => Self::Stationary,
        }
    }

    /// The display model every device of this kind must use.
    pub fn display_mode(self) -> DisplayMode {
        match self {
            Self::Stationary => DisplayMode::FullTranscript,
            Self::Wearable => DisplayMode::LastTurnOnly,
        }
    }

    /// Word used for the device in spoken replies.
    pub fn spoken_name(self) -> &'static str {
        match self {
            Self::Stationary => "robot",
            Self::Wearable => "watch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplayMode {
    FullTranscript,
    LastTurnOnly,
}

/// Per-stage processing delay injected for one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub stt_ms: u64,
    pub dialogue_ms: u64,
    pub tts_ms: u64,
    /// Each stage is scaled by `1 + jitter_fraction * u`, `u ~ U[-1, 1]`.
    #[serde(default)]
    pub jitter_fraction: f64,
}

/// One sampled set of stage delays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageLatencies {
    pub stt_ms: u64,
    pub dialogue_ms: u64,
    pub tts_ms: u64,
}

impl StageLatencies {
    pub fn total(&self) -> u64 {
        self.stt_ms + self.dialogue_ms + self.tts_ms
    }
}

impl LatencyModel {
    pub const ZERO: Self = Self {
        stt_ms: 0,
        dialogue_ms: 0,
        tts_ms: 0,
        jitter_fraction: 0.0,
    };

    /// Splits `total_ms` 40/20/40 across recognition, dialogue and synthesis.
    pub fn from_total(total_ms: u64) -> Self {
        let stt_ms = total_ms * 2 / 5;
        let tts_ms = total_ms * 2 / 5;
        Self {
            stt_ms,
            dialogue_ms: total_ms - stt_ms - tts_ms,
            tts_ms,
            jitter_fraction: 0.0,
        }
    }

    pub fn with_jitter(mut self, jitter_fraction: f64) -> Self {
        self.jitter_fraction = jitter_fraction;
        self
    }

    pub fn total_ms(&self) -> u64 {
        self.stt_ms + self.dialogue_ms + self.tts_ms
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..1.0).contains(&self.jitter_fraction) {
            return Err(ModelError::InvalidLatency(format!(
                "jitter_fraction {} outside [0, 1)",
                self.jitter_fraction
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StageLatencies {
        StageLatencies {
            stt_ms: jittered(self.stt_ms, self.jitter_fraction, rng),
            dialogue_ms: jittered(self.dialogue_ms, self.jitter_fraction, rng),
            tts_ms: jittered(self.tts_ms, self.jitter_fraction, rng),
        }
    }
}

/// Samples `base * (1 + jitter * u)`; never negative since `jitter < 1`.
pub fn jittered<R: Rng + ?Sized>(base: u64, jitter: f64, rng: &mut R) -> u64 {
    if jitter == 0.0 || base == 0 {
        return base;
    }
    let u: f64 = rng.gen_range(-1.0..=1.0);
    (base as f64 * (1.0 + jitter * u)).round().max(0.0) as u64
}

/// An embodiment: the "body" a session can inhabit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: DeviceId,
    pub kind: DeviceKind,
    pub display_mode: DisplayMode,
    pub connected: bool,
    pub latency_model: LatencyModel,
    /// Where a stationary device stands. Sessions started on it know the
    /// user's location without asking.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home_node: Option<NodeId>,
}

impl DeviceProfile {
    pub fn new(device_id: impl Into<DeviceId>, kind: DeviceKind, latency_model: LatencyModel) -> Self {
        Self {
            device_id: device_id.into(),
            kind,
            display_mode: kind.display_mode(),
            connected: true,
            latency_model,
            home_node: None,
        }
    }

    pub fn stationary(device_id: impl Into<DeviceId>, latency_model: LatencyModel) -> Self {
        Self::new(device_id, DeviceKind::Stationary, latency_model)
    }

    pub fn wearable(device_id: impl Into<DeviceId>, latency_model: LatencyModel) -> Self {
        Self::new(device_id, DeviceKind::Wearable, latency_model)
    }

    pub fn at(mut self, home: impl Into<NodeId>) -> Self {
        self.home_node = Some(home.into());
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let expected = self.kind.display_mode();
        if self.display_mode != expected {
            return Err(ModelError::DisplayModeMismatch {
                kind: self.kind,
                expected,
            });
        }
        self.latency_model.validate()
    }
}

impl From<String> for DeviceId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl From<String> for SessionId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// The voice the agent speaks with. Fixed for the lifetime of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceConfig {
    pub voice_id: String,
    pub speaking_rate: f64,
}

impl VoiceConfig {
    pub fn new(voice_id: impl Into<String>, speaking_rate: f64) -> Result<Self, ModelError> {
        if !(speaking_rate > 0.0 && speaking_rate.is_finite()) {
            return Err(ModelError::InvalidSpeakingRate(speaking_rate));
        }
        Ok(Self {
            voice_id: voice_id.into(),
            speaking_rate,
        })
    }
}

impl Default for VoiceConfig {
    fn default() -> Self {
        Self {
            voice_id: "apope_low".to_owned(),
            speaking_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub device_id: DeviceId,
    pub timestamp: Millis,
}

impl Utterance {
    pub fn user(text: impl Into<String>, device_id: impl Into<DeviceId>, timestamp: Millis) -> Self {
        Self {
            speaker: Speaker::User,
            text: text.into(),
            device_id: device_id.into(),
            timestamp,
        }
    }

    pub fn assistant(text: impl Into<String>, device_id: impl Into<DeviceId>, timestamp: Millis) -> Self {
        Self {
            speaker: Speaker::Assistant,
            text: text.into(),
            device_id: device_id.into(),
            timestamp,
        }
    }
}

/// The closed set of things a user can ask for.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "intent", content = "slot", rename_all = "snake_case")]
pub enum Intent {
    Greet,
    ProvideLocation(NodeId),
    AskDestination(NodeId),
    AskFullRoute,
    AskNextStep,
    HandoffRequest(DeviceKind),
    ConfirmArrival,
    Unknown,
}

impl Intent {
    /// Resolution priority when an utterance matches several intents;
    /// higher wins.
    pub fn priority(&self) -> u8 {
        match self {
            Self::HandoffRequest(_) => 7,
            Self::ConfirmArrival => 6,
            Self::AskDestination(_) => 5,
            Self::ProvideLocation(_) => 4,
            Self::AskFullRoute => 3,
            Self::AskNextStep => 2,
            Self::Greet => 1,
            Self::Unknown => 0,
        }
    }

    pub fn is_navigation(&self) -> bool {
        matches!(
            self,
            Self::ProvideLocation(_)
                | Self::AskDestination(_)
                | Self::AskFullRoute
                | Self::AskNextStep
                | Self::ConfirmArrival
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialoguePhase {
    Greeting,
    ElicitingLocation,
    ElicitingDestination,
    Guiding,
    HandoffPending,
    Arrived,
}

impl DialoguePhase {
    pub const ALL: [DialoguePhase; 6] = [
        Self::Greeting,
        Self::ElicitingLocation,
        Self::ElicitingDestination,
        Self::Guiding,
        Self::HandoffPending,
        Self::Arrived,
    ];

    /// Phases a hand-off may be requested from and later resumed into.
    pub fn is_resumable(self) -> bool {
        matches!(
            self,
            Self::ElicitingLocation | Self::ElicitingDestination | Self::Guiding
        )
    }

    /// The phase reachability relation. Self-loops are always legal except
    /// that nothing leaves `Arrived`.
    pub fn can_transition(self, to: DialoguePhase) -> bool {
        use DialoguePhase::*;
        if self == to {
            return true;
        }
        match (self, to) {
            (Arrived, _) => false,
            (from, HandoffPending) => from.is_resumable(),
            (HandoffPending, to) => to.is_resumable(),
            _ => true,
        }
    }
}

/// The agent's "mind": everything that moves with a hand-off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: SessionId,
    pub active_device: DeviceId,
    pub phase: DialoguePhase,
    pub known_location: Option<NodeId>,
    pub destination: Option<NodeId>,
    pub route_plan: Option<RoutePlan>,
    pub step_index: usize,
    pub transcript: Vec<Utterance>,
    pub voice: VoiceConfig,
    /// Phase to restore once a pending hand-off completes or aborts.
    pub resume_phase: Option<DialoguePhase>,
}

impl SessionState {
    pub fn new_session(
        session_id: impl Into<SessionId>,
        device: &DeviceProfile,
        voice: VoiceConfig,
    ) -> Result<Self, ModelError> {
        if !device.connected {
            return Err(ModelError::DeviceNotConnected(device.device_id.clone()));
        }
        Ok(Self {
            session_id: session_id.into(),
            active_device: device.device_id.clone(),
            phase: DialoguePhase::Greeting,
            known_location: device.home_node.clone(),
            destination: None,
            route_plan: None,
            step_index: 0,
            transcript: Vec::new(),
            voice,
            resume_phase: None,
        })
    }

    pub fn last_timestamp(&self) -> Option<Millis> {
        self.transcript.last().map(|u| u.timestamp)
    }

    pub fn append_turn(&self, u: Utterance) -> Result<Self, ModelError> {
        let mut next = self.clone();
        next.push_turn(u)?;
        Ok(next)
    }

    /// In-place form of [`Self::append_turn`] for the session owner.
    pub fn push_turn(&mut self, u: Utterance) -> Result<(), ModelError> {
        if let Some(last) = self.last_timestamp() {
            if u.timestamp < last {
                return Err(ModelError::TimestampRegression {
                    last,
                    got: u.timestamp,
                });
            }
        }
        if u.speaker == Speaker::Assistant && u.text.is_empty() {
            return Err(ModelError::EmptyAssistantText);
        }
        self.transcript.push(u);
        Ok(())
    }

    pub fn set_phase(&mut self, to: DialoguePhase) -> Result<(), ModelError> {
        if !self.phase.can_transition(to) {
            return Err(ModelError::IllegalTransition {
                from: self.phase,
                to,
            });
        }
        self.phase = to;
        Ok(())
    }

    pub fn legs(&self) -> usize {
        self.route_plan.as_ref().map_or(0, |p| p.legs.len())
    }

    /// Starts over on the same device and voice. The transcript is cleared.
    pub fn reset(&self, device: &DeviceProfile) -> Result<Self, ModelError> {
        Self::new_session(self.session_id.clone(), device, self.voice.clone())
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if let Some(plan) = &self.route_plan {
            if self.step_index > plan.legs.len() {
                return Err(format!(
                    "step_index {} exceeds {} legs",
                    self.step_index,
                    plan.legs.len()
                ));
            }
        }
        if self.phase == DialoguePhase::Guiding && self.route_plan.is_none() {
            return Err("guiding without a route plan".into());
        }
        if self
            .transcript
            .windows(2)
            .any(|w| w[1].timestamp < w[0].timestamp)
        {
            return Err("transcript timestamps decrease".into());
        }
        if (self.phase == DialoguePhase::HandoffPending) != self.resume_phase.is_some() {
            return Err("resume_phase must be set exactly while a hand-off is pending".into());
        }
        Ok(())
    }

    /// Canonical structured-text form used for transfer and snapshots.
    pub fn to_canonical(&self) -> String {
        serde_json::to_string(self).expect("session state is always serializable")
    }

    pub fn from_canonical(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Snapshot(e.to_string()))
    }
}
