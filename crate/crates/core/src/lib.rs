//! Core model for a navigation assistant that can move a conversation
//! from a stationary robot to a smartwatch mid-task.
//!
//! The crate is synchronous and free of I/O apart from loading config
//! files; the gateway and simulator build on it.

pub mod dialogue;
pub mod handoff;
pub mod model;
pub mod routes;
pub mod speech;

pub use dialogue::{parse_intent, step_dialogue, AgentReply, DialogueConfig, DisplayDirective, IntentParser, ReplyKind};
pub use handoff::{
    execute_handoff, request_handoff, HandoffError, HandoffRecord, HandoffState, SessionManager, TriggerConfig,
};
pub use model::{
    DeviceId, DeviceKind, DeviceProfile, DialoguePhase, DisplayMode, Intent, LatencyModel, Millis, NodeId,
    SessionId, SessionState, Speaker, Utterance, VoiceConfig,
};
pub use routes::{render_instruction, RenderMode, RouteError, RouteGraph, RoutePlan};
pub use speech::{mock_synthesize, mock_transcribe, ErrorModel};
