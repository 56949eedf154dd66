//! Message envelope shared by every client connection.
//!
//! One JSON object per line:
//! `{"type":"ptt_utterance","session_id":"s1","device_id":"robot1","seq":4,"payload":{...}}`.
//! Unknown `type` tags are an error, never skipped.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use reembody_core::{DeviceId, DeviceKind, DisplayMode, NodeId, SessionId, Speaker};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotActiveDevice,
    BadRequest,
    UnknownSession,
    UnknownType,
    NotRegistered,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NotActiveDevice => "not_active_device",
            Self::BadRequest => "bad_request",
            Self::UnknownSession => "unknown_session",
            Self::UnknownType => "unknown_type",
            Self::NotRegistered => "not_registered",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub kind: DeviceKind,
    /// Where a stationary device stands.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PttUtterance {
    pub text: String,
    #[serde(default = "default_lang")]
    pub lang: String,
}

fn default_lang() -> String {
    "en".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Proximity {
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloAck {
    pub active_device: DeviceId,
    pub phase: reembody_core::DialoguePhase,
    pub display_mode: DisplayMode,
    pub voice_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistantSay {
    pub text: String,
    pub voice_id: String,
    /// Opaque audio handle, `voice_id:text_hash`.
    pub audio: String,
    pub duration_ms: f64,
    pub reply_kind: reembody_core::ReplyKind,
    /// Seq of the utterance this answers; absent for unprompted speech.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum DisplayOp {
    AppendBubble { speaker: Speaker, text: String },
    ShowWatchIcon,
    HideWatchIcon,
    ShowLastTurn { user: String, assistant: String },
    Clear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayUpdate {
    pub directives: Vec<DisplayOp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Body {
    // client -> gateway
    Hello(Hello),
    PttUtterance(PttUtterance),
    Reset,
    Ping,
    Proximity(Proximity),
    // gateway -> client
    HelloAck(HelloAck),
    AssistantSay(AssistantSay),
    DisplayUpdate(DisplayUpdate),
    Error(ErrorBody),
    Pong,
}

pub const INBOUND_TYPES: &[&str] = &["hello", "ptt_utterance", "reset", "ping", "proximity"];
pub const OUTBOUND_TYPES: &[&str] = &["hello_ack", "assistant_say", "display_update", "error", "pong"];

impl Body {
    pub fn type_tag(&self) -> &'static str {
        match self {
            Self::Hello(_) => "hello",
            Self::PttUtterance(_) => "ptt_utterance",
            Self::Reset => "reset",
            Self::Ping => "ping",
            Self::Proximity(_) => "proximity",
            Self::HelloAck(_) => "hello_ack",
            Self::AssistantSay(_) => "assistant_say",
            Self::DisplayUpdate(_) => "display_update",
            Self::Error(_) => "error",
            Self::Pong => "pong",
        }
    }

    pub fn is_inbound(&self) -> bool {
        INBOUND_TYPES.contains(&self.type_tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub session_id: SessionId,
    pub device_id: DeviceId,
    pub seq: u64,
    pub body: Body,
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    #[serde(rename = "type")]
    kind: String,
    session_id: String,
    device_id: String,
    seq: u64,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    payload: Value,
}

/// Why a line could not be decoded, with whatever envelope fields were
/// readable so the error can still be addressed.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{code:?}: {message}")]
pub struct DecodeError {
    pub code: ErrorCode,
    pub message: String,
    pub seq: Option<u64>,
}

impl WireMessage {
    pub fn new(session_id: impl Into<SessionId>, device_id: impl Into<DeviceId>, seq: u64, body: Body) -> Self {
        Self {
            session_id: session_id.into(),
            device_id: device_id.into(),
            seq,
            body,
        }
    }

    pub fn decode(line: &str) -> Result<Self, DecodeError> {
        let raw: Value = serde_json::from_str(line).map_err(|e| DecodeError {
            code: ErrorCode::BadRequest,
            message: format!("not a JSON object: {e}"),
            seq: None,
        })?;
        let seq = raw.get("seq").and_then(Value::as_u64);
        let bad = |message: String| DecodeError {
            code: ErrorCode::BadRequest,
            message,
            seq,
        };
        let env: Envelope = serde_json::from_value(raw).map_err(|e| bad(format!("bad envelope: {e}")))?;
        if !INBOUND_TYPES.contains(&env.kind.as_str()) && !OUTBOUND_TYPES.contains(&env.kind.as_str()) {
            return Err(DecodeError {
                code: ErrorCode::UnknownType,
                message: format!("unknown message type `{}`", env.kind),
                seq,
            });
        }
        let unit = matches!(env.kind.as_str(), "reset" | "ping" | "pong");
        let tagged = if unit {
            if !(env.payload.is_null() || env.payload.as_object().is_some_and(|o| o.is_empty())) {
                return Err(bad(format!("`{}` takes no payload", env.kind)));
            }
            serde_json::json!({ "type": env.kind })
        } else {
            serde_json::json!({ "type": env.kind, "payload": env.payload })
        };
        let body: Body = serde_json::from_value(tagged).map_err(|e| bad(format!("bad `{}` payload: {e}", env.kind)))?;
        Ok(Self {
            session_id: SessionId::new(env.session_id),
            device_id: DeviceId::new(env.device_id),
            seq: env.seq,
            body,
        })
    }

    pub fn encode(&self) -> String {
        let tagged = serde_json::to_value(&self.body).expect("bodies serialize");
        let env = Envelope {
            kind: self.body.type_tag().to_owned(),
            session_id: self.session_id.to_string(),
            device_id: self.device_id.to_string(),
            seq: self.seq,
            payload: tagged.get("payload").cloned().unwrap_or(Value::Null),
        };
        serde_json::to_string(&env).expect("envelopes serialize")
    }
}
