//! The gateway's message handling on a virtual millisecond clock.
//!
//! The engine is synchronous and deterministic: callers feed it inbound
//! lines stamped with a time and pull out deliveries that are due. State
//! changes for a session are applied in arrival order; each reply is
//! scheduled for emission after the device's sampled pipeline latency and
//! never before the session's previous reply. The live server drives it
//! from wall time, the simulator from a virtual clock.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use reembody_core::dialogue::{AgentReply, DialogueConfig, IntentParser, ReplyKind};
use reembody_core::handoff::{CompletionOutcome, DeviceDirectory, HandoffRecord, SessionManager, TriggerConfig, TriggerOutcome};
use reembody_core::model::jittered;
use reembody_core::speech::{ErrorModel, MockStt, MockTts, SttAdapter, TtsAdapter};
use reembody_core::{
    DeviceId, DeviceKind, DeviceProfile, DialoguePhase, DisplayMode, Intent, LatencyModel, Millis, RouteGraph, SessionId,
    SessionState, Speaker, Utterance, VoiceConfig,
};

use crate::registry::{ClientRegistry, ConnId};
use crate::wire::{AssistantSay, Body, DisplayOp, DisplayUpdate, ErrorBody, ErrorCode, Hello, HelloAck, WireMessage};

/// How long a session waits for its active device to come back.
pub const AFFINITY_MS: Millis = 60_000;

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub stationary_latency: LatencyModel,
    pub wearable_latency: LatencyModel,
    /// From the end of the requesting utterance to the greeting on the
    /// target device.
    pub handoff_latency_ms: Millis,
    pub handoff_jitter: f64,
    pub voice: VoiceConfig,
    pub stt_errors: ErrorModel,
    pub seed: u64,
    pub affinity_ms: Millis,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            stationary_latency: LatencyModel::from_total(2890),
            wearable_latency: LatencyModel::from_total(4260),
            handoff_latency_ms: 3960,
            handoff_jitter: 0.0,
            voice: VoiceConfig::default(),
            stt_errors: ErrorModel::PASSTHROUGH,
            seed: 0,
            affinity_ms: AFFINITY_MS,
        }
    }
}

impl EngineConfig {
    /// Zero latency everywhere; replies are due at the time of the request.
    pub fn instant() -> Self {
        Self {
            stationary_latency: LatencyModel::ZERO,
            wearable_latency: LatencyModel::ZERO,
            handoff_latency_ms: 0,
            ..Self::default()
        }
    }

    pub fn with_jitter(mut self, j: f64) -> Self {
        self.stationary_latency = self.stationary_latency.with_jitter(j);
        self.wearable_latency = self.wearable_latency.with_jitter(j);
        self.handoff_jitter = j;
        self
    }

    pub fn latency_for(&self, kind: DeviceKind) -> LatencyModel {
        match kind {
            DeviceKind::Stationary => self.stationary_latency,
            DeviceKind::Wearable => self.wearable_latency,
        }
    }
}

/// Something the transport must do.
#[derive(Debug, Clone, PartialEq)]
pub enum Delivery {
    Send { at: Millis, conn: ConnId, msg: WireMessage },
    Close { at: Millis, conn: ConnId },
}

impl Delivery {
    pub fn at(&self) -> Millis {
        match self {
            Self::Send { at, .. } | Self::Close { at, .. } => *at,
        }
    }
}

/// Gateway-side telemetry.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum GatewayEvent {
    Registered { at: Millis, device: DeviceId, kind: DeviceKind, session: SessionId },
    Disconnected { at: Millis, device: DeviceId },
    Turn {
        at: Millis,
        session: SessionId,
        device: DeviceId,
        heard: String,
        intent: Intent,
        reply_kind: ReplyKind,
        reply_at: Millis,
        response_ms: Millis,
        voice_id: String,
    },
    Handoff { record: HandoffRecord },
    Rejected { at: Millis, conn: ConnId, code: ErrorCode, message: String },
    SessionExpired { at: Millis, session: SessionId },
    Undelivered { at: Millis, device: DeviceId, kind: &'static str },
}

#[derive(Debug)]
enum Action {
    ToDevice { device: DeviceId, session: SessionId, body: Body },
    ToConn { conn: ConnId, session: SessionId, device: DeviceId, body: Body },
    Close { conn: ConnId },
    BeginTransfer { session: SessionId, requested_at: Millis },
    CompleteHandoff { session: SessionId, requested_at: Millis },
    ExpireCheck { session: SessionId, device: DeviceId, since: Millis },
}

#[derive(Debug)]
struct Scheduled {
    at: Millis,
    order: u64,
    action: Action,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.order) == (other.at, other.order)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.order).cmp(&(other.at, other.order))
    }
}

#[derive(Debug, Default, Clone)]
struct Runtime {
    last_reply_at: Millis,
    watch_icon: bool,
}

pub struct Engine {
    graph: Arc<RouteGraph>,
    dialogue: Arc<DialogueConfig>,
    triggers: Arc<TriggerConfig>,
    stt: Box<dyn SttAdapter>,
    tts: Box<dyn TtsAdapter>,
    config: EngineConfig,
    rng: ChaCha8Rng,
    registry: ClientRegistry,
    sessions: SessionManager,
    runtime: BTreeMap<SessionId, Runtime>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    order: u64,
    out_seq: BTreeMap<ConnId, u64>,
    events: Vec<GatewayEvent>,
    now: Millis,
    stt_calls: u64,
}

impl Engine {
    pub fn new(graph: Arc<RouteGraph>, dialogue: Arc<DialogueConfig>, triggers: TriggerConfig, config: EngineConfig) -> Self {
        let stt = MockStt { model: config.stt_errors };
        Self::with_adapters(graph, dialogue, triggers, config, Box::new(stt), Box::new(MockTts))
    }

    pub fn with_adapters(
        graph: Arc<RouteGraph>,
        dialogue: Arc<DialogueConfig>,
        triggers: TriggerConfig,
        config: EngineConfig,
        stt: Box<dyn SttAdapter>,
        tts: Box<dyn TtsAdapter>,
    ) -> Self {
        Self {
            graph,
            dialogue,
            triggers: Arc::new(triggers),
            stt,
            tts,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            registry: ClientRegistry::new(),
            sessions: SessionManager::new(),
            runtime: BTreeMap::new(),
            queue: BinaryHeap::new(),
            order: 0,
            out_seq: BTreeMap::new(),
            events: Vec::new(),
            now: 0,
            stt_calls: 0,
        }
    }

    /// Shipped dialogue and trigger config over `graph`.
    pub fn with_defaults(graph: RouteGraph, config: EngineConfig) -> Self {
        Self::new(
            Arc::new(graph),
            Arc::new(DialogueConfig::shipped().clone()),
            TriggerConfig::default(),
            config,
        )
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn registry(&self) -> &ClientRegistry {
        &self.registry
    }

    pub fn session(&self, id: &SessionId) -> Option<&SessionState> {
        self.sessions.state(id)
    }

    pub fn handoff_records(&self) -> &[HandoffRecord] {
        self.sessions.records()
    }

    pub fn triggers(&self) -> &TriggerConfig {
        &self.triggers
    }

    /// Swaps trigger phrases; applies to the next utterance.
    pub fn set_triggers(&mut self, triggers: TriggerConfig) {
        self.triggers = Arc::new(triggers);
    }

    pub fn drain_events(&mut self) -> Vec<GatewayEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn next_due(&self) -> Option<Millis> {
        self.queue.peek().map(|Reverse(s)| s.at)
    }

    pub fn connect(&mut self, now: Millis) -> ConnId {
        self.now = self.now.max(now);
        self.registry.open()
    }

    pub fn disconnect(&mut self, conn: ConnId, now: Millis) -> Vec<Delivery> {
        let mut out = self.advance_to(now);
        self.out_seq.remove(&conn);
        if let Some(device) = self.registry.close(conn, self.now) {
            self.events.push(GatewayEvent::Disconnected {
                at: self.now,
                device: device.clone(),
            });
            let active_in: Vec<SessionId> = self
                .sessions
                .sessions()
                .filter(|s| s.state.active_device == device)
                .map(|s| s.state.session_id.clone())
                .collect();
            for session in active_in {
                let since = self.now;
                self.schedule(
                    since + self.config.affinity_ms,
                    Action::ExpireCheck {
                        session,
                        device: device.clone(),
                        since,
                    },
                );
            }
        }
        out.extend(self.advance_to(self.now));
        out
    }

    pub fn handle_line(&mut self, conn: ConnId, line: &str, now: Millis) -> Vec<Delivery> {
        match WireMessage::decode(line) {
            Ok(msg) => self.handle_message(conn, msg, now),
            Err(e) => {
                let mut out = self.advance_to(now);
                let (session, device) = self.addressing(conn);
                self.reject(conn, session, device, e.code, e.message, e.seq);
                out.extend(self.advance_to(self.now));
                out
            }
        }
    }

    pub fn handle_message(&mut self, conn: ConnId, msg: WireMessage, now: Millis) -> Vec<Delivery> {
        let mut out = self.advance_to(now);
        self.dispatch(conn, msg);
        out.extend(self.advance_to(self.now));
        out
    }

    /// Runs everything scheduled up to `now`.
    pub fn advance_to(&mut self, now: Millis) -> Vec<Delivery> {
        let mut out = Vec::new();
        while self.queue.peek().is_some_and(|Reverse(s)| s.at <= now) {
            let Reverse(s) = self.queue.pop().expect("peeked");
            self.now = self.now.max(s.at);
            self.run(s.action, &mut out);
        }
        self.now = self.now.max(now);
        out
    }

    // ---- scheduling ---------------------------------------------------------

    fn schedule(&mut self, at: Millis, action: Action) {
        self.order += 1;
        self.queue.push(Reverse(Scheduled {
            at: at.max(self.now),
            order: self.order,
            action,
        }));
    }

    fn queue_for(&mut self, at: Millis, session: &SessionId, device: &DeviceId, body: Body) {
        self.schedule(
            at,
            Action::ToDevice {
                device: device.clone(),
                session: session.clone(),
                body,
            },
        );
    }

    fn send(&mut self, out: &mut Vec<Delivery>, conn: ConnId, session: SessionId, device: DeviceId, body: Body) {
        let seq = self.out_seq.entry(conn).or_insert(0);
        *seq += 1;
        out.push(Delivery::Send {
            at: self.now,
            conn,
            msg: WireMessage {
                session_id: session,
                device_id: device,
                seq: *seq,
                body,
            },
        });
    }

    fn run(&mut self, action: Action, out: &mut Vec<Delivery>) {
        match action {
            Action::ToDevice { device, session, body } => match self.registry.conn_for(&device) {
                Some(conn) => self.send(out, conn, session, device, body),
                None => self.events.push(GatewayEvent::Undelivered {
                    at: self.now,
                    device,
                    kind: body.type_tag(),
                }),
            },
            Action::ToConn {
                conn,
                session,
                device,
                body,
            } => {
                if self.registry.conn(conn).is_some() {
                    self.send(out, conn, session, device, body);
                }
            }
            Action::Close { conn } => {
                self.out_seq.remove(&conn);
                out.push(Delivery::Close { at: self.now, conn });
            }
            Action::BeginTransfer { session, requested_at } => {
                if self.pending_since(&session) == Some(requested_at) {
                    let _ = self.sessions.begin_transfer(&session);
                }
            }
            Action::CompleteHandoff { session, requested_at } => {
                if self.pending_since(&session) == Some(requested_at) {
                    self.complete_handoff(&session);
                }
            }
            Action::ExpireCheck { session, device, since } => {
                let still_gone = self
                    .registry
                    .device(&device)
                    .is_some_and(|e| !e.profile.connected && e.last_seen == since);
                let still_active = self.sessions.state(&session).is_some_and(|s| s.active_device == device);
                if still_gone && still_active {
                    self.sessions.remove(&session);
                    self.runtime.remove(&session);
                    self.events.push(GatewayEvent::SessionExpired { at: self.now, session });
                }
            }
        }
    }

    fn pending_since(&self, session: &SessionId) -> Option<Millis> {
        self.sessions
            .get(session)
            .and_then(|s| s.handoff.as_ref())
            .filter(|h| h.state.in_flight())
            .map(|h| h.requested_at)
    }

    // ---- inbound --------------------------------------------------------------

    fn addressing(&self, conn: ConnId) -> (SessionId, DeviceId) {
        match self.registry.device_of(conn) {
            Some(e) => (e.session.clone(), e.profile.device_id.clone()),
            None => (SessionId::new(""), DeviceId::new("")),
        }
    }

    fn reject(&mut self, conn: ConnId, session: SessionId, device: DeviceId, code: ErrorCode, message: String, seq: Option<u64>) {
        self.events.push(GatewayEvent::Rejected {
            at: self.now,
            conn,
            code,
            message: message.clone(),
        });
        let now = self.now;
        self.schedule(
            now,
            Action::ToConn {
                conn,
                session,
                device,
                body: Body::Error(ErrorBody {
                    code,
                    message,
                    in_reply_to: seq,
                }),
            },
        );
    }

    fn dispatch(&mut self, conn: ConnId, msg: WireMessage) {
        let (sid, did, seq) = (msg.session_id.clone(), msg.device_id.clone(), msg.seq);
        let reject = |e: &mut Self, code, message: String| e.reject(conn, sid.clone(), did.clone(), code, message, Some(seq));
        if self.registry.conn(conn).is_none() {
            return;
        }
        if !self.registry.accept_seq(conn, seq) {
            return reject(self, ErrorCode::BadRequest, format!("seq {seq} does not increase"));
        }
        if !msg.body.is_inbound() {
            return reject(self, ErrorCode::BadRequest, format!("`{}` is not a client message", msg.body.type_tag()));
        }
        if let Body::Hello(h) = msg.body {
            return self.hello(conn, sid, did, h);
        }
        let Some(entry) = self.registry.device_of(conn) else {
            return reject(self, ErrorCode::NotRegistered, "send hello first".into());
        };
        if entry.profile.device_id != did {
            let message = format!("this connection speaks for {}", entry.profile.device_id);
            return reject(self, ErrorCode::BadRequest, message);
        }
        let Some(state) = self.sessions.state(&sid) else {
            return reject(self, ErrorCode::UnknownSession, format!("no session {sid}"));
        };
        if entry.session != sid {
            return reject(self, ErrorCode::UnknownSession, format!("device {did} is not part of session {sid}"));
        }
        let active = state.active_device.clone();
        self.registry.touch(&did, self.now);
        match msg.body {
            Body::Ping => {
                let now = self.now;
                self.schedule(
                    now,
                    Action::ToConn {
                        conn,
                        session: sid,
                        device: did,
                        body: Body::Pong,
                    },
                );
            }
            Body::PttUtterance(_) | Body::Reset if active != did => {
                reject(self, ErrorCode::NotActiveDevice, format!("session {sid} is active on {active}"))
            }
            Body::PttUtterance(p) => {
                if p.text.trim().is_empty() {
                    return reject(self, ErrorCode::BadRequest, "empty utterance".into());
                }
                self.utterance(&sid, &did, seq, &p.text, &p.lang);
            }
            Body::Reset => self.reset(&sid, &did),
            Body::Proximity(p) => self.proximity(&sid, p.distance_m),
            Body::Hello(_) | Body::HelloAck(_) | Body::AssistantSay(_) | Body::DisplayUpdate(_) | Body::Error(_) | Body::Pong => {
                unreachable!("filtered above")
            }
        }
    }

    fn hello(&mut self, conn: ConnId, session: SessionId, device: DeviceId, h: Hello) {
        let seq = self.registry.conn(conn).and_then(|c| c.last_seq);
        if session.as_str().is_empty() || device.as_str().is_empty() {
            return self.reject(conn, session, device, ErrorCode::BadRequest, "empty session or device id".into(), seq);
        }
        if let Some(home) = &h.home {
            if self.graph.node(home).is_none() {
                let message = format!("unknown home node {home}");
                return self.reject(conn, session, device, ErrorCode::BadRequest, message, seq);
            }
        }
        let mut profile = DeviceProfile::new(device.clone(), h.kind, self.config.latency_for(h.kind));
        profile.home_node = h.home;
        let now = self.now;
        if let Some(old) = self.registry.register(conn, profile.clone(), session.clone(), now) {
            self.schedule(now, Action::Close { conn: old });
        }
        self.events.push(GatewayEvent::Registered {
            at: now,
            device: device.clone(),
            kind: h.kind,
            session: session.clone(),
        });
        if self.sessions.state(&session).is_none() {
            let state = SessionState::new_session(session.clone(), &profile, self.config.voice.clone()).expect("registered devices are connected");
            self.sessions.insert(state);
            self.runtime.insert(session.clone(), Runtime::default());
        }
        let state = self.sessions.state(&session).expect("just ensured").clone();
        self.schedule(
            now,
            Action::ToConn {
                conn,
                session: session.clone(),
                device: device.clone(),
                body: Body::HelloAck(HelloAck {
                    active_device: state.active_device.clone(),
                    phase: state.phase,
                    display_mode: profile.display_mode,
                    voice_id: state.voice.voice_id.clone(),
                }),
            },
        );
        if !state.transcript.is_empty() {
            let directives = self.history(&state, &profile);
            if !directives.is_empty() {
                self.schedule(
                    now,
                    Action::ToConn {
                        conn,
                        session,
                        device,
                        body: Body::DisplayUpdate(DisplayUpdate { directives }),
                    },
                );
            }
        }
    }

    /// What a (re)joining device should show for an existing session.
    fn history(&self, state: &SessionState, profile: &DeviceProfile) -> Vec<DisplayOp> {
        match profile.display_mode {
            DisplayMode::FullTranscript => {
                let mut ops = vec![DisplayOp::Clear];
                ops.extend(state.transcript.iter().map(|u| DisplayOp::AppendBubble {
                    speaker: u.speaker,
                    text: u.text.clone(),
                }));
                let icon = self.runtime.get(&state.session_id).is_some_and(|r| r.watch_icon);
                if icon && state.active_device != profile.device_id {
                    ops.push(DisplayOp::ShowWatchIcon);
                }
                ops
            }
            DisplayMode::LastTurnOnly if state.active_device == profile.device_id => {
                let (user, assistant) = last_pair(state);
                vec![DisplayOp::ShowLastTurn { user, assistant }]
            }
            DisplayMode::LastTurnOnly => Vec::new(),
        }
    }

    fn utterance(&mut self, sid: &SessionId, did: &DeviceId, seq: u64, text: &str, lang: &str) {
        let now = self.now;
        let profile = self.registry.profile(did).expect("registered");
        let lat = profile.latency_model.sample(&mut self.rng);
        self.stt_calls += 1;
        let heard = self.stt.transcribe(text, lang, self.stt_calls).text;
        let intent = self.dialogue.parse(&heard, &self.graph, &self.triggers);
        let last_reply = self.runtime.get(sid).map_or(0, |r| r.last_reply_at);
        let reply_at = (now + lat.total()).max(last_reply);
        let before_phase = self.sessions.state(sid).map(|s| s.phase);

        let mut reply = match &intent {
            Intent::HandoffRequest(kind) => self.start_handoff(sid, *kind, now, reply_at),
            _ => {
                let (dialogue, graph) = (self.dialogue.clone(), self.graph.clone());
                self.sessions
                    .update(sid, |s| dialogue.step_dialogue(s, &intent, &graph))
                    .expect("session exists")
            }
        };
        let state = self.sessions.state(sid).expect("session exists");
        if self.triggers.proactive_offer_enabled
            && before_phase != Some(DialoguePhase::Guiding)
            && state.phase == DialoguePhase::Guiding
            && profile.kind == DeviceKind::Stationary
            && !self.registry.targets(sid, DeviceKind::Wearable).is_empty()
        {
            reply.text = format!("{} {}", reply.text, self.dialogue.replies.handoff_offer);
        }
        let heard_text = if heard.is_empty() { text.to_owned() } else { heard.clone() };
        self.record_turn(sid, did, Some(&heard_text), now, &reply.text, reply_at);
        self.say(sid, did, &reply, reply_at, Some(seq));
        self.fan_out(sid, Some(&heard_text), &reply.text, reply_at);
        let voice_id = self.sessions.state(sid).expect("session").voice.voice_id.clone();
        self.events.push(GatewayEvent::Turn {
            at: now,
            session: sid.clone(),
            device: did.clone(),
            heard,
            intent,
            reply_kind: reply.kind,
            reply_at,
            response_ms: reply_at - now,
            voice_id,
        });
    }

    fn start_handoff(&mut self, sid: &SessionId, kind: DeviceKind, now: Millis, reply_at: Millis) -> AgentReply {
        let outcome = self
            .sessions
            .trigger(sid, kind, &self.registry, &self.dialogue, &self.graph, now)
            .expect("session exists");
        match outcome {
            TriggerOutcome::Confirmed { reply, .. } => {
                let latency = jittered(self.config.handoff_latency_ms, self.config.handoff_jitter, &mut self.rng);
                self.schedule(
                    reply_at,
                    Action::BeginTransfer {
                        session: sid.clone(),
                        requested_at: now,
                    },
                );
                self.schedule(
                    (now + latency).max(reply_at),
                    Action::CompleteHandoff {
                        session: sid.clone(),
                        requested_at: now,
                    },
                );
                reply
            }
            TriggerOutcome::Unavailable { reply }
            | TriggerOutcome::Rejected { reply, .. }
            | TriggerOutcome::Duplicate { reply } => reply,
        }
    }

    fn record_turn(&mut self, sid: &SessionId, did: &DeviceId, user: Option<&str>, at: Millis, reply: &str, reply_at: Millis) {
        self.sessions
            .update(sid, |s| {
                let mut next = s.clone();
                let t = at.max(s.last_timestamp().unwrap_or(0));
                if let Some(text) = user {
                    next.push_turn(Utterance::user(text, did.clone(), t)).expect("ordered");
                }
                next.push_turn(Utterance::assistant(reply, did.clone(), reply_at.max(t))).expect("ordered");
                (next, ())
            })
            .expect("session exists");
        let rt = self.runtime.entry(sid.clone()).or_default();
        rt.last_reply_at = rt.last_reply_at.max(reply_at);
    }

    fn say(&mut self, sid: &SessionId, to: &DeviceId, reply: &AgentReply, at: Millis, in_reply_to: Option<u64>) {
        let voice = self.sessions.state(sid).expect("session").voice.clone();
        let synth = self.tts.synthesize(&reply.text, &voice).expect("replies are non-empty");
        self.queue_for(
            at,
            sid,
            to,
            Body::AssistantSay(AssistantSay {
                text: reply.text.clone(),
                voice_id: synth.audio.voice_id.clone(),
                audio: synth.audio.to_string(),
                duration_ms: synth.duration_ms,
                reply_kind: reply.kind,
                in_reply_to,
            }),
        );
    }

    /// Mirrors a turn to every display in the session group.
    fn fan_out(&mut self, sid: &SessionId, user: Option<&str>, assistant: &str, at: Millis) {
        let Some(state) = self.sessions.state(sid) else { return };
        let active = state.active_device.clone();
        let last_user = user.map(str::to_owned).unwrap_or_else(|| last_pair(state).0);
        let targets: Vec<(DeviceId, DisplayMode)> = self
            .registry
            .group(sid)
            .filter(|e| e.profile.connected)
            .map(|e| (e.profile.device_id.clone(), e.profile.display_mode))
            .collect();
        for (device, mode) in targets {
            let directives = match mode {
                DisplayMode::FullTranscript => {
                    let mut ops = Vec::new();
                    if let Some(u) = user {
                        ops.push(DisplayOp::AppendBubble {
                            speaker: Speaker::User,
                            text: u.to_owned(),
                        });
                    }
                    ops.push(DisplayOp::AppendBubble {
                        speaker: Speaker::Assistant,
                        text: assistant.to_owned(),
                    });
                    ops
                }
                DisplayMode::LastTurnOnly if device == active => vec![DisplayOp::ShowLastTurn {
                    user: last_user.clone(),
                    assistant: assistant.to_owned(),
                }],
                DisplayMode::LastTurnOnly => continue,
            };
            self.queue_for(at, sid, &device, Body::DisplayUpdate(DisplayUpdate { directives }));
        }
    }

    fn complete_handoff(&mut self, sid: &SessionId) {
        let now = self.now;
        let Some(machine) = self.sessions.get(sid).and_then(|s| s.handoff.clone()) else {
            return;
        };
        let target = self
            .registry
            .device(&machine.target)
            .filter(|e| e.profile.connected)
            .map(|e| e.profile.clone());
        let Ok(outcome) = self.sessions.complete(sid, target.as_ref(), now, &self.dialogue) else {
            return;
        };
        match outcome {
            CompletionOutcome::Transferred { execution, record } => {
                let icon = execution.source_directives.contains(&reembody_core::DisplayDirective::ShowWatchIcon);
                if icon {
                    self.queue_for(
                        now,
                        sid,
                        &record.source_device,
                        Body::DisplayUpdate(DisplayUpdate {
                            directives: vec![DisplayOp::ShowWatchIcon],
                        }),
                    );
                }
                if target.as_ref().is_some_and(|t| t.display_mode == DisplayMode::FullTranscript) {
                    self.queue_for(
                        now,
                        sid,
                        &record.target_device,
                        Body::DisplayUpdate(DisplayUpdate {
                            directives: vec![DisplayOp::HideWatchIcon],
                        }),
                    );
                }
                let rt = self.runtime.entry(sid.clone()).or_default();
                rt.watch_icon = icon;
                rt.last_reply_at = rt.last_reply_at.max(now);
                self.say(sid, &record.target_device, &execution.greeting, now, None);
                let greeting = execution.greeting.text.clone();
                self.fan_out(sid, None, &greeting, now);
                self.events.push(GatewayEvent::Handoff { record });
            }
            CompletionOutcome::Aborted { reply, record } => {
                let reply_at = now.max(self.runtime.get(sid).map_or(0, |r| r.last_reply_at));
                self.record_turn(sid, &record.source_device, None, now, &reply.text, reply_at);
                self.say(sid, &record.source_device, &reply, reply_at, None);
                self.fan_out(sid, None, &reply.text, reply_at);
                self.events.push(GatewayEvent::Handoff { record });
            }
        }
    }

    fn reset(&mut self, sid: &SessionId, did: &DeviceId) {
        let profile = self.registry.profile(did).expect("registered");
        let fresh = self
            .sessions
            .state(sid)
            .expect("session exists")
            .reset(&profile)
            .expect("active device is connected");
        self.sessions.insert(fresh);
        self.runtime.insert(sid.clone(), Runtime::default());
        let now = self.now;
        let group: Vec<(DeviceId, DisplayMode)> = self
            .registry
            .group(sid)
            .filter(|e| e.profile.connected)
            .map(|e| (e.profile.device_id.clone(), e.profile.display_mode))
            .collect();
        for (device, mode) in group {
            let mut directives = vec![DisplayOp::Clear];
            if mode == DisplayMode::FullTranscript {
                directives.push(DisplayOp::HideWatchIcon);
            }
            self.queue_for(now, sid, &device, Body::DisplayUpdate(DisplayUpdate { directives }));
        }
    }

    /// Distance reports from outside sensing; a trigger only when enabled.
    fn proximity(&mut self, sid: &SessionId, distance_m: f64) {
        if !self.triggers.proximity_trigger_enabled || distance_m < self.triggers.proximity_threshold_m {
            return;
        }
        let state = self.sessions.state(sid).expect("session exists");
        let active = state.active_device.clone();
        let on_stationary = self.registry.profile(&active).is_some_and(|p| p.kind == DeviceKind::Stationary);
        if !on_stationary || self.sessions.get(sid).is_some_and(|s| s.transfer_in_flight()) {
            return;
        }
        let now = self.now;
        let profile = self.registry.profile(&active).expect("registered");
        let lat = profile.latency_model.sample(&mut self.rng);
        let reply_at = (now + lat.dialogue_ms + lat.tts_ms).max(self.runtime.get(sid).map_or(0, |r| r.last_reply_at));
        let reply = self.start_handoff(sid, DeviceKind::Wearable, now, reply_at);
        self.record_turn(sid, &active, None, now, &reply.text, reply_at);
        self.say(sid, &active, &reply, reply_at, None);
        self.fan_out(sid, None, &reply.text, reply_at);
    }
}

fn last_pair(state: &SessionState) -> (String, String) {
    let find = |sp: Speaker| {
        state
            .transcript
            .iter()
            .rev()
            .find(|u| u.speaker == sp)
            .map(|u| u.text.clone())
            .unwrap_or_default()
    };
    (find(Speaker::User), find(Speaker::Assistant))
}
