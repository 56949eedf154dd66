//! Live transport: newline-delimited JSON over TCP, the same messages as
//! text frames on a WebSocket at `/ws`, and optionally a static UI bundle.
//!
//! One actor task owns the [`Engine`]; connections talk to it over a
//! channel, so every session's commands are applied in arrival order.

use std::collections::HashMap;
use std::future::Future;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::Instant;
use tower_http::services::ServeDir;
use tracing::{debug, info, warn};

use reembody_core::handoff::TriggerConfig;

use crate::engine::{Delivery, Engine, GatewayEvent};
use crate::registry::ConnId;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub tcp_addr: SocketAddr,
    /// WebSocket and UI listener; none disables it.
    pub ws_addr: Option<SocketAddr>,
    pub ui_dir: Option<PathBuf>,
    /// JSON-lines gateway telemetry, flushed on shutdown.
    pub telemetry_out: Option<PathBuf>,
    /// Keep events in memory and return them from [`RunningGateway::shutdown`].
    pub keep_events: bool,
}

impl ServerConfig {
    pub fn new(tcp_addr: SocketAddr) -> Self {
        Self {
            tcp_addr,
            ws_addr: None,
            ui_dir: None,
            telemetry_out: None,
            keep_events: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("cannot open telemetry file {path}: {source}")]
    Telemetry { path: PathBuf, source: std::io::Error },
    #[error("UI directory {0} does not exist")]
    UiDir(PathBuf),
    #[error("gateway task stopped")]
    Stopped,
}

enum Outgoing {
    Line(String),
    Close,
}

enum Cmd {
    Open {
        tx: mpsc::UnboundedSender<Outgoing>,
        reply: oneshot::Sender<ConnId>,
    },
    Line {
        conn: ConnId,
        line: String,
    },
    Closed {
        conn: ConnId,
    },
    Reload(Box<TriggerConfig>),
    Shutdown(oneshot::Sender<Vec<GatewayEvent>>),
}

/// Handle to the running gateway.
pub struct RunningGateway {
    pub tcp_addr: SocketAddr,
    pub ws_addr: Option<SocketAddr>,
    cmds: mpsc::UnboundedSender<Cmd>,
    tasks: Vec<JoinHandle<()>>,
    actor: JoinHandle<()>,
}

impl RunningGateway {
    pub fn reload_triggers(&self, triggers: TriggerConfig) -> Result<(), ServerError> {
        self.cmds.send(Cmd::Reload(Box::new(triggers))).map_err(|_| ServerError::Stopped)
    }

    /// Stops accepting, flushes telemetry and returns kept events.
    pub async fn shutdown(self) -> Result<Vec<GatewayEvent>, ServerError> {
        for t in &self.tasks {
            t.abort();
        }
        let (tx, rx) = oneshot::channel();
        self.cmds.send(Cmd::Shutdown(tx)).map_err(|_| ServerError::Stopped)?;
        let events = rx.await.map_err(|_| ServerError::Stopped)?;
        let _ = self.actor.await;
        Ok(events)
    }
}

pub async fn start(engine: Engine, config: ServerConfig) -> Result<RunningGateway, ServerError> {
    let telemetry = match &config.telemetry_out {
        Some(path) => Some(std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|source| ServerError::Telemetry {
                path: path.clone(),
                source,
            })?,
        )),
        None => None,
    };
    if let Some(dir) = &config.ui_dir {
        if !dir.is_dir() {
            return Err(ServerError::UiDir(dir.clone()));
        }
    }
    let tcp = TcpListener::bind(config.tcp_addr).await.map_err(|source| ServerError::Bind {
        addr: config.tcp_addr,
        source,
    })?;
    let tcp_addr = tcp.local_addr().map_err(|source| ServerError::Bind {
        addr: config.tcp_addr,
        source,
    })?;
    let (cmds, rx) = mpsc::unbounded_channel();
    let actor = tokio::spawn(run_actor(engine, rx, telemetry, config.keep_events));
    let mut tasks = vec![tokio::spawn(accept_tcp(tcp, cmds.clone()))];
    info!(%tcp_addr, "gateway listening (tcp)");

    let mut ws_addr = None;
    if let Some(addr) = config.ws_addr {
        let listener = TcpListener::bind(addr).await.map_err(|source| ServerError::Bind { addr, source })?;
        let bound = listener.local_addr().map_err(|source| ServerError::Bind { addr, source })?;
        let mut app = Router::new().route("/ws", get(ws_upgrade)).with_state(cmds.clone());
        if let Some(dir) = &config.ui_dir {
            app = app.fallback_service(ServeDir::new(dir));
        }
        tasks.push(tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                warn!(error = %e, "websocket listener stopped");
            }
        }));
        info!(ws_addr = %bound, "gateway listening (websocket)");
        ws_addr = Some(bound);
    }
    Ok(RunningGateway {
        tcp_addr,
        ws_addr,
        cmds,
        tasks,
        actor,
    })
}

/// Runs until `signal` resolves, then shuts down cleanly.
pub async fn serve_until(
    engine: Engine,
    config: ServerConfig,
    signal: impl Future<Output = ()>,
) -> Result<Vec<GatewayEvent>, ServerError> {
    let gw = start(engine, config).await?;
    signal.await;
    gw.shutdown().await
}

async fn run_actor(
    mut engine: Engine,
    mut rx: mpsc::UnboundedReceiver<Cmd>,
    mut telemetry: Option<std::io::BufWriter<std::fs::File>>,
    keep_events: bool,
) {
    let start = Instant::now();
    let now_ms = || start.elapsed().as_millis() as u64;
    let mut conns: HashMap<ConnId, mpsc::UnboundedSender<Outgoing>> = HashMap::new();
    let mut kept = Vec::new();
    loop {
        let wake = engine
            .next_due()
            .map(|t| start + Duration::from_millis(t))
            .unwrap_or_else(|| Instant::now() + Duration::from_secs(3600));
        let deliveries = tokio::select! {
            cmd = rx.recv() => match cmd {
                None => break,
                Some(Cmd::Open { tx, reply }) => {
                    let conn = engine.connect(now_ms());
                    conns.insert(conn, tx);
                    let _ = reply.send(conn);
                    Vec::new()
                }
                Some(Cmd::Line { conn, line }) => engine.handle_line(conn, &line, now_ms()),
                Some(Cmd::Closed { conn }) => {
                    conns.remove(&conn);
                    engine.disconnect(conn, now_ms())
                }
                Some(Cmd::Reload(t)) => {
                    info!(phrases = t.phrase_triggers.len(), "trigger config reloaded");
                    engine.set_triggers(*t);
                    Vec::new()
                }
                Some(Cmd::Shutdown(reply)) => {
                    let rest = engine.drain_events();
                    record(&rest, &mut telemetry, keep_events.then_some(&mut kept));
                    if let Some(w) = telemetry.as_mut() {
                        let _ = w.flush();
                    }
                    let _ = reply.send(std::mem::take(&mut kept));
                    break;
                }
            },
            _ = tokio::time::sleep_until(wake) => engine.advance_to(now_ms()),
        };
        for d in deliveries {
            match d {
                Delivery::Send { conn, msg, .. } => {
                    if let Some(tx) = conns.get(&conn) {
                        let _ = tx.send(Outgoing::Line(msg.encode()));
                    }
                }
                Delivery::Close { conn, .. } => {
                    if let Some(tx) = conns.remove(&conn) {
                        let _ = tx.send(Outgoing::Close);
                    }
                }
            }
        }
        let events = engine.drain_events();
        record(&events, &mut telemetry, keep_events.then_some(&mut kept));
    }
}

fn record(events: &[GatewayEvent], telemetry: &mut Option<std::io::BufWriter<std::fs::File>>, kept: Option<&mut Vec<GatewayEvent>>) {
    for e in events {
        match e {
            GatewayEvent::Registered { device, kind, session, .. } => {
                info!(%device, ?kind, %session, "device registered")
            }
            GatewayEvent::Disconnected { device, .. } => info!(%device, "device disconnected"),
            GatewayEvent::Handoff { record } => info!(
                session = %record.session_id,
                target = %record.target_device,
                outcome = ?record.outcome,
                latency_ms = record.latency_ms(),
                "hand-off"
            ),
            other => debug!(event = ?other),
        }
        if let Some(w) = telemetry.as_mut() {
            let _ = serde_json::to_writer(&mut *w, e);
            let _ = w.write_all(b"\n");
        }
    }
    if let Some(k) = kept {
        k.extend_from_slice(events);
    }
}

async fn open(cmds: &mpsc::UnboundedSender<Cmd>) -> Option<(ConnId, mpsc::UnboundedReceiver<Outgoing>)> {
    let (tx, rx) = mpsc::unbounded_channel();
    let (reply, conn) = oneshot::channel();
    cmds.send(Cmd::Open { tx, reply }).ok()?;
    Some((conn.await.ok()?, rx))
}

async fn accept_tcp(listener: TcpListener, cmds: mpsc::UnboundedSender<Cmd>) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                debug!(%peer, "tcp client connected");
                tokio::spawn(tcp_conn(stream, cmds.clone()));
            }
            Err(e) => warn!(error = %e, "accept failed"),
        }
    }
}

async fn tcp_conn(stream: TcpStream, cmds: mpsc::UnboundedSender<Cmd>) {
    let Some((conn, mut rx)) = open(&cmds).await else { return };
    let (read, mut write) = stream.into_split();
    let mut lines = BufReader::new(read).lines();
    loop {
        tokio::select! {
            line = lines.next_line() => match line {
                Ok(Some(line)) if line.trim().is_empty() => {}
                Ok(Some(line)) => {
                    if cmds.send(Cmd::Line { conn, line }).is_err() {
                        break;
                    }
                }
                _ => break,
            },
            out = rx.recv() => match out {
                Some(Outgoing::Line(mut s)) => {
                    s.push('\n');
                    if write.write_all(s.as_bytes()).await.is_err() {
                        break;
                    }
                }
                Some(Outgoing::Close) | None => {
                    let _ = write.shutdown().await;
                    break;
                }
            },
        }
    }
    let _ = cmds.send(Cmd::Closed { conn });
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(cmds): State<mpsc::UnboundedSender<Cmd>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| ws_conn(socket, cmds))
}

async fn ws_conn(socket: WebSocket, cmds: mpsc::UnboundedSender<Cmd>) {
    let Some((conn, mut rx)) = open(&cmds).await else { return };
    let (mut sink, mut stream) = socket.split();
    loop {
        tokio::select! {
            frame = stream.next() => match frame {
                Some(Ok(Message::Text(text))) => {
                    for line in text.lines().filter(|l| !l.trim().is_empty()) {
                        if cmds.send(Cmd::Line { conn, line: line.to_owned() }).is_err() {
                            break;
                        }
                    }
                }
                Some(Ok(Message::Ping(_) | Message::Pong(_) | Message::Binary(_))) => {}
                _ => break,
            },
            out = rx.recv() => match out {
                Some(Outgoing::Line(s)) => {
                    if sink.send(Message::Text(s)).await.is_err() {
                        break;
                    }
                }
                Some(Outgoing::Close) | None => {
                    let _ = sink.send(Message::Close(None)).await;
                    break;
                }
            },
        }
    }
    let _ = cmds.send(Cmd::Closed { conn });
}
