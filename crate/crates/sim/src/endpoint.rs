//! Where simulated devices send their messages: an in-process engine on a
//! virtual clock, or a live gateway over TCP.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use thiserror::Error;

use reembody_core::{DeviceId, DeviceKind, Millis, NodeId, SessionId};
use reembody_gateway::wire::{Hello, PttUtterance};
use reembody_gateway::{Body, ConnId, Delivery, Engine, WireMessage};

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("gateway at {addr} unreachable: {source}")]
    Unreachable { addr: SocketAddr, source: std::io::Error },
    #[error("connection for {device} failed: {source}")]
    Io { device: DeviceId, source: std::io::Error },
    #[error("{device} has not joined")]
    NotJoined { device: DeviceId },
    #[error("undecodable message from gateway: {0}")]
    Protocol(String),
}

/// A message as one of the simulated devices received it.
#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    pub at: Millis,
    pub device: DeviceId,
    pub msg: WireMessage,
}

pub trait Endpoint {
    /// The endpoint's clock.
    fn now(&self) -> Millis;

    /// Moves the clock forward to `at`; earlier times are ignored.
    fn advance(&mut self, at: Millis);

    fn join(&mut self, session: &SessionId, device: &DeviceId, kind: DeviceKind, home: Option<&NodeId>) -> Result<(), EndpointError>;

    /// Sends an utterance now and returns its seq.
    fn ptt(&mut self, session: &SessionId, device: &DeviceId, text: &str) -> Result<u64, EndpointError>;

    /// The next message for any joined device arriving by `deadline`. The
    /// clock ends at the message time, or at `deadline` when none arrives.
    fn recv(&mut self, deadline: Millis) -> Result<Option<Received>, EndpointError>;
}

/// Drives an [`Engine`] directly; time only moves when asked.
pub struct InProcess {
    engine: Engine,
    conns: BTreeMap<DeviceId, ConnId>,
    devices: BTreeMap<ConnId, DeviceId>,
    seq: BTreeMap<DeviceId, u64>,
    inbox: VecDeque<Received>,
    now: Millis,
}

impl InProcess {
    pub fn new(engine: Engine) -> Self {
        Self {
            engine,
            conns: BTreeMap::new(),
            devices: BTreeMap::new(),
            seq: BTreeMap::new(),
            inbox: VecDeque::new(),
            now: 0,
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut Engine {
        &mut self.engine
    }

    fn take(&mut self, out: Vec<Delivery>) {
        for d in out {
            if let Delivery::Send { at, conn, msg } = d {
                if let Some(device) = self.devices.get(&conn) {
                    self.inbox.push_back(Received {
                        at,
                        device: device.clone(),
                        msg,
                    });
                }
            }
        }
    }

    fn send(&mut self, session: &SessionId, device: &DeviceId, body: Body) -> Result<u64, EndpointError> {
        let conn = *self.conns.get(device).ok_or_else(|| EndpointError::NotJoined { device: device.clone() })?;
        let seq = self.seq.entry(device.clone()).or_insert(0);
        *seq += 1;
        let s = *seq;
        let msg = WireMessage::new(session.clone(), device.clone(), s, body);
        let out = self.engine.handle_message(conn, msg, self.now);
        self.take(out);
        Ok(s)
    }
}

impl Endpoint for InProcess {
    fn now(&self) -> Millis {
        self.now
    }

    fn advance(&mut self, at: Millis) {
        if at > self.now {
            let out = self.engine.advance_to(at);
            self.take(out);
            self.now = at;
        }
    }

    fn join(&mut self, session: &SessionId, device: &DeviceId, kind: DeviceKind, home: Option<&NodeId>) -> Result<(), EndpointError> {
        let conn = self.engine.connect(self.now);
        self.conns.insert(device.clone(), conn);
        self.devices.insert(conn, device.clone());
        self.seq.insert(device.clone(), 0);
        let hello = Body::Hello(Hello { kind, home: home.cloned() });
        self.send(session, device, hello)?;
        Ok(())
    }

    fn ptt(&mut self, session: &SessionId, device: &DeviceId, text: &str) -> Result<u64, EndpointError> {
        let body = Body::PttUtterance(PttUtterance {
            text: text.to_owned(),
            lang: "en".to_owned(),
        });
        self.send(session, device, body)
    }

    fn recv(&mut self, deadline: Millis) -> Result<Option<Received>, EndpointError> {
        loop {
            if let Some(r) = self.inbox.pop_front_if(|f| f.at <= deadline) {
                self.now = self.now.max(r.at);
                return Ok(Some(r));
            }
            match self.engine.next_due() {
                Some(t) if t <= deadline => {
                    let out = self.engine.advance_to(t);
                    self.take(out);
                    self.now = self.now.max(t);
                }
                _ => {
                    self.advance(deadline);
                    return Ok(None);
                }
            }
        }
    }
}

enum Inbound {
    Line(DeviceId, Instant, String),
    Closed(DeviceId),
}

/// Talks to a running gateway over TCP. Real time passes while waiting
/// for replies; simulated walking skips ahead by shifting the clock.
pub struct Live {
    addr: SocketAddr,
    started: Instant,
    skipped: Millis,
    writers: BTreeMap<DeviceId, TcpStream>,
    seq: BTreeMap<DeviceId, u64>,
    tx: mpsc::Sender<Inbound>,
    rx: mpsc::Receiver<Inbound>,
}

impl Live {
    pub fn new(addr: SocketAddr) -> Self {
        let (tx, rx) = mpsc::channel();
        Self {
            addr,
            started: Instant::now(),
            skipped: 0,
            writers: BTreeMap::new(),
            seq: BTreeMap::new(),
            tx,
            rx,
        }
    }

    fn at(&self, instant: Instant) -> Millis {
        instant.saturating_duration_since(self.started).as_millis() as Millis + self.skipped
    }

    fn write(&mut self, session: &SessionId, device: &DeviceId, body: Body) -> Result<u64, EndpointError> {
        let stream = self
            .writers
            .get_mut(device)
            .ok_or_else(|| EndpointError::NotJoined { device: device.clone() })?;
        let seq = self.seq.entry(device.clone()).or_insert(0);
        *seq += 1;
        let mut line = WireMessage::new(session.clone(), device.clone(), *seq, body).encode();
        line.push('\n');
        stream.write_all(line.as_bytes()).map_err(|source| EndpointError::Io {
            device: device.clone(),
            source,
        })?;
        Ok(*seq)
    }
}

impl Endpoint for Live {
    fn now(&self) -> Millis {
        self.at(Instant::now())
    }

    fn advance(&mut self, at: Millis) {
        let now = self.now();
        if at > now {
            self.skipped += at - now;
        }
    }

    fn join(&mut self, session: &SessionId, device: &DeviceId, kind: DeviceKind, home: Option<&NodeId>) -> Result<(), EndpointError> {
        let stream = TcpStream::connect(self.addr).map_err(|source| EndpointError::Unreachable { addr: self.addr, source })?;
        stream.set_nodelay(true).ok();
        let reader = stream.try_clone().map_err(|source| EndpointError::Io {
            device: device.clone(),
            source,
        })?;
        let tx = self.tx.clone();
        let id = device.clone();
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let Ok(line) = line else { break };
                if tx.send(Inbound::Line(id.clone(), Instant::now(), line)).is_err() {
                    return;
                }
            }
            let _ = tx.send(Inbound::Closed(id));
        });
        self.writers.insert(device.clone(), stream);
        self.seq.insert(device.clone(), 0);
        self.write(session, device, Body::Hello(Hello { kind, home: home.cloned() }))?;
        Ok(())
    }

    fn ptt(&mut self, session: &SessionId, device: &DeviceId, text: &str) -> Result<u64, EndpointError> {
        let body = Body::PttUtterance(PttUtterance {
            text: text.to_owned(),
            lang: "en".to_owned(),
        });
        self.write(session, device, body)
    }

    fn recv(&mut self, deadline: Millis) -> Result<Option<Received>, EndpointError> {
        let wait = deadline.saturating_sub(self.now());
        match self.rx.recv_timeout(Duration::from_millis(wait)) {
            Ok(Inbound::Line(device, when, line)) => {
                let msg = WireMessage::decode(&line).map_err(|e| EndpointError::Protocol(e.to_string()))?;
                Ok(Some(Received {
                    at: self.at(when),
                    device,
                    msg,
                }))
            }
            Ok(Inbound::Closed(device)) => Err(EndpointError::Io {
                device,
                source: std::io::Error::new(std::io::ErrorKind::ConnectionAborted, "gateway closed the connection"),
            }),
            Err(_) => Ok(None),
        }
    }
}

impl Drop for Live {
    fn drop(&mut self) {
        for s in self.writers.values() {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}
