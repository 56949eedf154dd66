//! Which devices exist, which connection each one is on, and which session
//! group they belong to.

use std::collections::BTreeMap;

use reembody_core::handoff::DeviceDirectory;
use reembody_core::{DeviceId, DeviceKind, DeviceProfile, Millis, SessionId};

/// Gateway-assigned connection number.
pub type ConnId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceEntry {
    pub profile: DeviceProfile,
    pub conn: Option<ConnId>,
    pub session: SessionId,
    pub last_seen: Millis,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConnEntry {
    pub device: Option<DeviceId>,
    pub last_seq: Option<u64>,
}

#[derive(Debug, Default, Clone)]
pub struct ClientRegistry {
    devices: BTreeMap<DeviceId, DeviceEntry>,
    conns: BTreeMap<ConnId, ConnEntry>,
    next_conn: ConnId,
}

impl ClientRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(&mut self) -> ConnId {
        self.next_conn += 1;
        self.conns.insert(self.next_conn, ConnEntry::default());
        self.next_conn
    }

    pub fn conn(&self, conn: ConnId) -> Option<&ConnEntry> {
        self.conns.get(&conn)
    }

    /// Records an inbound seq; false when it does not increase.
    pub fn accept_seq(&mut self, conn: ConnId, seq: u64) -> bool {
        let Some(c) = self.conns.get_mut(&conn) else {
            return false;
        };
        if c.last_seq.is_some_and(|last| seq <= last) {
            return false;
        }
        c.last_seq = Some(seq);
        true
    }

    /// Binds `profile` to `conn`. Returns the connection previously holding
    /// the same device id, which the caller must close.
    pub fn register(&mut self, conn: ConnId, mut profile: DeviceProfile, session: SessionId, now: Millis) -> Option<ConnId> {
        profile.connected = true;
        let id = profile.device_id.clone();
        let previous = self.devices.get(&id).and_then(|e| e.conn).filter(|c| *c != conn);
        if let Some(old) = previous {
            if let Some(c) = self.conns.get_mut(&old) {
                c.device = None;
            }
        }
        // A connection speaks for one device at a time.
        if let Some(old_dev) = self.conns.get(&conn).and_then(|c| c.device.clone()) {
            if old_dev != id {
                self.mark_disconnected(&old_dev, now);
            }
        }
        self.devices.insert(
            id.clone(),
            DeviceEntry {
                profile,
                conn: Some(conn),
                session,
                last_seen: now,
            },
        );
        self.conns.entry(conn).or_default().device = Some(id);
        previous
    }

    fn mark_disconnected(&mut self, id: &DeviceId, now: Millis) {
        if let Some(e) = self.devices.get_mut(id) {
            e.conn = None;
            e.profile.connected = false;
            e.last_seen = now;
        }
    }

    /// Drops a connection; its device, if any, is marked disconnected.
    pub fn close(&mut self, conn: ConnId, now: Millis) -> Option<DeviceId> {
        let entry = self.conns.remove(&conn)?;
        let dev = entry.device?;
        if self.devices.get(&dev).is_some_and(|e| e.conn == Some(conn)) {
            self.mark_disconnected(&dev, now);
            Some(dev)
        } else {
            None
        }
    }

    pub fn touch(&mut self, id: &DeviceId, now: Millis) {
        if let Some(e) = self.devices.get_mut(id) {
            e.last_seen = now;
        }
    }

    pub fn device(&self, id: &DeviceId) -> Option<&DeviceEntry> {
        self.devices.get(id)
    }

    pub fn device_of(&self, conn: ConnId) -> Option<&DeviceEntry> {
        self.conns
            .get(&conn)
            .and_then(|c| c.device.as_ref())
            .and_then(|d| self.devices.get(d))
    }

    pub fn conn_for(&self, id: &DeviceId) -> Option<ConnId> {
        self.devices.get(id).and_then(|e| e.conn)
    }

    /// Every device that joined `session`, in id order.
    pub fn group<'a>(&'a self, session: &'a SessionId) -> impl Iterator<Item = &'a DeviceEntry> + 'a {
        self.devices.values().filter(move |e| &e.session == session)
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceEntry> {
        self.devices.values()
    }
}

impl DeviceDirectory for ClientRegistry {
    fn profile(&self, id: &DeviceId) -> Option<DeviceProfile> {
        self.devices.get(id).map(|e| e.profile.clone())
    }

    fn targets(&self, session: &SessionId, kind: DeviceKind) -> Vec<DeviceProfile> {
        self.group(session)
            .filter(|e| e.profile.kind == kind && e.profile.connected)
            .map(|e| e.profile.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use reembody_core::LatencyModel;

    #[test]
    fn second_hello_replaces_connection() {
        let mut r = ClientRegistry::new();
        let a = r.open();
        let b = r.open();
        let watch = DeviceProfile::wearable("watch1", LatencyModel::ZERO);
        assert_eq!(r.register(a, watch.clone(), "s".into(), 0), None);
        assert_eq!(r.register(b, watch, "s".into(), 5), Some(a));
        assert_eq!(r.conn_for(&"watch1".into()), Some(b));
        // Closing the stale connection does not disconnect the device.
        assert_eq!(r.close(a, 6), None);
        assert!(r.device(&"watch1".into()).unwrap().profile.connected);
    }

    #[test]
    fn close_marks_disconnected() {
        let mut r = ClientRegistry::new();
        let a = r.open();
        r.register(a, DeviceProfile::wearable("w", LatencyModel::ZERO), "s".into(), 0);
        assert_eq!(r.close(a, 10), Some("w".into()));
        let e = r.device(&"w".into()).unwrap();
        assert!(!e.profile.connected);
        assert_eq!(e.last_seen, 10);
        assert!(r.targets(&"s".into(), DeviceKind::Wearable).is_empty());
    }

    #[test]
    fn seq_must_increase() {
        let mut r = ClientRegistry::new();
        let a = r.open();
        assert!(r.accept_seq(a, 1));
        assert!(r.accept_seq(a, 3));
        assert!(!r.accept_seq(a, 3));
        assert!(!r.accept_seq(a, 2));
    }

    #[test]
    fn targets_are_scoped_to_the_session() {
        let mut r = ClientRegistry::new();
        let (a, b) = (r.open(), r.open());
        r.register(a, DeviceProfile::wearable("w1", LatencyModel::ZERO), "s1".into(), 0);
        r.register(b, DeviceProfile::wearable("w2", LatencyModel::ZERO), "s2".into(), 0);
        let t = r.targets(&"s1".into(), DeviceKind::Wearable);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].device_id, DeviceId::from("w1"));
    }
}
