use std::collections::BTreeMap;

use crate::packets::MacAddr;

use super::PortId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AuthState {
    #[default]
    Unauthorized,
    Authorized,
}

/// MAC address to authorization state. Absent entries are unauthorized and
/// entries only ever move to `Authorized`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuthTable {
    entries: BTreeMap<MacAddr, AuthState>,
}

impl AuthTable {
    pub fn state(&self, mac: MacAddr) -> AuthState {
        self.entries.get(&mac).copied().unwrap_or_default()
    }

    pub fn is_authorized(&self, mac: MacAddr) -> bool {
        self.state(mac) == AuthState::Authorized
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn authorized(&self) -> impl Iterator<Item = MacAddr> + '_ {
        self.entries.iter().filter(|(_, s)| **s == AuthState::Authorized).map(|(m, _)| *m)
    }

    /// Returns `true` if the state changed.
    pub(crate) fn authorize(&mut self, mac: MacAddr) -> bool {
        self.entries.insert(mac, AuthState::Authorized) != Some(AuthState::Authorized)
    }
}

/// Per-switch MAC to port map; last writer wins, no eviction.
#[derive(Debug, Clone, Default)]
pub struct MacLearningTable {
    map: BTreeMap<MacAddr, PortId>,
}

impl MacLearningTable {
    pub fn port_of(&self, mac: MacAddr) -> Option<PortId> {
        self.map.get(&mac).copied()
    }

    /// Returns the previous port when the entry was new or moved.
    pub fn learn(&mut self, mac: MacAddr, port: PortId) -> Option<Option<PortId>> {
        match self.map.insert(mac, port) {
            Some(prev) if prev == port => None,
            prev => Some(prev),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (MacAddr, PortId)> + '_ {
        self.map.iter().map(|(m, p)| (*m, *p))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
