use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use crate::packets::DomainName;

/// Static A-record table. Absent names are NXDOMAIN.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ZoneDb {
    records: BTreeMap<DomainName, Ipv4Addr>,
}

impl ZoneDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: DomainName, addr: Ipv4Addr) -> Option<Ipv4Addr> {
        self.records.insert(name, addr)
    }

    pub fn lookup(&self, name: &DomainName) -> Option<Ipv4Addr> {
        self.records.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DomainName, Ipv4Addr)> {
        self.records.iter().map(|(n, a)| (n, *a))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl FromIterator<(DomainName, Ipv4Addr)> for ZoneDb {
    fn from_iter<T: IntoIterator<Item = (DomainName, Ipv4Addr)>>(iter: T) -> Self {
        ZoneDb { records: iter.into_iter().collect() }
    }
}
