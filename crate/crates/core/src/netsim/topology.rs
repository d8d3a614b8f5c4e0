use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::packets::{DomainName, MacAddr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HostRole {
    User,
    Dns,
    Portal,
    Nat,
}

impl HostRole {
    pub fn as_str(self) -> &'static str {
        match self {
            HostRole::User => "user",
            HostRole::Dns => "dns",
            HostRole::Portal => "portal",
            HostRole::Nat => "nat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostSpec {
    pub name: String,
    pub mac: MacAddr,
    pub ip: Ipv4Addr,
    pub role: HostRole,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchSpec {
    pub name: String,
    pub port_count: u16,
}

/// A node and port; hosts only have port 1.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Endpoint {
    pub node: String,
    pub port: u16,
}

impl Endpoint {
    pub fn new(node: impl Into<String>, port: u16) -> Self {
        Endpoint { node: node.into(), port }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkSpec {
    pub a: Endpoint,
    pub b: Endpoint,
    pub latency: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteSpec {
    pub domain: DomainName,
    pub ip: Ipv4Addr,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub hosts: Vec<HostSpec>,
    pub switches: Vec<SwitchSpec>,
    pub links: Vec<LinkSpec>,
    pub sites: Vec<SiteSpec>,
    pub subnet: Ipv4Addr,
    pub prefix_len: u8,
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            hosts: Vec::new(),
            switches: Vec::new(),
            links: Vec::new(),
            sites: Vec::new(),
            subnet: Ipv4Addr::new(10, 0, 0, 0),
            prefix_len: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("duplicate node name {0:?}")]
    DuplicateName(String),
    #[error("duplicate MAC {0}")]
    DuplicateMac(MacAddr),
    #[error("duplicate IP {0}")]
    DuplicateIp(Ipv4Addr),
    #[error("more than one {0} server")]
    DuplicateRole(&'static str),
    #[error("link endpoint names unknown node {0:?}")]
    Dangling(String),
    #[error("{node} has no port {port}")]
    BadPort { node: String, port: u16 },
    #[error("port {port} of {node} is used by two links")]
    PortInUse { node: String, port: u16 },
    #[error("link latency must be at least 1")]
    ZeroLatency,
    #[error("link {a} - {b} closes a cycle")]
    Cycle { a: String, b: String },
    #[error("node {0:?} is not connected to the rest of the network")]
    Disconnected(String),
    #[error("site {0} has the same IP as a LAN host")]
    SiteIp(Ipv4Addr),
    #[error("prefix length {0} out of range")]
    BadPrefix(u8),
}

pub(crate) fn in_subnet(ip: Ipv4Addr, net: Ipv4Addr, prefix_len: u8) -> bool {
    let mask = if prefix_len == 0 { 0 } else { u32::MAX << (32 - prefix_len) };
    (u32::from(ip) & mask) == (u32::from(net) & mask)
}

impl Topology {
    /// Users on `s1`, DNS, portal and NAT on `s2`, one link between them.
    pub fn fig1(users: usize) -> Self {
        let mut t = Topology::default();
        let s1_ports = users as u16 + 1;
        t.switches.push(SwitchSpec { name: "s1".into(), port_count: s1_ports });
        t.switches.push(SwitchSpec { name: "s2".into(), port_count: 4 });
        for i in 0..users {
            let n = i + 1;
            let name = format!("u{n}");
            t.hosts.push(HostSpec {
                name: name.clone(),
                mac: MacAddr([0xaa, 0xbb, 0xcc, 0xdd, 0xee, n as u8]),
                ip: Ipv4Addr::new(10, 0, 0, 10 + n as u8),
                role: HostRole::User,
            });
            t.links.push(LinkSpec { a: Endpoint::new(name, 1), b: Endpoint::new("s1", n as u16), latency: 1 });
        }
        t.links.push(LinkSpec { a: Endpoint::new("s1", s1_ports), b: Endpoint::new("s2", 1), latency: 1 });
        for (i, (name, role)) in
            [("nat", HostRole::Nat), ("portal", HostRole::Portal), ("dns", HostRole::Dns)].into_iter().enumerate()
        {
            let n = i as u8 + 1;
            t.hosts.push(HostSpec {
                name: name.into(),
                mac: MacAddr([0x02, 0, 0, 0, 0, n]),
                ip: Ipv4Addr::new(10, 0, 0, n),
                role,
            });
            t.links.push(LinkSpec { a: Endpoint::new(name, 1), b: Endpoint::new("s2", n as u16 + 1), latency: 1 });
        }
        t
    }

    pub fn host(&self, name: &str) -> Option<&HostSpec> {
        self.hosts.iter().find(|h| h.name == name)
    }

    pub fn server(&self, role: HostRole) -> Option<&HostSpec> {
        self.hosts.iter().find(|h| h.role == role)
    }

    fn port_count(&self, node: &str) -> Option<u16> {
        if self.hosts.iter().any(|h| h.name == node) {
            return Some(1);
        }
        self.switches.iter().find(|s| s.name == node).map(|s| s.port_count)
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.prefix_len > 32 {
            return Err(TopologyError::BadPrefix(self.prefix_len));
        }
        let mut names = BTreeSet::new();
        let all_names = self.hosts.iter().map(|h| &h.name).chain(self.switches.iter().map(|s| &s.name));
        for n in all_names {
            if !names.insert(n.clone()) {
                return Err(TopologyError::DuplicateName(n.clone()));
            }
        }
        let mut macs = BTreeSet::new();
        let mut ips = BTreeSet::new();
        let mut roles = BTreeSet::new();
        for h in &self.hosts {
            if !macs.insert(h.mac) {
                return Err(TopologyError::DuplicateMac(h.mac));
            }
            if !ips.insert(h.ip) {
                return Err(TopologyError::DuplicateIp(h.ip));
            }
            if h.role != HostRole::User && !roles.insert(h.role) {
                return Err(TopologyError::DuplicateRole(h.role.as_str()));
            }
        }
        for s in &self.sites {
            if ips.contains(&s.ip) {
                return Err(TopologyError::SiteIp(s.ip));
            }
        }

        let mut used = BTreeSet::new();
        // Union-find over node names detects cycles as links are added.
        let mut parent: BTreeMap<&str, &str> = names.iter().map(|n| (n.as_str(), n.as_str())).collect();
        fn find<'a>(parent: &mut BTreeMap<&'a str, &'a str>, mut x: &'a str) -> &'a str {
            while parent[x] != x {
                let up = parent[parent[x]];
                parent.insert(x, up);
                x = up;
            }
            x
        }
        for l in &self.links {
            if l.latency == 0 {
                return Err(TopologyError::ZeroLatency);
            }
            for ep in [&l.a, &l.b] {
                let count = self.port_count(&ep.node).ok_or_else(|| TopologyError::Dangling(ep.node.clone()))?;
                if ep.port == 0 || ep.port > count {
                    return Err(TopologyError::BadPort { node: ep.node.clone(), port: ep.port });
                }
                if !used.insert(ep.clone()) {
                    return Err(TopologyError::PortInUse { node: ep.node.clone(), port: ep.port });
                }
            }
            let (ra, rb) = (find(&mut parent, &l.a.node), find(&mut parent, &l.b.node));
            if ra == rb {
                return Err(TopologyError::Cycle { a: l.a.node.clone(), b: l.b.node.clone() });
            }
            parent.insert(ra, rb);
        }
        let anchor = self.links.first().map(|l| l.a.node.as_str()).or(names.iter().next().map(String::as_str));
        if let Some(anchor) = anchor {
            let root = find(&mut parent, anchor);
            for n in &names {
                if find(&mut parent, n) != root {
                    return Err(TopologyError::Disconnected(n.clone()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig1_shape() {
        let t = Topology::fig1(2);
        assert_eq!(t.validate(), Ok(()));
        assert_eq!(t.switches.len(), 2);
        assert_eq!(t.hosts.len(), 5);
        assert_eq!(t.links.len(), 6);
    }

    #[test]
    fn single_host_is_valid() {
        let mut t = Topology::default();
        t.hosts.push(HostSpec {
            name: "h".into(),
            mac: MacAddr([2, 0, 0, 0, 0, 9]),
            ip: Ipv4Addr::new(10, 0, 0, 9),
            role: HostRole::User,
        });
        assert_eq!(t.validate(), Ok(()));
    }

    #[test]
    fn distinct_errors() {
        let mut t = Topology::fig1(2);
        t.hosts[1].ip = t.hosts[0].ip;
        assert_eq!(t.validate(), Err(TopologyError::DuplicateIp(Ipv4Addr::new(10, 0, 0, 11))));

        let mut t = Topology::fig1(2);
        t.hosts[1].mac = t.hosts[0].mac;
        assert!(matches!(t.validate(), Err(TopologyError::DuplicateMac(_))));

        let mut t = Topology::fig1(2);
        t.switches[1].port_count = 5;
        t.links.push(LinkSpec { a: Endpoint::new("s1", 3), b: Endpoint::new("s2", 5), latency: 1 });
        assert!(matches!(t.validate(), Err(TopologyError::PortInUse { .. })));

        let mut t = Topology::fig1(1);
        t.switches[0].port_count = 3;
        t.switches[1].port_count = 5;
        t.links.push(LinkSpec { a: Endpoint::new("s1", 3), b: Endpoint::new("s2", 5), latency: 1 });
        assert!(matches!(t.validate(), Err(TopologyError::Cycle { .. })));

        let mut t = Topology::fig1(1);
        t.links.push(LinkSpec { a: Endpoint::new("ghost", 1), b: Endpoint::new("s2", 4), latency: 1 });
        assert_eq!(t.validate(), Err(TopologyError::Dangling("ghost".into())));

        let mut t = Topology::fig1(1);
        t.links.pop();
        assert_eq!(t.validate(), Err(TopologyError::Disconnected("dns".into())));
    }

    #[test]
    fn subnet_membership() {
        let net = Ipv4Addr::new(10, 0, 0, 0);
        assert!(in_subnet(Ipv4Addr::new(10, 0, 0, 200), net, 24));
        assert!(!in_subnet(Ipv4Addr::new(93, 184, 216, 34), net, 24));
        assert!(in_subnet(Ipv4Addr::new(1, 2, 3, 4), net, 0));
    }
}
