use std::fmt;
use std::net::Ipv4Addr;

use crate::packets::{EthernetFrame, Ipv4Packet, MacAddr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortId(pub u16);

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SwitchId(pub usize);

/// Header fields a flow entry can match on, extracted once per frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketFields {
    pub in_port: PortId,
    pub src_mac: MacAddr,
    pub dst_mac: MacAddr,
    pub ethertype: u16,
    pub ip_dst: Option<Ipv4Addr>,
    pub ip_proto: Option<u8>,
    pub l4_dst_port: Option<u16>,
}

impl PacketFields {
    pub fn extract(in_port: PortId, frame: &EthernetFrame) -> Self {
        let ethertype = frame.ethertype.value();
        let ip = if ethertype == 0x0800 { Ipv4Packet::decode(&frame.payload).ok() } else { None };
        PacketFields {
            in_port,
            src_mac: frame.src,
            dst_mac: frame.dst,
            ethertype,
            ip_dst: ip.as_ref().map(|p| p.dst),
            ip_proto: ip.as_ref().map(|p| p.protocol),
            l4_dst_port: ip.as_ref().and_then(|p| p.l4_dst_port()),
        }
    }
}

/// Match half of a flow entry. `None` fields are wildcards.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct FlowMatch {
    pub in_port: Option<PortId>,
    pub src_mac: Option<MacAddr>,
    pub dst_mac: Option<MacAddr>,
    pub ethertype: Option<u16>,
    pub ip_dst: Option<Ipv4Addr>,
    pub l4_dst_port: Option<u16>,
}

impl FlowMatch {
    pub fn dst(mac: MacAddr) -> Self {
        FlowMatch { dst_mac: Some(mac), ..Default::default() }
    }

    pub fn pair(src: MacAddr, dst: MacAddr) -> Self {
        FlowMatch { src_mac: Some(src), dst_mac: Some(dst), ..Default::default() }
    }

    /// L3/L4 fields are only meaningful on IPv4 matches.
    pub fn is_valid(&self) -> bool {
        (self.ip_dst.is_none() && self.l4_dst_port.is_none()) || self.ethertype == Some(0x0800)
    }

    pub fn matches(&self, p: &PacketFields) -> bool {
        fn field<T: PartialEq>(want: &Option<T>, have: &T) -> bool {
            want.as_ref().is_none_or(|w| w == have)
        }
        fn opt_field<T: PartialEq>(want: &Option<T>, have: &Option<T>) -> bool {
            match want {
                None => true,
                Some(w) => have.as_ref() == Some(w),
            }
        }
        field(&self.in_port, &p.in_port)
            && field(&self.src_mac, &p.src_mac)
            && field(&self.dst_mac, &p.dst_mac)
            && field(&self.ethertype, &p.ethertype)
            && opt_field(&self.ip_dst, &p.ip_dst)
            && opt_field(&self.l4_dst_port, &p.l4_dst_port)
    }
}

impl fmt::Display for FlowMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(p) = self.in_port {
            parts.push(format!("in_port={p}"));
        }
        if let Some(m) = self.src_mac {
            parts.push(format!("src={m}"));
        }
        if let Some(m) = self.dst_mac {
            parts.push(format!("dst={m}"));
        }
        if let Some(t) = self.ethertype {
            parts.push(format!("type=0x{t:04x}"));
        }
        if let Some(ip) = self.ip_dst {
            parts.push(format!("ip_dst={ip}"));
        }
        if let Some(port) = self.l4_dst_port {
            parts.push(format!("l4_dst={port}"));
        }
        if parts.is_empty() {
            f.write_str("*")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlowAction {
    Output(PortId),
    Flood,
    ToController,
    Drop,
}

impl fmt::Display for FlowAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowAction::Output(p) => write!(f, "output:{p}"),
            FlowAction::Flood => f.write_str("flood"),
            FlowAction::ToController => f.write_str("controller"),
            FlowAction::Drop => f.write_str("drop"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowEntry {
    pub rule: FlowMatch,
    pub priority: u16,
    pub action: FlowAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstallOutcome {
    Added,
    Replaced,
    Unchanged,
}

/// Ordered flow table. Entries keep their installation order, which breaks
/// ties between equal priorities.
#[derive(Debug, Clone, Default)]
pub struct FlowTable {
    entries: Vec<FlowEntry>,
}

impl FlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[FlowEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Upserts on `(rule, priority)`; a replaced entry keeps its position.
    pub fn install(&mut self, entry: FlowEntry) -> InstallOutcome {
        match self.entries.iter_mut().find(|e| e.rule == entry.rule && e.priority == entry.priority) {
            Some(e) if e.action == entry.action => InstallOutcome::Unchanged,
            Some(e) => {
                e.action = entry.action;
                InstallOutcome::Replaced
            }
            None => {
                self.entries.push(entry);
                InstallOutcome::Added
            }
        }
    }

    pub fn lookup(&self, fields: &PacketFields) -> Option<&FlowEntry> {
        let mut best: Option<&FlowEntry> = None;
        for e in &self.entries {
            if e.rule.matches(fields) && best.is_none_or(|b| e.priority > b.priority) {
                best = Some(e);
            }
        }
        best
    }

    pub fn remove_where(&mut self, mut pred: impl FnMut(&FlowEntry) -> bool) -> Vec<FlowEntry> {
        let mut removed = Vec::new();
        self.entries.retain(|e| {
            if pred(e) {
                removed.push(e.clone());
                false
            } else {
                true
            }
        });
        removed
    }
}
