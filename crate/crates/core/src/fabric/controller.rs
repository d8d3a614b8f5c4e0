use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::packets::{EthernetFrame, MacAddr};

use super::{
    AuthTable, FlowAction, FlowEntry, FlowMatch, FlowTable, InstallOutcome, MacLearningTable, PacketFields, PortId,
    SwitchId,
};

/// Priority of controller-installed learning flows.
pub const LEARNING_PRIORITY: u16 = 10;

const DNS_PORT: u16 = 53;
const HTTP_PORT: u16 = 80;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FabricError {
    #[error("unknown switch {0:?}")]
    UnknownSwitch(SwitchId),
    #[error("switch {switch} has no port {port} (ports 1..={port_count})")]
    InvalidPort { switch: String, port: PortId, port_count: u16 },
}

/// What the controller gates and where it steers captive web traffic.
#[derive(Debug, Clone, Default)]
pub struct GatePolicy {
    /// MAC of the NAT gateway; IPv4 frames addressed to it are gated.
    pub nat_mac: Option<MacAddr>,
    /// Destinations reachable before authorization (DNS server, portal).
    pub walled_garden: BTreeSet<Ipv4Addr>,
    /// Server MACs that are never subject to the gate.
    pub infrastructure: BTreeSet<MacAddr>,
    /// When set, captive TCP/80 traffic toward the NAT is re-addressed to this
    /// MAC (the portal) instead of being dropped.
    pub http_intercept: Option<MacAddr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    /// Captive source sending non-walled-garden IPv4 toward the NAT.
    Policy,
    /// Gated frame whose IPv4 payload could not be decoded.
    Undecodable,
    /// Matched a flow entry with a drop action.
    FlowDrop,
    /// Learned output port equals the ingress port.
    Hairpin,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Policy => "policy",
            DropReason::Undecodable => "undecodable",
            DropReason::FlowDrop => "flow",
            DropReason::Hairpin => "hairpin",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowModOp {
    Add,
    Modify,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FabricEvent {
    PacketIn { switch: SwitchId, in_port: PortId, src: MacAddr, dst: MacAddr, ethertype: u16 },
    FlowMod { switch: SwitchId, op: FlowModOp, entry: FlowEntry },
    PacketOut { switch: SwitchId, action: FlowAction, ports: Vec<PortId>, redirected: bool },
    Drop { switch: SwitchId, src: MacAddr, dst: MacAddr, reason: DropReason },
}

/// Result of a switch handling one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimAction {
    Transmit { port: PortId, frame: EthernetFrame },
    Event(FabricEvent),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketOut {
    pub action: FlowAction,
    pub frame: EthernetFrame,
    pub redirected: bool,
}

/// Controller reply to a packet-in.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Decision {
    pub installs: Vec<FlowEntry>,
    pub packet_outs: Vec<PacketOut>,
    pub drop: Option<DropReason>,
}

#[derive(Debug, Clone)]
pub struct Switch {
    pub name: String,
    pub port_count: u16,
    pub table: FlowTable,
}

/// One logical controller driving every switch in the fabric.
///
/// Learning installs `(src, dst)` pair flows toward every MAC already known
/// at a switch as soon as a new source is learned, so once every host has
/// been seen (its first frame is a flooded ARP broadcast) unicast traffic
/// never reaches the controller. Pair flows from a captive source to the NAT
/// are never installed: that traffic always takes the packet-in path, where
/// the authorization gate runs before any forwarding.
#[derive(Debug, Clone, Default)]
pub struct Controller {
    switches: Vec<Switch>,
    learning: Vec<MacLearningTable>,
    auth: AuthTable,
    policy: GatePolicy,
}

impl Controller {
    pub fn new(policy: GatePolicy) -> Self {
        Controller { policy, ..Default::default() }
    }

    pub fn add_switch(&mut self, name: impl Into<String>, port_count: u16) -> SwitchId {
        self.switches.push(Switch { name: name.into(), port_count, table: FlowTable::new() });
        self.learning.push(MacLearningTable::default());
        SwitchId(self.switches.len() - 1)
    }

    pub fn switches(&self) -> &[Switch] {
        &self.switches
    }

    pub fn switch(&self, id: SwitchId) -> Option<&Switch> {
        self.switches.get(id.0)
    }

    pub fn learning(&self, id: SwitchId) -> Option<&MacLearningTable> {
        self.learning.get(id.0)
    }

    pub fn auth(&self) -> &AuthTable {
        &self.auth
    }

    pub fn policy(&self) -> &GatePolicy {
        &self.policy
    }

    /// Whether `src` bypasses the gate (authorized or infrastructure).
    pub fn is_exempt(&self, src: MacAddr) -> bool {
        self.policy.infrastructure.contains(&src) || self.auth.is_authorized(src)
    }

    fn gated(&self, src: MacAddr, dst: MacAddr) -> bool {
        self.policy.nat_mac == Some(dst) && !self.is_exempt(src)
    }

    /// Marks `mac` authorized and removes every flow whose match names it as
    /// source, so its next frame re-consults the controller.
    pub fn authorize_mac(&mut self, mac: MacAddr) -> Vec<FabricEvent> {
        if !self.auth.authorize(mac) {
            return Vec::new();
        }
        let mut events = Vec::new();
        for (i, sw) in self.switches.iter_mut().enumerate() {
            for entry in sw.table.remove_where(|e| e.rule.src_mac == Some(mac)) {
                events.push(FabricEvent::FlowMod { switch: SwitchId(i), op: FlowModOp::Remove, entry });
            }
        }
        events
    }

    fn check_port(&self, sw: SwitchId, port: PortId) -> Result<&Switch, FabricError> {
        let s = self.switches.get(sw.0).ok_or(FabricError::UnknownSwitch(sw))?;
        if port.0 == 0 || port.0 > s.port_count {
            return Err(FabricError::InvalidPort { switch: s.name.clone(), port, port_count: s.port_count });
        }
        Ok(s)
    }

    fn flood_ports(&self, sw: SwitchId, in_port: PortId) -> Vec<PortId> {
        let n = self.switches[sw.0].port_count;
        (1..=n).map(PortId).filter(|p| *p != in_port).collect()
    }

    fn expand(&self, sw: SwitchId, in_port: PortId, action: FlowAction) -> Vec<PortId> {
        match action {
            FlowAction::Output(p) if p != in_port => vec![p],
            FlowAction::Flood => self.flood_ports(sw, in_port),
            _ => Vec::new(),
        }
    }

    /// A frame arrives on `in_port`. Matching flows are applied directly;
    /// a table miss goes to [`Controller::packet_in`].
    pub fn switch_receive(
        &mut self,
        sw: SwitchId,
        in_port: PortId,
        frame: &EthernetFrame,
    ) -> Result<Vec<SimAction>, FabricError> {
        self.check_port(sw, in_port)?;
        let fields = PacketFields::extract(in_port, frame);
        let hit = self.switches[sw.0].table.lookup(&fields).map(|e| e.action);
        let mut out = Vec::new();
        match hit {
            Some(FlowAction::ToController) | None => {
                out.push(SimAction::Event(FabricEvent::PacketIn {
                    switch: sw,
                    in_port,
                    src: frame.src,
                    dst: frame.dst,
                    ethertype: fields.ethertype,
                }));
                let decision = self.packet_in(sw, in_port, frame)?;
                self.apply(sw, in_port, decision, frame, &mut out);
            }
            Some(FlowAction::Drop) => out.push(SimAction::Event(FabricEvent::Drop {
                switch: sw,
                src: frame.src,
                dst: frame.dst,
                reason: DropReason::FlowDrop,
            })),
            Some(action) => {
                for port in self.expand(sw, in_port, action) {
                    out.push(SimAction::Transmit { port, frame: frame.clone() });
                }
            }
        }
        Ok(out)
    }

    fn apply(
        &mut self,
        sw: SwitchId,
        in_port: PortId,
        decision: Decision,
        frame: &EthernetFrame,
        out: &mut Vec<SimAction>,
    ) {
        for entry in decision.installs {
            let op = match self.switches[sw.0].table.install(entry.clone()) {
                InstallOutcome::Added => FlowModOp::Add,
                InstallOutcome::Replaced => FlowModOp::Modify,
                InstallOutcome::Unchanged => continue,
            };
            out.push(SimAction::Event(FabricEvent::FlowMod { switch: sw, op, entry }));
        }
        if let Some(reason) = decision.drop {
            out.push(SimAction::Event(FabricEvent::Drop { switch: sw, src: frame.src, dst: frame.dst, reason }));
        }
        for po in decision.packet_outs {
            let ports = self.expand(sw, in_port, po.action);
            out.push(SimAction::Event(FabricEvent::PacketOut {
                switch: sw,
                action: po.action,
                ports: ports.clone(),
                redirected: po.redirected,
            }));
            for port in ports {
                out.push(SimAction::Transmit { port, frame: po.frame.clone() });
            }
        }
    }

    /// Learning, authorization gate, then forwarding, in that order.
    pub fn packet_in(&mut self, sw: SwitchId, in_port: PortId, frame: &EthernetFrame) -> Result<Decision, FabricError> {
        self.check_port(sw, in_port)?;
        let mut decision = Decision::default();

        if !frame.src.is_broadcast() {
            self.learning[sw.0].learn(frame.src, in_port);
            decision.installs = self.pair_flows(sw, frame.src);
        }

        let mut frame = frame.clone();
        let mut redirected = false;
        if frame.ethertype.value() == 0x0800 && self.gated(frame.src, frame.dst) {
            let fields = PacketFields::extract(in_port, &frame);
            let Some(ip_dst) = fields.ip_dst else {
                decision.drop = Some(DropReason::Undecodable);
                return Ok(decision);
            };
            let permitted = self.policy.walled_garden.contains(&ip_dst) || fields.l4_dst_port == Some(DNS_PORT);
            if !permitted {
                match self.policy.http_intercept {
                    Some(portal) if fields.ip_proto == Some(6) && fields.l4_dst_port == Some(HTTP_PORT) => {
                        frame.dst = portal;
                        redirected = true;
                    }
                    _ => {
                        decision.drop = Some(DropReason::Policy);
                        return Ok(decision);
                    }
                }
            }
        }

        let action = if frame.dst.is_broadcast() {
            FlowAction::Flood
        } else {
            match self.learning[sw.0].port_of(frame.dst) {
                Some(p) if p == in_port => {
                    decision.drop = Some(DropReason::Hairpin);
                    return Ok(decision);
                }
                Some(p) => FlowAction::Output(p),
                None => FlowAction::Flood,
            }
        };
        decision.packet_outs.push(PacketOut { action, frame, redirected });
        Ok(decision)
    }

    /// Pair flows between `mac` and every other MAC learned on `sw`, in both
    /// directions, minus those the gate forbids.
    fn pair_flows(&self, sw: SwitchId, mac: MacAddr) -> Vec<FlowEntry> {
        let table = &self.learning[sw.0];
        let Some(mac_port) = table.port_of(mac) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for (other, other_port) in table.iter() {
            if other == mac || other_port == mac_port {
                continue;
            }
            if !self.gated(mac, other) {
                out.push(FlowEntry {
                    rule: FlowMatch::pair(mac, other),
                    priority: LEARNING_PRIORITY,
                    action: FlowAction::Output(other_port),
                });
            }
            if !self.gated(other, mac) {
                out.push(FlowEntry {
                    rule: FlowMatch::pair(other, mac),
                    priority: LEARNING_PRIORITY,
                    action: FlowAction::Output(mac_port),
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packets::{EtherType, Ipv4Packet, TcpFlags, TcpSegment, UdpDatagram, PROTO_TCP, PROTO_UDP};

    const A: MacAddr = MacAddr([0xaa, 0, 0, 0, 0, 0x0a]);
    const B: MacAddr = MacAddr([0xaa, 0, 0, 0, 0, 0x0b]);
    const NAT: MacAddr = MacAddr([2, 0, 0, 0, 0, 1]);
    const PORTAL: MacAddr = MacAddr([2, 0, 0, 0, 0, 2]);

    fn raw(src: MacAddr, dst: MacAddr) -> EthernetFrame {
        EthernetFrame::new(dst, src, EtherType::Arp, vec![0; 28])
    }

    fn tcp_to(src: MacAddr, dst: MacAddr, ip: Ipv4Addr, port: u16) -> EthernetFrame {
        let seg = TcpSegment { src_port: 49152, dst_port: port, seq: 1, ack: 0, flags: TcpFlags::SYN, payload: vec![] };
        let pkt = Ipv4Packet::new(Ipv4Addr::new(10, 0, 0, 11), ip, PROTO_TCP, 64, 1, seg.encode());
        EthernetFrame::new(dst, src, EtherType::Ipv4, pkt.encode())
    }

    fn udp_to(src: MacAddr, dst: MacAddr, ip: Ipv4Addr, port: u16) -> EthernetFrame {
        let d = UdpDatagram::new(49152, port, vec![1]);
        let pkt = Ipv4Packet::new(Ipv4Addr::new(10, 0, 0, 11), ip, PROTO_UDP, 64, 1, d.encode());
        EthernetFrame::new(dst, src, EtherType::Ipv4, pkt.encode())
    }

    fn transmits(actions: &[SimAction]) -> Vec<PortId> {
        actions
            .iter()
            .filter_map(|a| match a {
                SimAction::Transmit { port, .. } => Some(*port),
                _ => None,
            })
            .collect()
    }

    fn packet_ins(actions: &[SimAction]) -> usize {
        actions.iter().filter(|a| matches!(a, SimAction::Event(FabricEvent::PacketIn { .. }))).count()
    }

    fn gated_controller(intercept: bool) -> (Controller, SwitchId) {
        let mut policy = GatePolicy { nat_mac: Some(NAT), ..Default::default() };
        policy.walled_garden.insert(Ipv4Addr::new(10, 0, 0, 2));
        policy.walled_garden.insert(Ipv4Addr::new(10, 0, 0, 3));
        policy.infrastructure.insert(NAT);
        policy.infrastructure.insert(PORTAL);
        if intercept {
            policy.http_intercept = Some(PORTAL);
        }
        let mut c = Controller::new(policy);
        let sw = c.add_switch("s1", 4);
        // NAT on port 3, portal on port 4, both already seen
        c.switch_receive(sw, PortId(3), &raw(NAT, MacAddr::BROADCAST)).unwrap();
        c.switch_receive(sw, PortId(4), &raw(PORTAL, MacAddr::BROADCAST)).unwrap();
        c.switch_receive(sw, PortId(1), &raw(A, MacAddr::BROADCAST)).unwrap();
        (c, sw)
    }

    #[test]
    fn empty_table_goes_to_controller_once() {
        let mut c = Controller::new(GatePolicy::default());
        let sw = c.add_switch("s1", 3);
        let acts = c.switch_receive(sw, PortId(1), &raw(A, B)).unwrap();
        assert_eq!(packet_ins(&acts), 1);
    }

    #[test]
    fn direct_match_skips_controller() {
        let mut c = Controller::new(GatePolicy::default());
        let sw = c.add_switch("s1", 3);
        c.switches[0].table.install(FlowEntry {
            rule: FlowMatch::dst(B),
            priority: LEARNING_PRIORITY,
            action: FlowAction::Output(PortId(2)),
        });
        let acts = c.switch_receive(sw, PortId(1), &raw(A, B)).unwrap();
        assert_eq!(packet_ins(&acts), 0);
        assert_eq!(transmits(&acts), vec![PortId(2)]);
    }

    #[test]
    fn flood_excludes_ingress() {
        let mut c = Controller::new(GatePolicy::default());
        let sw = c.add_switch("s1", 3);
        let acts = c.switch_receive(sw, PortId(2), &raw(A, MacAddr::BROADCAST)).unwrap();
        assert_eq!(transmits(&acts), vec![PortId(1), PortId(3)]);
    }

    #[test]
    fn learns_then_installs_on_reply() {
        let mut c = Controller::new(GatePolicy::default());
        let sw = c.add_switch("s1", 3);
        let d1 = c.packet_in(sw, PortId(1), &raw(A, B)).unwrap();
        assert!(d1.installs.is_empty());
        assert_eq!(d1.packet_outs[0].action, FlowAction::Flood);
        assert_eq!(c.learning(sw).unwrap().port_of(A), Some(PortId(1)));

        let d2 = c.packet_in(sw, PortId(2), &raw(B, A)).unwrap();
        assert_eq!(c.learning(sw).unwrap().port_of(B), Some(PortId(2)));
        assert!(d2.installs.contains(&FlowEntry {
            rule: FlowMatch::pair(B, A),
            priority: LEARNING_PRIORITY,
            action: FlowAction::Output(PortId(1)),
        }));
        assert_eq!(d2.packet_outs[0].action, FlowAction::Output(PortId(1)));
    }

    #[test]
    fn invalid_port_is_configuration_error() {
        let mut c = Controller::new(GatePolicy::default());
        let sw = c.add_switch("s1", 3);
        assert!(matches!(c.switch_receive(sw, PortId(4), &raw(A, B)), Err(FabricError::InvalidPort { .. })));
        assert!(c.switch_receive(sw, PortId(0), &raw(A, B)).is_err());
    }

    #[test]
    fn captive_upstream_traffic_dropped_without_flow() {
        let (mut c, sw) = gated_controller(false);
        let before = c.switches[0].table.len();
        let acts = c.switch_receive(sw, PortId(1), &tcp_to(A, NAT, Ipv4Addr::new(93, 184, 216, 34), 80)).unwrap();
        assert!(transmits(&acts).is_empty());
        assert!(acts
            .iter()
            .any(|a| matches!(a, SimAction::Event(FabricEvent::Drop { reason: DropReason::Policy, .. }))));
        assert!(c.switches[0]
            .table
            .entries()
            .iter()
            .all(|e| !(e.rule.src_mac == Some(A) && e.rule.dst_mac == Some(NAT))));
        assert_eq!(c.switches[0].table.len(), before);
    }

    #[test]
    fn captive_dns_through_nat_permitted() {
        let (mut c, sw) = gated_controller(false);
        let acts = c.switch_receive(sw, PortId(1), &udp_to(A, NAT, Ipv4Addr::new(8, 8, 8, 8), 53)).unwrap();
        assert_eq!(transmits(&acts), vec![PortId(3)]);
        // still no pair flow, so the next query is inspected again
        let acts = c.switch_receive(sw, PortId(1), &udp_to(A, NAT, Ipv4Addr::new(8, 8, 8, 8), 53)).unwrap();
        assert_eq!(packet_ins(&acts), 1);
    }

    #[test]
    fn intercept_steers_http_to_portal() {
        let (mut c, sw) = gated_controller(true);
        let acts = c.switch_receive(sw, PortId(1), &tcp_to(A, NAT, Ipv4Addr::new(93, 184, 216, 34), 80)).unwrap();
        let sent: Vec<_> = acts
            .iter()
            .filter_map(|a| match a {
                SimAction::Transmit { port, frame } => Some((*port, frame.dst)),
                _ => None,
            })
            .collect();
        assert_eq!(sent, vec![(PortId(4), PORTAL)]);
        // other ports are still dropped
        let acts = c.switch_receive(sw, PortId(1), &tcp_to(A, NAT, Ipv4Addr::new(93, 184, 216, 34), 443)).unwrap();
        assert!(transmits(&acts).is_empty());
    }

    #[test]
    fn authorize_opens_the_gate() {
        let (mut c, sw) = gated_controller(false);
        let up = tcp_to(A, NAT, Ipv4Addr::new(93, 184, 216, 34), 80);
        // a flow naming A as source exists (toward the portal)
        assert!(c.switches[0].table.entries().iter().any(|e| e.rule.src_mac == Some(A)));
        let events = c.authorize_mac(A);
        assert!(!events.is_empty());
        assert!(c.switches[0].table.entries().iter().all(|e| e.rule.src_mac != Some(A)));
        let acts = c.switch_receive(sw, PortId(1), &up).unwrap();
        assert_eq!(transmits(&acts), vec![PortId(3)]);
        // now a pair flow carries it without the controller
        let acts = c.switch_receive(sw, PortId(1), &up).unwrap();
        assert_eq!(packet_ins(&acts), 0);
        assert_eq!(transmits(&acts), vec![PortId(3)]);
    }

    #[test]
    fn authorize_is_idempotent() {
        let (mut c, _) = gated_controller(false);
        c.authorize_mac(A);
        let auth = c.auth().clone();
        let flows = c.switches[0].table.entries().to_vec();
        assert!(c.authorize_mac(A).is_empty());
        assert_eq!(c.auth(), &auth);
        assert_eq!(c.switches[0].table.entries(), &flows[..]);
    }

    #[test]
    fn authorize_before_first_packet() {
        let mut c = Controller::new(GatePolicy::default());
        let sw = c.add_switch("s1", 2);
        c.authorize_mac(B);
        let d = c.packet_in(sw, PortId(2), &raw(B, A)).unwrap();
        assert_eq!(d.packet_outs[0].action, FlowAction::Flood);
        assert_eq!(c.learning(sw).unwrap().port_of(B), Some(PortId(2)));
    }
}
