//! Destination rewrite rules with reply un-rewriting, standing in for an
//! iptables DNAT/REDIRECT table.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

use crate::packets::{Ipv4Packet, TcpSegment, PROTO_TCP, PROTO_UDP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum L4Proto {
    Udp,
    Tcp,
}

impl L4Proto {
    pub fn number(self) -> u8 {
        match self {
            L4Proto::Udp => PROTO_UDP,
            L4Proto::Tcp => PROTO_TCP,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            PROTO_UDP => Some(L4Proto::Udp),
            PROTO_TCP => Some(L4Proto::Tcp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleMatch {
    pub protocol: L4Proto,
    pub ip_dst: Option<Ipv4Addr>,
    pub l4_dst_port: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rewrite {
    pub new_ip_dst: Ipv4Addr,
    pub new_l4_dst_port: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteRule {
    pub matcher: RuleMatch,
    pub rewrite: Rewrite,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid rewrite rule {0:?}")]
pub struct RuleParseError(pub String);

impl FromStr for RewriteRule {
    type Err = RuleParseError;

    /// `udp|tcp [dst=<ip>] [dport=<port>] -> <ip>[:<port>]`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || RuleParseError(s.to_string());
        let (lhs, rhs) = s.split_once("->").ok_or_else(err)?;
        let mut words = lhs.split_whitespace();
        let protocol = match words.next().ok_or_else(err)? {
            "udp" => L4Proto::Udp,
            "tcp" => L4Proto::Tcp,
            _ => return Err(err()),
        };
        let mut matcher = RuleMatch { protocol, ip_dst: None, l4_dst_port: None };
        for w in words {
            match w.split_once('=') {
                Some(("dst", v)) => matcher.ip_dst = Some(v.parse().map_err(|_| err())?),
                Some(("dport", v)) => matcher.l4_dst_port = Some(v.parse().map_err(|_| err())?),
                _ => return Err(err()),
            }
        }
        let target = rhs.trim();
        let (ip, port) = match target.split_once(':') {
            Some((ip, port)) => (ip, Some(port.parse().map_err(|_| err())?)),
            None => (target, None),
        };
        Ok(RewriteRule {
            matcher,
            rewrite: Rewrite { new_ip_dst: ip.parse().map_err(|_| err())?, new_l4_dst_port: port },
        })
    }
}

impl fmt::Display for RewriteRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let proto = match self.matcher.protocol {
            L4Proto::Udp => "udp",
            L4Proto::Tcp => "tcp",
        };
        write!(f, "{proto}")?;
        if let Some(ip) = self.matcher.ip_dst {
            write!(f, " dst={ip}")?;
        }
        if let Some(p) = self.matcher.l4_dst_port {
            write!(f, " dport={p}")?;
        }
        write!(f, " -> {}", self.rewrite.new_ip_dst)?;
        if let Some(p) = self.rewrite.new_l4_dst_port {
            write!(f, ":{p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct ReverseKey {
    protocol: L4Proto,
    client_ip: Ipv4Addr,
    client_port: u16,
    original_dst: (Ipv4Addr, u16),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnatResult {
    pub packet: Ipv4Packet,
    pub rewritten: bool,
}

/// Ordered rules (first match wins) plus the reverse-translation state that
/// forward rewrites leave behind.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RewriteRuleSet {
    rules: Vec<RewriteRule>,
    reverse: BTreeMap<ReverseKey, (Ipv4Addr, u16)>,
}

impl RewriteRuleSet {
    pub fn new(rules: Vec<RewriteRule>) -> Self {
        RewriteRuleSet { rules, reverse: BTreeMap::new() }
    }

    pub fn rules(&self) -> &[RewriteRule] {
        &self.rules
    }

    pub fn pending_reverse(&self) -> usize {
        self.reverse.len()
    }

    /// Rewrites the destination of the first matching rule and records how
    /// to restore the reply's source.
    pub fn apply_dnat(&mut self, pkt: &Ipv4Packet) -> DnatResult {
        let unchanged = || DnatResult { packet: pkt.clone(), rewritten: false };
        let Some(protocol) = L4Proto::from_number(pkt.protocol) else {
            return unchanged();
        };
        let (Some(sport), Some(dport)) = (pkt.l4_src_port(), pkt.l4_dst_port()) else {
            return unchanged();
        };
        let Some(rule) = self.rules.iter().find(|r| {
            r.matcher.protocol == protocol
                && r.matcher.ip_dst.is_none_or(|ip| ip == pkt.dst)
                && r.matcher.l4_dst_port.is_none_or(|p| p == dport)
        }) else {
            return unchanged();
        };
        let new_dst = (rule.rewrite.new_ip_dst, rule.rewrite.new_l4_dst_port.unwrap_or(dport));
        let mut out = pkt.clone();
        out.dst = new_dst.0;
        out.set_l4_ports(None, Some(new_dst.1));
        out.fill_checksum();
        self.reverse.insert(
            ReverseKey { protocol, client_ip: pkt.src, client_port: sport, original_dst: (pkt.dst, dport) },
            new_dst,
        );
        DnatResult { packet: out, rewritten: true }
    }

    /// Restores the source of a reply to the address the client originally
    /// targeted. UDP state is consumed by the first reply; TCP state by the
    /// reply that carries FIN. Without matching state the reply is returned
    /// unchanged with `rewritten == false`.
    pub fn undo_dnat(&mut self, reply: &Ipv4Packet) -> DnatResult {
        let unchanged = || DnatResult { packet: reply.clone(), rewritten: false };
        let Some(protocol) = L4Proto::from_number(reply.protocol) else {
            return unchanged();
        };
        let (Some(sport), Some(dport)) = (reply.l4_src_port(), reply.l4_dst_port()) else {
            return unchanged();
        };
        let Some(key) = self
            .reverse
            .iter()
            .find(|(k, v)| {
                k.protocol == protocol
                    && k.client_ip == reply.dst
                    && k.client_port == dport
                    && **v == (reply.src, sport)
            })
            .map(|(k, _)| *k)
        else {
            return unchanged();
        };
        let consume = match protocol {
            L4Proto::Udp => true,
            L4Proto::Tcp => TcpSegment::decode(&reply.payload).is_ok_and(|s| s.flags.fin),
        };
        if consume {
            self.reverse.remove(&key);
        }
        let mut out = reply.clone();
        out.src = key.original_dst.0;
        out.set_l4_ports(Some(key.original_dst.1), None);
        out.fill_checksum();
        DnatResult { packet: out, rewritten: true }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packets::UdpDatagram;

    const CLIENT: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 11);
    const PUBLIC_DNS: Ipv4Addr = Ipv4Addr::new(8, 8, 8, 8);
    const LOCAL_DNS: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 3);

    fn rules() -> RewriteRuleSet {
        RewriteRuleSet::new(vec!["udp dport=53 -> 10.0.0.3".parse().unwrap()])
    }

    fn udp(src: (Ipv4Addr, u16), dst: (Ipv4Addr, u16)) -> Ipv4Packet {
        Ipv4Packet::new(src.0, dst.0, PROTO_UDP, 64, 9, UdpDatagram::new(src.1, dst.1, b"q".to_vec()).encode())
    }

    #[test]
    fn rule_text_round_trip() {
        for s in ["udp dport=53 -> 10.0.0.3", "tcp dst=1.2.3.4 dport=80 -> 10.0.0.2:8080"] {
            assert_eq!(s.parse::<RewriteRule>().unwrap().to_string(), s);
        }
        assert!("icmp -> 1.1.1.1".parse::<RewriteRule>().is_err());
        assert!("udp dport=53".parse::<RewriteRule>().is_err());
    }

    #[test]
    fn forward_rewrite() {
        let mut r = rules();
        let q = udp((CLIENT, 49152), (PUBLIC_DNS, 53));
        let out = r.apply_dnat(&q);
        assert!(out.rewritten);
        assert_eq!(out.packet.dst, LOCAL_DNS);
        assert_eq!(out.packet.l4_dst_port(), Some(53));
        assert!(out.packet.verify());
        assert_ne!(out.packet.header_checksum, q.header_checksum);
        assert_eq!(out.packet.payload, q.payload);
    }

    #[test]
    fn non_matching_untouched() {
        let mut r = rules();
        let seg = TcpSegment {
            src_port: 49152,
            dst_port: 80,
            seq: 0,
            ack: 0,
            flags: crate::packets::TcpFlags::SYN,
            payload: vec![],
        };
        let p = Ipv4Packet::new(CLIENT, PUBLIC_DNS, PROTO_TCP, 64, 1, seg.encode());
        let out = r.apply_dnat(&p);
        assert!(!out.rewritten);
        assert_eq!(out.packet, p);
        assert_eq!(r.pending_reverse(), 0);
    }

    /// Hand-tracked 5-tuple oracle: the reply must come back from exactly the
    /// address the client sent to.
    #[test]
    fn reply_restored_once() {
        let mut r = rules();
        let q = udp((CLIENT, 49152), (PUBLIC_DNS, 53));
        let fwd = r.apply_dnat(&q).packet;
        let expected_tuple = ((q.dst, 53u16), (q.src, 49152u16));

        let reply = udp((fwd.dst, 53), (CLIENT, 49152));
        let back = r.undo_dnat(&reply);
        assert!(back.rewritten);
        let seen = (
            (back.packet.src, back.packet.l4_src_port().unwrap()),
            (back.packet.dst, back.packet.l4_dst_port().unwrap()),
        );
        assert_eq!(seen, expected_tuple);
        assert!(back.packet.verify());
        assert_eq!(r.pending_reverse(), 0);

        // state consumed: a duplicate reply passes through unchanged
        let again = r.undo_dnat(&reply);
        assert!(!again.rewritten);
        assert_eq!(again.packet, reply);
    }

    #[test]
    fn unmatched_reply_passes_through() {
        let mut r = rules();
        let reply = udp((LOCAL_DNS, 53), (CLIENT, 40000));
        let out = r.undo_dnat(&reply);
        assert!(!out.rewritten);
        assert_eq!(out.packet, reply);
    }

    #[test]
    fn first_rule_wins() {
        let mut r = RewriteRuleSet::new(vec![
            "udp dst=8.8.8.8 dport=53 -> 10.0.0.4".parse().unwrap(),
            "udp dport=53 -> 10.0.0.3".parse().unwrap(),
        ]);
        let a = r.apply_dnat(&udp((CLIENT, 1), (PUBLIC_DNS, 53))).packet;
        let b = r.apply_dnat(&udp((CLIENT, 2), (Ipv4Addr::new(1, 1, 1, 1), 53))).packet;
        assert_eq!(a.dst, Ipv4Addr::new(10, 0, 0, 4));
        assert_eq!(b.dst, LOCAL_DNS);
    }
}
