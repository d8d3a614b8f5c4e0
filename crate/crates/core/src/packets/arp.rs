use std::net::Ipv4Addr;

use thiserror::Error;

use super::MacAddr;

pub const ARP_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArpOp {
    Request,
    Reply,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArpError {
    #[error("ARP packet truncated: {0} octets, need 28")]
    Truncated(usize),
    #[error("unsupported ARP hardware/protocol combination")]
    UnsupportedFormat,
    #[error("unknown ARP operation {0}")]
    BadOp(u16),
    #[error("ARP request carries a non-zero target hardware address")]
    RequestTargetSet,
}

/// Ethernet/IPv4 ARP packet (28 octets on the wire).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArpPacket {
    pub op: ArpOp,
    pub sender_mac: MacAddr,
    pub sender_ip: Ipv4Addr,
    pub target_mac: MacAddr,
    pub target_ip: Ipv4Addr,
}

impl ArpPacket {
    pub fn request(sender_mac: MacAddr, sender_ip: Ipv4Addr, target_ip: Ipv4Addr) -> Self {
        ArpPacket { op: ArpOp::Request, sender_mac, sender_ip, target_mac: MacAddr::ZERO, target_ip }
    }

    pub fn reply_to(&self, my_mac: MacAddr) -> Self {
        ArpPacket {
            op: ArpOp::Reply,
            sender_mac: my_mac,
            sender_ip: self.target_ip,
            target_mac: self.sender_mac,
            target_ip: self.sender_ip,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ARP_LEN);
        out.extend_from_slice(&1u16.to_be_bytes());
        out.extend_from_slice(&0x0800u16.to_be_bytes());
        out.push(6);
        out.push(4);
        let op: u16 = match self.op {
            ArpOp::Request => 1,
            ArpOp::Reply => 2,
        };
        out.extend_from_slice(&op.to_be_bytes());
        out.extend_from_slice(&self.sender_mac.0);
        out.extend_from_slice(&self.sender_ip.octets());
        out.extend_from_slice(&self.target_mac.0);
        out.extend_from_slice(&self.target_ip.octets());
        out
    }

    pub fn decode(wire: &[u8]) -> Result<Self, ArpError> {
        if wire.len() < ARP_LEN {
            return Err(ArpError::Truncated(wire.len()));
        }
        if wire[0..6] != [0, 1, 0x08, 0x00, 6, 4] {
            return Err(ArpError::UnsupportedFormat);
        }
        let op = match u16::from_be_bytes([wire[6], wire[7]]) {
            1 => ArpOp::Request,
            2 => ArpOp::Reply,
            other => return Err(ArpError::BadOp(other)),
        };
        let ip = |i: usize| Ipv4Addr::new(wire[i], wire[i + 1], wire[i + 2], wire[i + 3]);
        let pkt = ArpPacket {
            op,
            sender_mac: MacAddr::from_slice(&wire[8..14]),
            sender_ip: ip(14),
            target_mac: MacAddr::from_slice(&wire[18..24]),
            target_ip: ip(24),
        };
        if pkt.op == ArpOp::Request && pkt.target_mac != MacAddr::ZERO {
            return Err(ArpError::RequestTargetSet);
        }
        Ok(pkt)
    }
}
