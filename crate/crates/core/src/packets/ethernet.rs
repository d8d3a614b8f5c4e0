use thiserror::Error;

use super::MacAddr;

pub const HEADER_LEN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EtherType {
    Arp,
    Ipv4,
}

impl EtherType {
    pub const fn value(self) -> u16 {
        match self {
            EtherType::Arp => 0x0806,
            EtherType::Ipv4 => 0x0800,
        }
    }

    pub fn from_value(v: u16) -> Option<Self> {
        match v {
            0x0806 => Some(EtherType::Arp),
            0x0800 => Some(EtherType::Ipv4),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("ethernet frame truncated: {0} octets, need at least 14")]
    Truncated(usize),
    #[error("unsupported ethertype 0x{0:04x}")]
    BadEthertype(u16),
    #[error("broadcast address used as frame source")]
    BroadcastSource,
}

/// Ethernet II frame without preamble, FCS or padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EthernetFrame {
    pub dst: MacAddr,
    pub src: MacAddr,
    pub ethertype: EtherType,
    pub payload: Vec<u8>,
}

impl EthernetFrame {
    pub fn new(dst: MacAddr, src: MacAddr, ethertype: EtherType, payload: Vec<u8>) -> Self {
        EthernetFrame { dst, src, ethertype, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.dst.0);
        out.extend_from_slice(&self.src.0);
        out.extend_from_slice(&self.ethertype.value().to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(wire: &[u8]) -> Result<Self, FrameError> {
        if wire.len() < HEADER_LEN {
            return Err(FrameError::Truncated(wire.len()));
        }
        let dst = MacAddr::from_slice(&wire[0..6]);
        let src = MacAddr::from_slice(&wire[6..12]);
        if src.is_broadcast() {
            return Err(FrameError::BroadcastSource);
        }
        let raw = u16::from_be_bytes([wire[12], wire[13]]);
        let ethertype = EtherType::from_value(raw).ok_or(FrameError::BadEthertype(raw))?;
        Ok(EthernetFrame { dst, src, ethertype, payload: wire[HEADER_LEN..].to_vec() })
    }
}
