use std::fmt;

use thiserror::Error;

pub const HEADER_LEN: usize = 20;

const FIN: u8 = 0x01;
const SYN: u8 = 0x02;
const ACK: u8 = 0x10;

/// The subset of TCP control bits the simulator models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct TcpFlags {
    pub syn: bool,
    pub ack: bool,
    pub fin: bool,
}

impl TcpFlags {
    pub const SYN: TcpFlags = TcpFlags { syn: true, ack: false, fin: false };
    pub const SYN_ACK: TcpFlags = TcpFlags { syn: true, ack: true, fin: false };
    pub const ACK: TcpFlags = TcpFlags { syn: false, ack: true, fin: false };
    pub const FIN_ACK: TcpFlags = TcpFlags { syn: false, ack: true, fin: true };

    fn bits(self) -> u8 {
        (if self.syn { SYN } else { 0 }) | (if self.ack { ACK } else { 0 }) | (if self.fin { FIN } else { 0 })
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.syn {
            parts.push("SYN");
        }
        if self.fin {
            parts.push("FIN");
        }
        if self.ack {
            parts.push("ACK");
        }
        if parts.is_empty() {
            f.write_str("-")
        } else {
            f.write_str(&parts.join("|"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TcpError {
    #[error("TCP segment truncated: {0} octets")]
    Truncated(usize),
    #[error("TCP options are not supported (data offset {0})")]
    OptionsUnsupported(u8),
    #[error("unsupported TCP control bits 0x{0:02x}")]
    UnsupportedFlags(u8),
    #[error("SYN segment carries payload")]
    SynWithPayload,
}

/// Simplified TCP segment: no options, window or checksum (all carried as zero).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpSegment {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub payload: Vec<u8>,
}

impl TcpSegment {
    /// Sequence space consumed: payload octets plus one each for SYN and FIN.
    pub fn seq_len(&self) -> u32 {
        self.payload.len() as u32 + u32::from(self.flags.syn) + u32::from(self.flags.fin)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.src_port.to_be_bytes());
        out.extend_from_slice(&self.dst_port.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.ack.to_be_bytes());
        out.push(5 << 4);
        out.push(self.flags.bits());
        out.extend_from_slice(&[0; 6]);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(wire: &[u8]) -> Result<Self, TcpError> {
        if wire.len() < HEADER_LEN {
            return Err(TcpError::Truncated(wire.len()));
        }
        let offset = wire[12] >> 4;
        if offset != 5 {
            return Err(TcpError::OptionsUnsupported(offset));
        }
        let bits = wire[13];
        if bits & !(FIN | SYN | ACK) != 0 {
            return Err(TcpError::UnsupportedFlags(bits));
        }
        let flags = TcpFlags { syn: bits & SYN != 0, ack: bits & ACK != 0, fin: bits & FIN != 0 };
        let payload = wire[HEADER_LEN..].to_vec();
        if flags.syn && !payload.is_empty() {
            return Err(TcpError::SynWithPayload);
        }
        let u32_at = |i: usize| u32::from_be_bytes([wire[i], wire[i + 1], wire[i + 2], wire[i + 3]]);
        Ok(TcpSegment {
            src_port: u16::from_be_bytes([wire[0], wire[1]]),
            dst_port: u16::from_be_bytes([wire[2], wire[3]]),
            seq: u32_at(4),
            ack: u32_at(8),
            flags,
            payload,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn syn_and_fin_consume_sequence_space() {
        let syn = TcpSegment { src_port: 1, dst_port: 2, seq: 10, ack: 0, flags: TcpFlags::SYN, payload: vec![] };
        assert_eq!(syn.seq_len(), 1);
        let fin = TcpSegment { flags: TcpFlags::FIN_ACK, payload: b"abc".to_vec(), ..syn.clone() };
        assert_eq!(fin.seq_len(), 4);
        assert_eq!(TcpSegment::decode(&fin.encode()).unwrap(), fin);
    }

    #[test]
    fn rejects_rst_and_syn_payload() {
        let mut w =
            TcpSegment { src_port: 1, dst_port: 2, seq: 0, ack: 0, flags: TcpFlags::ACK, payload: vec![] }.encode();
        w[13] |= 0x04;
        assert_eq!(TcpSegment::decode(&w), Err(TcpError::UnsupportedFlags(0x14)));
        let mut w =
            TcpSegment { src_port: 1, dst_port: 2, seq: 0, ack: 0, flags: TcpFlags::SYN, payload: vec![] }.encode();
        w.push(0);
        assert_eq!(TcpSegment::decode(&w), Err(TcpError::SynWithPayload));
    }
}
