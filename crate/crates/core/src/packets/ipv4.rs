use std::net::Ipv4Addr;

use thiserror::Error;

pub const HEADER_LEN: usize = 20;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("checksum input has odd length {0}")]
pub struct ChecksumError(pub usize);

/// Internet checksum: ones'-complement of the ones'-complement sum of the
/// 16-bit big-endian words of `header`. The caller zeroes the checksum field
/// first; running it over a header that already carries its checksum yields 0.
pub fn ipv4_checksum(header: &[u8]) -> Result<u16, ChecksumError> {
    if !header.len().is_multiple_of(2) {
        return Err(ChecksumError(header.len()));
    }
    let mut sum: u32 = 0;
    for w in header.chunks_exact(2) {
        sum += u32::from(u16::from_be_bytes([w[0], w[1]]));
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    Ok(!(sum as u16))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Ipv4Error {
    #[error("IPv4 packet truncated: {0} octets")]
    Truncated(usize),
    #[error("IP version {0} is not 4")]
    BadVersion(u8),
    #[error("IPv4 options are not supported (IHL {0})")]
    OptionsUnsupported(u8),
    #[error("total length {declared} does not match {actual} available octets")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("fragmented packets are not supported")]
    Fragmented,
    #[error("header checksum does not verify")]
    BadChecksum,
}

/// IPv4 packet with a fixed 20-octet header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ipv4Packet {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub protocol: u8,
    pub ttl: u8,
    pub identification: u16,
    pub header_checksum: u16,
    pub payload: Vec<u8>,
}

impl Ipv4Packet {
    /// Builds a packet with a correct header checksum.
    pub fn new(src: Ipv4Addr, dst: Ipv4Addr, protocol: u8, ttl: u8, identification: u16, payload: Vec<u8>) -> Self {
        let mut p = Ipv4Packet { src, dst, protocol, ttl, identification, header_checksum: 0, payload };
        p.fill_checksum();
        p
    }

    fn header(&self, checksum: u16) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0] = 0x45;
        let total = (HEADER_LEN + self.payload.len()) as u16;
        h[2..4].copy_from_slice(&total.to_be_bytes());
        h[4..6].copy_from_slice(&self.identification.to_be_bytes());
        h[8] = self.ttl;
        h[9] = self.protocol;
        h[10..12].copy_from_slice(&checksum.to_be_bytes());
        h[12..16].copy_from_slice(&self.src.octets());
        h[16..20].copy_from_slice(&self.dst.octets());
        h
    }

    pub fn compute_checksum(&self) -> u16 {
        ipv4_checksum(&self.header(0)).expect("header has even length")
    }

    pub fn fill_checksum(&mut self) {
        self.header_checksum = self.compute_checksum();
    }

    pub fn verify(&self) -> bool {
        ipv4_checksum(&self.header(self.header_checksum)) == Ok(0)
    }

    /// Writes `header_checksum` verbatim; use [`Ipv4Packet::new`] or
    /// [`Ipv4Packet::fill_checksum`] to produce a well-formed packet.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.header(self.header_checksum));
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(wire: &[u8]) -> Result<Self, Ipv4Error> {
        if wire.len() < HEADER_LEN {
            return Err(Ipv4Error::Truncated(wire.len()));
        }
        let version = wire[0] >> 4;
        if version != 4 {
            return Err(Ipv4Error::BadVersion(version));
        }
        let ihl = wire[0] & 0x0f;
        if ihl != 5 {
            return Err(Ipv4Error::OptionsUnsupported(ihl));
        }
        let declared = usize::from(u16::from_be_bytes([wire[2], wire[3]]));
        if declared > wire.len() {
            return Err(Ipv4Error::Truncated(wire.len()));
        }
        if declared != wire.len() {
            return Err(Ipv4Error::LengthMismatch { declared, actual: wire.len() });
        }
        if u16::from_be_bytes([wire[6], wire[7]]) & 0x3fff != 0 {
            return Err(Ipv4Error::Fragmented);
        }
        if ipv4_checksum(&wire[..HEADER_LEN]) != Ok(0) {
            return Err(Ipv4Error::BadChecksum);
        }
        let ip = |i: usize| Ipv4Addr::new(wire[i], wire[i + 1], wire[i + 2], wire[i + 3]);
        Ok(Ipv4Packet {
            src: ip(12),
            dst: ip(16),
            protocol: wire[9],
            ttl: wire[8],
            identification: u16::from_be_bytes([wire[4], wire[5]]),
            header_checksum: u16::from_be_bytes([wire[10], wire[11]]),
            payload: wire[HEADER_LEN..].to_vec(),
        })
    }

    /// Destination port of a UDP or TCP payload, if the payload is long enough.
    pub fn l4_dst_port(&self) -> Option<u16> {
        l4_ports(self.protocol, &self.payload).map(|(_, d)| d)
    }

    pub fn l4_src_port(&self) -> Option<u16> {
        l4_ports(self.protocol, &self.payload).map(|(s, _)| s)
    }

    /// Overwrites the L4 source/destination port in place. No-op for other protocols.
    pub fn set_l4_ports(&mut self, src: Option<u16>, dst: Option<u16>) {
        if l4_ports(self.protocol, &self.payload).is_none() {
            return;
        }
        if let Some(s) = src {
            self.payload[0..2].copy_from_slice(&s.to_be_bytes());
        }
        if let Some(d) = dst {
            self.payload[2..4].copy_from_slice(&d.to_be_bytes());
        }
    }
}

fn l4_ports(protocol: u8, payload: &[u8]) -> Option<(u16, u16)> {
    let min = match protocol {
        PROTO_UDP => 8,
        PROTO_TCP => 20,
        _ => return None,
    };
    if payload.len() < min {
        return None;
    }
    Some((u16::from_be_bytes([payload[0], payload[1]]), u16::from_be_bytes([payload[2], payload[3]])))
}
