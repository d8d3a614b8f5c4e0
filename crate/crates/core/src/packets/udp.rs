use thiserror::Error;

pub const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UdpError {
    #[error("UDP datagram truncated: {0} octets")]
    Truncated(usize),
    #[error("UDP length field {declared} does not match {actual} octets")]
    LengthMismatch { declared: usize, actual: usize },
}

/// UDP datagram. The checksum field is always carried as zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UdpDatagram {
    pub src_port: u16,
    pub dst_port: u16,
    pub payload: Vec<u8>,
}

impl UdpDatagram {
    pub fn new(src_port: u16, dst_port: u16, payload: Vec<u8>) -> Self {
        UdpDatagram { src_port, dst_port, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.src_port.to_be_bytes());
        out.extend_from_slice(&self.dst_port.to_be_bytes());
        out.extend_from_slice(&((HEADER_LEN + self.payload.len()) as u16).to_be_bytes());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(wire: &[u8]) -> Result<Self, UdpError> {
        if wire.len() < HEADER_LEN {
            return Err(UdpError::Truncated(wire.len()));
        }
        let declared = usize::from(u16::from_be_bytes([wire[4], wire[5]]));
        if declared > wire.len() {
            return Err(UdpError::Truncated(wire.len()));
        }
        if declared != wire.len() {
            return Err(UdpError::LengthMismatch { declared, actual: wire.len() });
        }
        Ok(UdpDatagram {
            src_port: u16::from_be_bytes([wire[0], wire[1]]),
            dst_port: u16::from_be_bytes([wire[2], wire[3]]),
            payload: wire[HEADER_LEN..].to_vec(),
        })
    }
}
