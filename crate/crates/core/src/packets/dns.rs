//! RFC 1035 message subset: header, question and answer sections.
//!
//! The encoder never emits compression pointers; the decoder follows them.

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

pub const HEADER_LEN: usize = 12;
pub const TYPE_A: u16 = 1;
pub const CLASS_IN: u16 = 1;
pub const RCODE_NOERROR: u8 = 0;
pub const RCODE_FORMERR: u8 = 1;
pub const RCODE_NXDOMAIN: u8 = 3;

const MAX_LABEL: usize = 63;
const MAX_NAME: usize = 255;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DnsError {
    #[error("DNS message truncated at offset {0}")]
    Truncated(usize),
    #[error("compression pointer loop at offset {0}")]
    PointerLoop(usize),
    #[error("label of {0} octets exceeds 63")]
    LabelTooLong(usize),
    #[error("empty label inside a name")]
    EmptyLabel,
    #[error("name of {0} octets exceeds 255")]
    NameTooLong(usize),
    #[error("reserved label type 0x{0:02x}")]
    BadLabelType(u8),
    #[error("unsupported opcode {0}")]
    UnsupportedOpcode(u8),
    #[error("rcode {0} does not fit in 4 bits")]
    BadRcode(u8),
    #[error("A record rdata has {0} octets, expected 4")]
    BadRdataLength(usize),
    #[error("too many records for a 16-bit count")]
    TooManyRecords,
}

/// Domain name as a sequence of lowercase labels. The root name has no labels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct DomainName {
    labels: Vec<Vec<u8>>,
}

impl DomainName {
    pub fn root() -> Self {
        DomainName::default()
    }

    pub fn from_labels<I, L>(labels: I) -> Result<Self, DnsError>
    where
        I: IntoIterator<Item = L>,
        L: AsRef<[u8]>,
    {
        let name = DomainName { labels: labels.into_iter().map(|l| l.as_ref().to_ascii_lowercase()).collect() };
        name.validate()?;
        Ok(name)
    }

    pub fn labels(&self) -> &[Vec<u8>] {
        &self.labels
    }

    /// Length of the uncompressed wire form, including the root octet.
    pub fn wire_len(&self) -> usize {
        self.labels.iter().map(|l| l.len() + 1).sum::<usize>() + 1
    }

    fn validate(&self) -> Result<(), DnsError> {
        for l in &self.labels {
            if l.is_empty() {
                return Err(DnsError::EmptyLabel);
            }
            if l.len() > MAX_LABEL {
                return Err(DnsError::LabelTooLong(l.len()));
            }
        }
        let n = self.wire_len();
        if n > MAX_NAME {
            return Err(DnsError::NameTooLong(n));
        }
        Ok(())
    }

    fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), DnsError> {
        self.validate()?;
        for l in &self.labels {
            out.push(l.len() as u8);
            out.extend_from_slice(l);
        }
        out.push(0);
        Ok(())
    }
}

impl FromStr for DomainName {
    type Err = DnsError;

    /// Dotted text; a trailing dot is optional and "." or "" is the root.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.strip_suffix('.').unwrap_or(s);
        if trimmed.is_empty() {
            return Ok(DomainName::root());
        }
        DomainName::from_labels(trimmed.split('.'))
    }
}

impl fmt::Display for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.labels.is_empty() {
            return f.write_str(".");
        }
        for (i, l) in self.labels.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            for &b in l {
                if b.is_ascii_graphic() && b != b'.' && b != b'\\' {
                    write!(f, "{}", b as char)?;
                } else {
                    write!(f, "\\{b:03}")?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DnsKind {
    Query,
    Response,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsQuestion {
    pub qname: DomainName,
    pub qtype: u16,
    pub qclass: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsRecord {
    pub name: DomainName,
    pub rtype: u16,
    pub rclass: u16,
    pub ttl: u32,
    pub rdata: Vec<u8>,
}

impl DnsRecord {
    pub fn a(name: DomainName, ttl: u32, addr: Ipv4Addr) -> Self {
        DnsRecord { name, rtype: TYPE_A, rclass: CLASS_IN, ttl, rdata: addr.octets().to_vec() }
    }

    pub fn a_addr(&self) -> Option<Ipv4Addr> {
        if self.rtype == TYPE_A && self.rdata.len() == 4 {
            Some(Ipv4Addr::new(self.rdata[0], self.rdata[1], self.rdata[2], self.rdata[3]))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsMessage {
    pub id: u16,
    pub kind: DnsKind,
    pub opcode: u8,
    pub rcode: u8,
    pub recursion_desired: bool,
    pub recursion_available: bool,
    pub questions: Vec<DnsQuestion>,
    pub answers: Vec<DnsRecord>,
}

impl DnsMessage {
    /// Standard recursive query for one A record.
    pub fn query_a(id: u16, name: DomainName) -> Self {
        DnsMessage {
            id,
            kind: DnsKind::Query,
            opcode: 0,
            rcode: RCODE_NOERROR,
            recursion_desired: true,
            recursion_available: false,
            questions: vec![DnsQuestion { qname: name, qtype: TYPE_A, qclass: CLASS_IN }],
            answers: Vec::new(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, DnsError> {
        if self.opcode != 0 {
            return Err(DnsError::UnsupportedOpcode(self.opcode));
        }
        if self.rcode > 0x0f {
            return Err(DnsError::BadRcode(self.rcode));
        }
        let qd = u16::try_from(self.questions.len()).map_err(|_| DnsError::TooManyRecords)?;
        let an = u16::try_from(self.answers.len()).map_err(|_| DnsError::TooManyRecords)?;
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(&self.id.to_be_bytes());
        let mut b2 = 0u8;
        if self.kind == DnsKind::Response {
            b2 |= 0x80;
        }
        if self.recursion_desired {
            b2 |= 0x01;
        }
        let mut b3 = self.rcode;
        if self.recursion_available {
            b3 |= 0x80;
        }
        out.push(b2);
        out.push(b3);
        out.extend_from_slice(&qd.to_be_bytes());
        out.extend_from_slice(&an.to_be_bytes());
        out.extend_from_slice(&[0, 0, 0, 0]);
        for q in &self.questions {
            q.qname.encode_into(&mut out)?;
            out.extend_from_slice(&q.qtype.to_be_bytes());
            out.extend_from_slice(&q.qclass.to_be_bytes());
        }
        for r in &self.answers {
            if r.rtype == TYPE_A && r.rdata.len() != 4 {
                return Err(DnsError::BadRdataLength(r.rdata.len()));
            }
            r.name.encode_into(&mut out)?;
            out.extend_from_slice(&r.rtype.to_be_bytes());
            out.extend_from_slice(&r.rclass.to_be_bytes());
            out.extend_from_slice(&r.ttl.to_be_bytes());
            let len = u16::try_from(r.rdata.len()).map_err(|_| DnsError::TooManyRecords)?;
            out.extend_from_slice(&len.to_be_bytes());
            out.extend_from_slice(&r.rdata);
        }
        Ok(out)
    }

    /// Decodes a message. Authority and additional sections are parsed for
    /// well-formedness and then discarded.
    pub fn decode(wire: &[u8]) -> Result<Self, DnsError> {
        if wire.len() < HEADER_LEN {
            return Err(DnsError::Truncated(wire.len()));
        }
        let mut r = Reader { wire, pos: 0 };
        let id = r.u16()?;
        let b2 = r.u8()?;
        let b3 = r.u8()?;
        let qd = r.u16()?;
        let an = r.u16()?;
        let ns = r.u16()?;
        let ar = r.u16()?;
        let opcode = (b2 >> 3) & 0x0f;
        if opcode != 0 {
            return Err(DnsError::UnsupportedOpcode(opcode));
        }
        let mut questions = Vec::new();
        for _ in 0..qd {
            let qname = r.name()?;
            let qtype = r.u16()?;
            let qclass = r.u16()?;
            questions.push(DnsQuestion { qname, qtype, qclass });
        }
        let mut answers = Vec::new();
        for _ in 0..an {
            answers.push(r.record()?);
        }
        for _ in 0..(u32::from(ns) + u32::from(ar)) {
            r.record()?;
        }
        Ok(DnsMessage {
            id,
            kind: if b2 & 0x80 != 0 { DnsKind::Response } else { DnsKind::Query },
            opcode,
            rcode: b3 & 0x0f,
            recursion_desired: b2 & 0x01 != 0,
            recursion_available: b3 & 0x80 != 0,
            questions,
            answers,
        })
    }
}

struct Reader<'a> {
    wire: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], DnsError> {
        let end = self.pos.checked_add(n).ok_or(DnsError::Truncated(self.pos))?;
        if end > self.wire.len() {
            return Err(DnsError::Truncated(self.wire.len()));
        }
        let s = &self.wire[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DnsError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DnsError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, DnsError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn record(&mut self) -> Result<DnsRecord, DnsError> {
        let name = self.name()?;
        let rtype = self.u16()?;
        let rclass = self.u16()?;
        let ttl = self.u32()?;
        let len = usize::from(self.u16()?);
        let rdata = self.take(len)?.to_vec();
        if rtype == TYPE_A && rdata.len() != 4 {
            return Err(DnsError::BadRdataLength(rdata.len()));
        }
        Ok(DnsRecord { name, rtype, rclass, ttl, rdata })
    }

    /// Reads a possibly compressed name; the cursor ends after the first
    /// pointer or the terminating zero octet.
    fn name(&mut self) -> Result<DomainName, DnsError> {
        let mut labels = Vec::new();
        let mut wire_len = 1usize;
        let mut cursor = self.pos;
        let mut resume: Option<usize> = None;
        let mut visited = BTreeSet::new();
        loop {
            let len = *self.wire.get(cursor).ok_or(DnsError::Truncated(self.wire.len()))?;
            match len & 0xc0 {
                0x00 => {
                    if len == 0 {
                        cursor += 1;
                        break;
                    }
                    let n = usize::from(len);
                    let end = cursor + 1 + n;
                    if end > self.wire.len() {
                        return Err(DnsError::Truncated(self.wire.len()));
                    }
                    wire_len += n + 1;
                    if wire_len > MAX_NAME {
                        return Err(DnsError::NameTooLong(wire_len));
                    }
                    labels.push(self.wire[cursor + 1..end].to_ascii_lowercase());
                    cursor = end;
                }
                0xc0 => {
                    let lo = *self.wire.get(cursor + 1).ok_or(DnsError::Truncated(self.wire.len()))?;
                    let target = usize::from(u16::from_be_bytes([len & 0x3f, lo]));
                    if resume.is_none() {
                        resume = Some(cursor + 2);
                    }
                    if !visited.insert(target) {
                        return Err(DnsError::PointerLoop(cursor));
                    }
                    cursor = target;
                }
                _ => {
                    // 0x40 and 0x80 prefixes are reserved; a first octet in
                    // that range reads as an over-long label.
                    return Err(if len & 0xc0 == 0x40 {
                        DnsError::LabelTooLong(usize::from(len))
                    } else {
                        DnsError::BadLabelType(len)
                    });
                }
            }
        }
        self.pos = resume.unwrap_or(cursor);
        Ok(DomainName { labels })
    }
}
