//! Octet-exact codecs for every protocol the simulator carries.
//!
//! Each layer exposes a plain record type with `encode` and `decode`. Decoders
//! never panic: arbitrary input yields either a record or a named error.
//! IPv4 addresses use [`std::net::Ipv4Addr`].

mod arp;
mod dns;
mod ethernet;
mod http;
mod ipv4;
mod mac;
mod tcp;
mod udp;

pub use std::net::Ipv4Addr;

pub use arp::{ArpError, ArpOp, ArpPacket};
pub use dns::{
    DnsError, DnsKind, DnsMessage, DnsQuestion, DnsRecord, DomainName, CLASS_IN, RCODE_FORMERR, RCODE_NOERROR,
    RCODE_NXDOMAIN, TYPE_A,
};
pub use ethernet::{EtherType, EthernetFrame, FrameError};
pub use http::{HttpError, HttpMessage, Method};
pub use ipv4::{ipv4_checksum, ChecksumError, Ipv4Error, Ipv4Packet, PROTO_TCP, PROTO_UDP};
pub use mac::{MacAddr, MacParseError};
pub use tcp::{TcpError, TcpFlags, TcpSegment};
pub use udp::{UdpDatagram, UdpError};
