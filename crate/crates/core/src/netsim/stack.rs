use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use crate::packets::{ArpOp, ArpPacket, EtherType, EthernetFrame, Ipv4Packet, MacAddr, TcpFlags, TcpSegment};

use super::topology::in_subnet;

pub(crate) const DEFAULT_TTL: u8 = 64;

/// ARP and IPv4 output shared by every node with an address.
#[derive(Debug, Clone)]
pub(crate) struct Stack {
    pub mac: MacAddr,
    pub ip: Ipv4Addr,
    pub net: Ipv4Addr,
    pub prefix_len: u8,
    pub gateway: Option<Ipv4Addr>,
    pub arp: BTreeMap<Ipv4Addr, MacAddr>,
    pending: Vec<(Ipv4Addr, Ipv4Packet)>,
    ident: u16,
}

impl Stack {
    pub fn new(mac: MacAddr, ip: Ipv4Addr, net: Ipv4Addr, prefix_len: u8, gateway: Option<Ipv4Addr>) -> Self {
        Stack { mac, ip, net, prefix_len, gateway, arp: BTreeMap::new(), pending: Vec::new(), ident: 0 }
    }

    pub fn on_link(&self, dst: Ipv4Addr) -> bool {
        in_subnet(dst, self.net, self.prefix_len)
    }

    pub fn next_hop(&self, dst: Ipv4Addr) -> Option<Ipv4Addr> {
        if self.on_link(dst) {
            Some(dst)
        } else {
            self.gateway
        }
    }

    pub fn packet(&mut self, dst: Ipv4Addr, protocol: u8, payload: Vec<u8>) -> Ipv4Packet {
        self.ident = self.ident.wrapping_add(1);
        Ipv4Packet::new(self.ip, dst, protocol, DEFAULT_TTL, self.ident, payload)
    }

    pub fn tcp_packet(&mut self, src: Ipv4Addr, dst: Ipv4Addr, seg: &TcpSegment) -> Ipv4Packet {
        let mut p = self.packet(dst, crate::packets::PROTO_TCP, seg.encode());
        p.src = src;
        p.fill_checksum();
        p
    }

    /// Routes `pkt` by destination. Returns `false` when there is no route.
    pub fn send(&mut self, pkt: Ipv4Packet, out: &mut Vec<EthernetFrame>) -> bool {
        match self.next_hop(pkt.dst) {
            Some(hop) => {
                self.send_via(pkt, hop, out);
                true
            }
            None => false,
        }
    }

    /// Sends to `hop`'s MAC, resolving it first if needed.
    pub fn send_via(&mut self, pkt: Ipv4Packet, hop: Ipv4Addr, out: &mut Vec<EthernetFrame>) {
        if let Some(&mac) = self.arp.get(&hop) {
            out.push(EthernetFrame::new(mac, self.mac, EtherType::Ipv4, pkt.encode()));
            return;
        }
        let asked = self.pending.iter().any(|(h, _)| *h == hop);
        self.pending.push((hop, pkt));
        if !asked {
            let req = ArpPacket::request(self.mac, self.ip, hop);
            out.push(EthernetFrame::new(MacAddr::BROADCAST, self.mac, EtherType::Arp, req.encode()));
        }
    }

    /// Learns from replies addressed to us and requests for our address,
    /// answers the latter, and flushes packets waiting on the new entry.
    pub fn on_arp(&mut self, arp: &ArpPacket, out: &mut Vec<EthernetFrame>) {
        if arp.target_ip != self.ip {
            return;
        }
        self.arp.insert(arp.sender_ip, arp.sender_mac);
        if arp.op == ArpOp::Request {
            let reply = arp.reply_to(self.mac);
            out.push(EthernetFrame::new(arp.sender_mac, self.mac, EtherType::Arp, reply.encode()));
        }
        let (ready, rest): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.pending).into_iter().partition(|(h, _)| *h == arp.sender_ip);
        self.pending = rest;
        for (_, pkt) in ready {
            out.push(EthernetFrame::new(arp.sender_mac, self.mac, EtherType::Ipv4, pkt.encode()));
        }
    }

    pub fn accepts(&self, frame: &EthernetFrame) -> bool {
        frame.dst == self.mac || frame.dst.is_broadcast()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct ConnKey {
    pub remote_ip: Ipv4Addr,
    pub remote_port: u16,
    pub local_ip: Ipv4Addr,
    pub local_port: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ServerState {
    SynReceived,
    Established,
    Responded,
}

#[derive(Debug, Clone)]
struct ServerConn {
    state: ServerState,
    snd_nxt: u32,
    rcv_nxt: u32,
    request: Vec<u8>,
}

/// Passive side of the one-request-per-connection TCP used for HTTP: the
/// response carries FIN, the client's FIN is acknowledged and the
/// connection forgotten.
#[derive(Debug, Clone, Default)]
pub(crate) struct TcpServer {
    conns: BTreeMap<ConnKey, ServerConn>,
    next_isn: u32,
}

pub(crate) struct ServerStep {
    pub replies: Vec<TcpSegment>,
    pub request: Option<Vec<u8>>,
}

impl TcpServer {
    fn seg(key: &ConnKey, seq: u32, ack: u32, flags: TcpFlags, payload: Vec<u8>) -> TcpSegment {
        TcpSegment { src_port: key.local_port, dst_port: key.remote_port, seq, ack, flags, payload }
    }

    pub fn on_segment(&mut self, key: ConnKey, seg: &TcpSegment) -> ServerStep {
        let mut step = ServerStep { replies: Vec::new(), request: None };
        if seg.flags.syn && !seg.flags.ack {
            self.next_isn = self.next_isn.wrapping_add(100_000);
            let isn = self.next_isn;
            let rcv_nxt = seg.seq.wrapping_add(1);
            self.conns.insert(
                key,
                ServerConn {
                    state: ServerState::SynReceived,
                    snd_nxt: isn.wrapping_add(1),
                    rcv_nxt,
                    request: Vec::new(),
                },
            );
            step.replies.push(Self::seg(&key, isn, rcv_nxt, TcpFlags::SYN_ACK, Vec::new()));
            return step;
        }
        let Some(conn) = self.conns.get_mut(&key) else {
            return step;
        };
        if seg.seq != conn.rcv_nxt {
            return step;
        }
        if conn.state == ServerState::SynReceived && seg.flags.ack {
            conn.state = ServerState::Established;
        }
        if !seg.payload.is_empty() && conn.state == ServerState::Established {
            conn.rcv_nxt = conn.rcv_nxt.wrapping_add(seg.payload.len() as u32);
            conn.request.extend_from_slice(&seg.payload);
            step.request = Some(conn.request.clone());
        }
        if seg.flags.fin {
            conn.rcv_nxt = conn.rcv_nxt.wrapping_add(1);
            step.replies.push(Self::seg(&key, conn.snd_nxt, conn.rcv_nxt, TcpFlags::ACK, Vec::new()));
            self.conns.remove(&key);
        }
        step
    }

    /// The response segment for `key`, carrying FIN.
    pub fn respond(&mut self, key: ConnKey, data: Vec<u8>) -> Option<TcpSegment> {
        let conn = self.conns.get_mut(&key)?;
        if conn.state != ServerState::Established {
            return None;
        }
        conn.state = ServerState::Responded;
        let seq = conn.snd_nxt;
        conn.snd_nxt = seq.wrapping_add(data.len() as u32 + 1);
        Some(Self::seg(&key, seq, conn.rcv_nxt, TcpFlags::FIN_ACK, data))
    }

    #[cfg(test)]
    pub fn open_connections(&self) -> usize {
        self.conns.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ClientState {
    SynSent,
    AwaitingResponse,
    Closing,
    Closed,
}

/// Active side: SYN, then ACK and the request, then the FIN-bearing
/// response is answered with FIN|ACK.
#[derive(Debug, Clone)]
pub(crate) struct ClientConn {
    pub key: ConnKey,
    pub state: ClientState,
    snd_nxt: u32,
    rcv_nxt: u32,
    request: Vec<u8>,
    response: Vec<u8>,
}

pub(crate) struct ClientStep {
    pub send: Vec<TcpSegment>,
    pub response: Option<Vec<u8>>,
}

impl ClientConn {
    pub fn open(key: ConnKey, isn: u32, request: Vec<u8>) -> (Self, TcpSegment) {
        let syn = TcpSegment {
            src_port: key.local_port,
            dst_port: key.remote_port,
            seq: isn,
            ack: 0,
            flags: TcpFlags::SYN,
            payload: Vec::new(),
        };
        let conn = ClientConn {
            key,
            state: ClientState::SynSent,
            snd_nxt: isn.wrapping_add(1),
            rcv_nxt: 0,
            request,
            response: Vec::new(),
        };
        (conn, syn)
    }

    fn seg(&self, flags: TcpFlags, payload: Vec<u8>) -> TcpSegment {
        TcpSegment {
            src_port: self.key.local_port,
            dst_port: self.key.remote_port,
            seq: self.snd_nxt,
            ack: self.rcv_nxt,
            flags,
            payload,
        }
    }

    pub fn on_segment(&mut self, seg: &TcpSegment) -> ClientStep {
        let mut step = ClientStep { send: Vec::new(), response: None };
        match self.state {
            ClientState::SynSent if seg.flags.syn && seg.flags.ack && seg.ack == self.snd_nxt => {
                self.rcv_nxt = seg.seq.wrapping_add(1);
                step.send.push(self.seg(TcpFlags::ACK, Vec::new()));
                let req = std::mem::take(&mut self.request);
                let len = req.len() as u32;
                step.send.push(self.seg(TcpFlags::ACK, req));
                self.snd_nxt = self.snd_nxt.wrapping_add(len);
                self.state = ClientState::AwaitingResponse;
            }
            ClientState::AwaitingResponse if seg.seq == self.rcv_nxt && !seg.flags.syn => {
                self.response.extend_from_slice(&seg.payload);
                self.rcv_nxt = self.rcv_nxt.wrapping_add(seg.payload.len() as u32);
                if seg.flags.fin {
                    self.rcv_nxt = self.rcv_nxt.wrapping_add(1);
                    step.response = Some(std::mem::take(&mut self.response));
                    step.send.push(self.seg(TcpFlags::FIN_ACK, Vec::new()));
                    self.snd_nxt = self.snd_nxt.wrapping_add(1);
                    self.state = ClientState::Closing;
                }
            }
            ClientState::Closing if seg.flags.ack && seg.ack == self.snd_nxt => {
                self.state = ClientState::Closed;
            }
            _ => {}
        }
        step
    }
}
