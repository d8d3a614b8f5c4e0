use std::collections::BTreeMap;

use crate::auth::{AuthClient, AuthCommand, ReplyStatus, AUTH_PORT};
use crate::dns_engine::{DnsEngine, RewriteRuleSet};
use crate::packets::{
    ArpPacket, DnsMessage, EtherType, EthernetFrame, HttpError, HttpMessage, Ipv4Packet, MacAddr, TcpFlags, TcpSegment,
    UdpDatagram, PROTO_TCP, PROTO_UDP,
};
use crate::portal::{Portal, PortalSession, SessionState};
use crate::trace::{TraceEvent, TraceKind};

use super::stack::{ConnKey, Stack, TcpServer};
use super::topology::HostRole;
use super::{Ctx, Timer};

const DNS_PORT: u16 = 53;
const HTTP_PORT: u16 = 80;
/// Ticks the portal waits for the controller to accept before retrying.
pub(crate) const AUTH_RETRY_TICKS: u64 = 16;
pub(crate) const PORTAL_AUTH_PORT: u16 = 40000;
const PORTAL_AUTH_ISN: u32 = 7_000_000;

fn arp_or_ipv4(stack: &mut Stack, frame: &EthernetFrame, ctx: &mut Ctx) -> Option<Ipv4Packet> {
    if !stack.accepts(frame) {
        return None;
    }
    match frame.ethertype {
        EtherType::Arp => {
            if let Ok(arp) = ArpPacket::decode(&frame.payload) {
                stack.on_arp(&arp, &mut ctx.frames);
            }
            None
        }
        EtherType::Ipv4 if frame.dst == stack.mac => Ipv4Packet::decode(&frame.payload).ok(),
        EtherType::Ipv4 => None,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DnsServer {
    pub name: String,
    pub stack: Stack,
    pub engine: DnsEngine,
    /// Send every reply through the gateway so it can undo DNAT.
    pub via_gateway: bool,
}

impl DnsServer {
    pub fn receive(&mut self, frame: &EthernetFrame, ctx: &mut Ctx) {
        let Some(pkt) = arp_or_ipv4(&mut self.stack, frame, ctx) else { return };
        if pkt.dst != self.stack.ip || pkt.protocol != PROTO_UDP {
            return;
        }
        let Ok(udp) = UdpDatagram::decode(&pkt.payload) else { return };
        if udp.dst_port != DNS_PORT {
            return;
        }
        let Ok(query) = DnsMessage::decode(&udp.payload) else { return };
        let authorized = ctx.ctrl.auth().is_authorized(frame.src);
        let answer = self.engine.answer(&query, authorized);
        let Ok(wire) = answer.message.encode() else { return };
        let rec = answer.message.answers.first();
        let name = query.questions.first().map_or_else(|| "-".to_string(), |q| q.qname.to_string());
        ctx.trace.push(
            TraceEvent::new(ctx.now, TraceKind::DnsAnswer)
                .with("answer", rec.and_then(|r| r.a_addr()).map_or_else(|| "-".to_string(), |a| a.to_string()))
                .with("client", format!("{}:{}", pkt.src, udp.src_port))
                .with("id", query.id)
                .with("mode", self.engine.mode.name())
                .with("name", name)
                .with("node", &self.name)
                .with("rcode", answer.message.rcode)
                .with("spoofed", answer.spoofed)
                .with("ttl", rec.map_or(0, |r| r.ttl)),
        );
        let reply = UdpDatagram::new(DNS_PORT, udp.src_port, wire);
        let out = self.stack.packet(pkt.src, PROTO_UDP, reply.encode());
        match (self.via_gateway, self.stack.gateway) {
            (true, Some(gw)) => self.stack.send_via(out, gw, &mut ctx.frames),
            _ => {
                self.stack.send(out, &mut ctx.frames);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum AuthConn {
    Disabled,
    Connecting { attempts: u8 },
    Established { snd_nxt: u32, rcv_nxt: u32 },
    Failed,
}

#[derive(Debug, Clone)]
struct Held {
    key: ConnKey,
    response: HttpMessage,
}

#[derive(Debug, Clone)]
pub(crate) struct PortalServer {
    pub name: String,
    pub stack: Stack,
    pub portal: Portal,
    tcp: TcpServer,
    pub auth: AuthConn,
    client: AuthClient,
    queued: Vec<AuthCommand>,
    held: BTreeMap<MacAddr, (PortalSession, Vec<Held>)>,
}

impl PortalServer {
    pub fn new(name: String, stack: Stack, portal: Portal, channel: bool) -> Self {
        PortalServer {
            name,
            stack,
            portal,
            tcp: TcpServer::default(),
            auth: if channel { AuthConn::Connecting { attempts: 0 } } else { AuthConn::Disabled },
            client: AuthClient::default(),
            queued: Vec::new(),
            held: BTreeMap::new(),
        }
    }

    fn auth_segment(&self, seq: u32, ack: u32, flags: TcpFlags, payload: Vec<u8>) -> Vec<u8> {
        TcpSegment { src_port: PORTAL_AUTH_PORT, dst_port: AUTH_PORT, seq, ack, flags, payload }.encode()
    }

    fn send_syn(&mut self, ctx: &mut Ctx) {
        ctx.auth.push(self.auth_segment(PORTAL_AUTH_ISN, 0, TcpFlags::SYN, Vec::new()));
        ctx.timers.push((AUTH_RETRY_TICKS, Timer::AuthRetry));
    }

    pub fn start_auth(&mut self, ctx: &mut Ctx) {
        if let AuthConn::Connecting { attempts: 0 } = self.auth {
            self.auth = AuthConn::Connecting { attempts: 1 };
            self.send_syn(ctx);
        }
    }

    /// One retry, then the channel is given up on.
    pub fn on_auth_retry(&mut self, ctx: &mut Ctx) {
        match self.auth {
            AuthConn::Connecting { attempts: 1 } => {
                self.auth = AuthConn::Connecting { attempts: 2 };
                self.send_syn(ctx);
            }
            AuthConn::Connecting { .. } => {
                self.auth = AuthConn::Failed;
                self.queued.clear();
                let macs: Vec<MacAddr> = self.held.keys().copied().collect();
                for mac in macs {
                    self.release(mac, false, ctx);
                }
            }
            _ => {}
        }
    }

    pub fn on_auth_segment(&mut self, wire: &[u8], ctx: &mut Ctx) {
        let Ok(seg) = TcpSegment::decode(wire) else { return };
        match self.auth {
            AuthConn::Connecting { .. } if seg.flags.syn && seg.flags.ack && seg.ack == PORTAL_AUTH_ISN + 1 => {
                let snd_nxt = PORTAL_AUTH_ISN + 1;
                let rcv_nxt = seg.seq.wrapping_add(1);
                self.auth = AuthConn::Established { snd_nxt, rcv_nxt };
                ctx.auth.push(self.auth_segment(snd_nxt, rcv_nxt, TcpFlags::ACK, Vec::new()));
                for cmd in std::mem::take(&mut self.queued) {
                    self.send_command(cmd, ctx);
                }
            }
            AuthConn::Established { snd_nxt, rcv_nxt } if !seg.payload.is_empty() && seg.seq == rcv_nxt => {
                let rcv_nxt = rcv_nxt.wrapping_add(seg.payload.len() as u32);
                self.auth = AuthConn::Established { snd_nxt, rcv_nxt };
                ctx.auth.push(self.auth_segment(snd_nxt, rcv_nxt, TcpFlags::ACK, Vec::new()));
                for (cmd, line, reply) in self.client.on_bytes(&seg.payload) {
                    let mut ev = TraceEvent::new(ctx.now, TraceKind::AuthLine)
                        .with("dir", "reply")
                        .with("from", "controller")
                        .with("line", &line)
                        .with("to", &self.name);
                    if let Some(cmd) = cmd {
                        ev = ev.with("mac", cmd.mac);
                    }
                    ctx.trace.push(ev);
                    if let Some(cmd) = cmd {
                        let ok = matches!(reply, Ok(r) if r.status == ReplyStatus::Ok);
                        self.release(cmd.mac, ok, ctx);
                    }
                }
            }
            _ => {}
        }
    }

    fn send_command(&mut self, cmd: AuthCommand, ctx: &mut Ctx) {
        let AuthConn::Established { snd_nxt, rcv_nxt } = self.auth else { return };
        let bytes = self.client.send(cmd);
        let len = bytes.len() as u32;
        ctx.auth.push(self.auth_segment(snd_nxt, rcv_nxt, TcpFlags::ACK, bytes));
        self.auth = AuthConn::Established { snd_nxt: snd_nxt.wrapping_add(len), rcv_nxt };
    }

    /// Answers every response waiting on `mac`'s authorization.
    fn release(&mut self, mac: MacAddr, ok: bool, ctx: &mut Ctx) {
        let Some((session, held)) = self.held.remove(&mac) else { return };
        if ok {
            self.portal.commit(session);
        }
        for h in held {
            let response = if ok { h.response } else { unavailable() };
            self.respond(h.key, response, ctx);
        }
    }

    fn respond(&mut self, key: ConnKey, response: HttpMessage, ctx: &mut Ctx) {
        let Some(seg) = self.tcp.respond(key, response.render()) else { return };
        ctx.world.responders.insert((key.remote_ip, key.remote_port), (self.name.clone(), HostRole::Portal));
        let pkt = self.stack.tcp_packet(key.local_ip, key.remote_ip, &seg);
        self.stack.send(pkt, &mut ctx.frames);
    }

    pub fn receive(&mut self, frame: &EthernetFrame, ctx: &mut Ctx) {
        let Some(pkt) = arp_or_ipv4(&mut self.stack, frame, ctx) else { return };
        if pkt.protocol != PROTO_TCP {
            return;
        }
        let Ok(seg) = TcpSegment::decode(&pkt.payload) else { return };
        if seg.dst_port != HTTP_PORT {
            return;
        }
        // Any destination address is accepted: steered traffic keeps the
        // address the client meant, and replies are sourced from it.
        let key = ConnKey { remote_ip: pkt.src, remote_port: seg.src_port, local_ip: pkt.dst, local_port: HTTP_PORT };
        let step = self.tcp.on_segment(key, &seg);
        for s in step.replies {
            let out = self.stack.tcp_packet(key.local_ip, key.remote_ip, &s);
            self.stack.send(out, &mut ctx.frames);
        }
        let Some(bytes) = step.request else { return };
        let req = match HttpMessage::parse(&bytes) {
            Ok(req @ HttpMessage::Request { .. }) => req,
            Err(HttpError::Truncated) => return,
            _ => return self.respond(key, HttpMessage::response(400, "BAD-REQUEST"), ctx),
        };
        let mac = frame.src;
        let session = self.portal.session(mac, pkt.src);
        let outcome = self.portal.handle(&session, &req);
        if outcome.command.is_none() {
            return self.respond(key, outcome.response, ctx);
        }
        if let Some((_, held)) = self.held.get_mut(&mac) {
            held.push(Held { key, response: outcome.response });
            return;
        }
        let cmd = outcome.command.expect("checked above");
        match self.auth {
            AuthConn::Disabled | AuthConn::Failed => self.respond(key, unavailable(), ctx),
            AuthConn::Connecting { .. } => {
                self.held.insert(mac, (outcome.session, vec![Held { key, response: outcome.response }]));
                self.queued.push(cmd);
            }
            AuthConn::Established { .. } => {
                self.held.insert(mac, (outcome.session, vec![Held { key, response: outcome.response }]));
                self.send_command(cmd, ctx);
            }
        }
    }

    pub fn logged_in(&self) -> impl Iterator<Item = MacAddr> + '_ {
        self.portal.sessions().filter(|s| s.state == SessionState::LoggedIn).map(|s| s.client_mac)
    }
}

fn unavailable() -> HttpMessage {
    HttpMessage::response(503, "AUTH-UNAVAILABLE")
}

#[derive(Debug, Clone)]
pub(crate) struct Site {
    pub domain: String,
    pub body: String,
}

#[derive(Debug, Clone)]
pub(crate) struct NatGateway {
    pub name: String,
    pub stack: Stack,
    pub rules: Option<RewriteRuleSet>,
    web: TcpServer,
}

impl NatGateway {
    pub fn new(name: String, stack: Stack, rules: Option<RewriteRuleSet>) -> Self {
        NatGateway { name, stack, rules, web: TcpServer::default() }
    }

    fn error(&self, ctx: &mut Ctx, error: &str, pkt: &Ipv4Packet, src: MacAddr) {
        ctx.trace.push(
            TraceEvent::new(ctx.now, TraceKind::HostError)
                .with("dst", pkt.dst)
                .with("error", error)
                .with("node", &self.name)
                .with("src", src),
        );
    }

    fn forward(&mut self, mut pkt: Ipv4Packet, ctx: &mut Ctx) {
        if pkt.ttl <= 1 {
            return;
        }
        pkt.ttl -= 1;
        pkt.fill_checksum();
        self.stack.send(pkt, &mut ctx.frames);
    }

    pub fn receive(&mut self, frame: &EthernetFrame, ctx: &mut Ctx) {
        let Some(pkt) = arp_or_ipv4(&mut self.stack, frame, ctx) else { return };
        let policy = ctx.ctrl.policy();
        let permitted = ctx.ctrl.is_exempt(frame.src)
            || policy.walled_garden.contains(&pkt.dst)
            || pkt.l4_dst_port() == Some(DNS_PORT);
        if !permitted {
            return self.error(ctx, "policy_violation", &pkt, frame.src);
        }
        if pkt.dst == self.stack.ip {
            return;
        }
        if let Some(rules) = self.rules.as_mut() {
            let r = rules.apply_dnat(&pkt);
            if r.rewritten {
                return self.forward(r.packet, ctx);
            }
        }
        if self.stack.on_link(pkt.dst) {
            let pkt = match self.rules.as_mut() {
                Some(rules) => rules.undo_dnat(&pkt).packet,
                None => pkt,
            };
            return self.forward(pkt, ctx);
        }
        match ctx.world.sites.get(&pkt.dst).cloned() {
            Some(site) => self.serve(&pkt, &site, ctx),
            None => self.error(ctx, "no_route", &pkt, frame.src),
        }
    }

    /// The upstream web server at `pkt.dst`, one hop behind the gateway.
    fn serve(&mut self, pkt: &Ipv4Packet, site: &Site, ctx: &mut Ctx) {
        if pkt.protocol != PROTO_TCP {
            return;
        }
        let Ok(seg) = TcpSegment::decode(&pkt.payload) else { return };
        if seg.dst_port != HTTP_PORT {
            return;
        }
        let key = ConnKey { remote_ip: pkt.src, remote_port: seg.src_port, local_ip: pkt.dst, local_port: HTTP_PORT };
        let step = self.web.on_segment(key, &seg);
        let mut out = step.replies;
        if let Some(bytes) = step.request {
            let resp = match HttpMessage::parse(&bytes) {
                Ok(HttpMessage::Request { .. }) => HttpMessage::response(200, site.body.clone()),
                Err(HttpError::Truncated) => HttpMessage::response(400, "BAD-REQUEST"),
                _ => HttpMessage::response(400, "BAD-REQUEST"),
            };
            if let Some(s) = self.web.respond(key, resp.render()) {
                ctx.world.responders.insert((key.remote_ip, key.remote_port), (self.name.clone(), HostRole::Nat));
                out.push(s);
            }
        }
        for s in out {
            let p = self.stack.tcp_packet(key.local_ip, key.remote_ip, &s);
            self.stack.send(p, &mut ctx.frames);
        }
    }
}

/// Controller end of the auth channel.
#[derive(Debug, Clone)]
pub(crate) struct ControllerEndpoint {
    pub listen_at: u64,
    pub state: AuthConn,
    pub server: crate::auth::AuthServer,
}

pub(crate) const CONTROLLER_AUTH_ISN: u32 = 9_000_000;

impl ControllerEndpoint {
    pub fn segment(seq: u32, ack: u32, flags: TcpFlags, payload: Vec<u8>) -> Vec<u8> {
        TcpSegment { src_port: AUTH_PORT, dst_port: PORTAL_AUTH_PORT, seq, ack, flags, payload }.encode()
    }
}
