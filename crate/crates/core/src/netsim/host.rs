use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::net::Ipv4Addr;

use sha2::{Digest, Sha256};
use url::Url;

use crate::packets::{
    ArpPacket, DnsMessage, DomainName, EtherType, EthernetFrame, HttpMessage, Ipv4Packet, Method, TcpSegment,
    UdpDatagram, PROTO_TCP, PROTO_UDP, RCODE_NOERROR,
};
use crate::portal::{login_form, ALREADY_AUTHORIZED_MARKER, LOGIN_FAILED_MARKER, LOGIN_MARKER, LOGIN_OK_MARKER};
use crate::trace::{TraceEvent, TraceKind};

use super::stack::{ClientConn, ClientState, ConnKey, Stack};
use super::{Ctx, EventKey, Timer, World};

const DNS_PORT: u16 = 53;
const FIRST_EPHEMERAL: u16 = 49152;

/// Something a scripted user does.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    /// Fetch a URL, following redirects. With `every`, the fetch is repeated
    /// that many ticks after each completion.
    HttpGet {
        url: String,
        max_redirects: Option<u32>,
        every: Option<u64>,
    },
    /// Submit credentials to the origin of the last page seen.
    Login {
        user: String,
        password: String,
    },
    DnsQuery {
        name: DomainName,
    },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::HttpGet { url, .. } => write!(f, "http_get {url}"),
            Action::Login { user, .. } => write!(f, "login {user}"),
            Action::DnsQuery { name } => write!(f, "dns_query {name}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostErrorKind {
    Timeout,
    NxDomain,
    RedirectLimit,
    NoRoute,
    NoResolver,
    BadUrl,
    BadResponse,
    DnsSourceMismatch,
}

impl HostErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HostErrorKind::Timeout => "timeout",
            HostErrorKind::NxDomain => "nxdomain",
            HostErrorKind::RedirectLimit => "redirect_limit",
            HostErrorKind::NoRoute => "no_route",
            HostErrorKind::NoResolver => "no_resolver",
            HostErrorKind::BadUrl => "bad_url",
            HostErrorKind::BadResponse => "bad_response",
            HostErrorKind::DnsSourceMismatch => "dns_source_mismatch",
        }
    }
}

impl fmt::Display for HostErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hop {
    pub url: String,
    pub server: Ipv4Addr,
    pub status: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Response { status: u16, body: String, page: String },
    Resolved { addr: Option<Ipv4Addr> },
    Failed(HostErrorKind),
}

/// One completed action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpRecord {
    pub action: Action,
    pub started: u64,
    pub finished: u64,
    pub hops: Vec<Hop>,
    pub outcome: Outcome,
}

impl OpRecord {
    pub fn redirects(&self) -> usize {
        self.hops.iter().filter(|h| h.status == 302).count()
    }

    pub fn response(&self) -> Option<(u16, &str)> {
        match &self.outcome {
            Outcome::Response { status, body, .. } => Some((*status, body)),
            _ => None,
        }
    }
}

/// Where a DNS query went and where its answer came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsObservation {
    pub tick: u64,
    pub name: DomainName,
    pub query_dst: (Ipv4Addr, u16),
    pub reply_src: (Ipv4Addr, u16),
    pub answer: Option<Ipv4Addr>,
}

pub(crate) fn digest(body: &str) -> String {
    let d = Sha256::digest(body.as_bytes());
    d.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Teaching-level label for a response body.
pub(crate) fn classify(status: u16, body: &str, world: &World) -> String {
    if status == 302 {
        return "redirect".into();
    }
    if body.contains(LOGIN_OK_MARKER) || body.contains(LOGIN_FAILED_MARKER) {
        return "login-result".into();
    }
    if body.contains(ALREADY_AUTHORIZED_MARKER) {
        return "already-authorized".into();
    }
    if body.contains(LOGIN_MARKER) {
        return "login".into();
    }
    match world.sites.values().find(|s| s.body == body) {
        Some(site) => format!("site:{}", site.domain),
        None => "other".into(),
    }
}

#[derive(Debug, Clone)]
struct Request {
    url: Url,
    method: Method,
    host: String,
    path: String,
    body: String,
}

#[derive(Debug, Clone)]
enum Stage {
    Resolving { name: DomainName, id: u16, port: u16, server: Ipv4Addr },
    Connecting { port: u16 },
}

#[derive(Debug, Clone)]
struct Op {
    action: Action,
    started: u64,
    hops: Vec<Hop>,
    stage: Stage,
    req: Option<Request>,
    redirects: u32,
    max_redirects: u32,
}

#[derive(Debug, Clone)]
pub(crate) struct Host {
    pub name: String,
    pub stack: Stack,
    pub resolver: Option<Ipv4Addr>,
    pub portal_login_url: String,
    dns_cache: BTreeMap<DomainName, (Ipv4Addr, u64)>,
    queue: VecDeque<Action>,
    op: Option<Op>,
    serial: u64,
    last_page: Option<(Ipv4Addr, String)>,
    next_port: u16,
    next_dns_id: u16,
    conns: BTreeMap<u16, ClientConn>,
    pub(crate) timeout_key: Option<EventKey>,
    pub records: Vec<OpRecord>,
    pub dns_log: Vec<DnsObservation>,
}

impl Host {
    pub fn new(name: String, stack: Stack, resolver: Option<Ipv4Addr>, portal_login_url: String) -> Self {
        let seed = u16::from(stack.mac.0[5]);
        Host {
            name,
            stack,
            resolver,
            portal_login_url,
            dns_cache: BTreeMap::new(),
            queue: VecDeque::new(),
            op: None,
            serial: 0,
            last_page: None,
            next_port: FIRST_EPHEMERAL,
            next_dns_id: seed << 8,
            conns: BTreeMap::new(),
            timeout_key: None,
            records: Vec::new(),
            dns_log: Vec::new(),
        }
    }

    fn ephemeral(&mut self) -> u16 {
        let p = self.next_port;
        self.next_port = if p == u16::MAX { FIRST_EPHEMERAL } else { p + 1 };
        p
    }

    fn event(&self, ctx: &Ctx, kind: TraceKind) -> TraceEvent {
        TraceEvent::new(ctx.now, kind).with("node", &self.name)
    }

    pub fn enqueue(&mut self, action: Action, ctx: &mut Ctx) {
        self.queue.push_back(action);
        if self.op.is_none() {
            self.start_next(ctx);
        }
    }

    fn disarm_timeout(&mut self, ctx: &mut Ctx) {
        if let Some(k) = self.timeout_key.take() {
            ctx.cancel.push(k);
        }
    }

    fn arm_timeout(&mut self, ctx: &mut Ctx) {
        self.disarm_timeout(ctx);
        self.serial += 1;
        ctx.timers.push((ctx.world.tcp_timeout, Timer::OpTimeout { serial: self.serial }));
    }

    pub fn on_timeout(&mut self, serial: u64, ctx: &mut Ctx) {
        if serial == self.serial && self.op.is_some() {
            self.fail(HostErrorKind::Timeout, ctx);
        }
    }

    fn start_next(&mut self, ctx: &mut Ctx) {
        while self.op.is_none() {
            let Some(action) = self.queue.pop_front() else { return };
            self.start(action, ctx);
        }
    }

    fn start(&mut self, action: Action, ctx: &mut Ctx) {
        let max_redirects = match &action {
            Action::HttpGet { max_redirects, .. } => max_redirects.unwrap_or(ctx.world.max_redirects),
            _ => ctx.world.max_redirects,
        };
        // Placeholder stage; replaced before any packet leaves.
        self.op = Some(Op {
            action: action.clone(),
            started: ctx.now,
            hops: Vec::new(),
            stage: Stage::Connecting { port: 0 },
            req: None,
            redirects: 0,
            max_redirects,
        });
        match action {
            Action::HttpGet { url, .. } => self.fetch(&url, Method::Get, String::new(), None, ctx),
            Action::Login { user, password } => {
                let body = login_form(&user, &password);
                match self.last_page.clone() {
                    Some((ip, host)) => {
                        let url = format!("http://{host}/login");
                        self.fetch(&url, Method::Post, body, Some(ip), ctx);
                    }
                    None => {
                        let url = self.portal_login_url.clone();
                        self.fetch(&url, Method::Post, body, None, ctx);
                    }
                }
            }
            Action::DnsQuery { name } => self.query(name, ctx),
        }
    }

    fn fetch(&mut self, url: &str, method: Method, body: String, pinned: Option<Ipv4Addr>, ctx: &mut Ctx) {
        let Ok(url) = Url::parse(url) else {
            return self.fail(HostErrorKind::BadUrl, ctx);
        };
        let Some(host) = url.host_str().map(str::to_string) else {
            return self.fail(HostErrorKind::BadUrl, ctx);
        };
        if url.scheme() != "http" {
            return self.fail(HostErrorKind::BadUrl, ctx);
        }
        let host_header = match url.port() {
            Some(p) => format!("{host}:{p}"),
            None => host.clone(),
        };
        let path = match url.query() {
            Some(q) => format!("{}?{q}", url.path()),
            None => url.path().to_string(),
        };
        let literal = match url.host() {
            Some(url::Host::Ipv4(ip)) => Some(ip),
            _ => None,
        };
        let op = self.op.as_mut().expect("fetch without op");
        op.req = Some(Request { url, method, host: host_header, path, body });
        if let Some(ip) = pinned.or(literal) {
            return self.connect(ip, ctx);
        }
        let Ok(name) = host.parse::<DomainName>() else {
            return self.fail(HostErrorKind::BadUrl, ctx);
        };
        if let Some(&(ip, expires)) = self.dns_cache.get(&name) {
            if ctx.now < expires {
                return self.connect(ip, ctx);
            }
        }
        self.send_query(name, ctx);
    }

    fn query(&mut self, name: DomainName, ctx: &mut Ctx) {
        self.send_query(name, ctx);
    }

    fn send_query(&mut self, name: DomainName, ctx: &mut Ctx) {
        let Some(server) = self.resolver else {
            return self.fail(HostErrorKind::NoResolver, ctx);
        };
        self.next_dns_id = self.next_dns_id.wrapping_add(1);
        let id = self.next_dns_id;
        let port = self.ephemeral();
        let msg = DnsMessage::query_a(id, name.clone());
        let Ok(wire) = msg.encode() else {
            return self.fail(HostErrorKind::BadUrl, ctx);
        };
        let udp = UdpDatagram::new(port, DNS_PORT, wire);
        let pkt = self.stack.packet(server, PROTO_UDP, udp.encode());
        if !self.stack.send(pkt, &mut ctx.frames) {
            return self.fail(HostErrorKind::NoRoute, ctx);
        }
        self.op.as_mut().expect("query without op").stage = Stage::Resolving { name, id, port, server };
        self.arm_timeout(ctx);
    }

    fn connect(&mut self, ip: Ipv4Addr, ctx: &mut Ctx) {
        let port = self.ephemeral();
        let op = self.op.as_mut().expect("connect without op");
        let req = op.req.as_ref().expect("connect without request");
        let mut headers = vec![("Host".to_string(), req.host.clone())];
        if req.method == Method::Post {
            headers.push(("Content-Type".into(), "application/x-www-form-urlencoded".into()));
        }
        let msg = HttpMessage::Request { method: req.method, path: req.path.clone(), headers, body: req.body.clone() };
        let key = ConnKey { remote_ip: ip, remote_port: 80, local_ip: self.stack.ip, local_port: port };
        let (conn, syn) = ClientConn::open(key, u32::from(port) << 16, msg.render());
        op.stage = Stage::Connecting { port };
        self.conns.insert(port, conn);
        let pkt = self.stack.tcp_packet(self.stack.ip, ip, &syn);
        if !self.stack.send(pkt, &mut ctx.frames) {
            return self.fail(HostErrorKind::NoRoute, ctx);
        }
        self.arm_timeout(ctx);
    }

    fn finish(&mut self, outcome: Outcome, ctx: &mut Ctx) {
        let Some(op) = self.op.take() else { return };
        self.serial += 1;
        self.disarm_timeout(ctx);
        if let Outcome::Failed(kind) = &outcome {
            ctx.trace.push(self.event(ctx, TraceKind::HostError).with("action", &op.action).with("error", kind));
        }
        if let Action::HttpGet { every: Some(n), .. } = &op.action {
            ctx.timers.push((*n, Timer::Repeat(op.action.clone())));
        }
        self.records.push(OpRecord {
            action: op.action,
            started: op.started,
            finished: ctx.now,
            hops: op.hops,
            outcome,
        });
        self.start_next(ctx);
    }

    fn fail(&mut self, kind: HostErrorKind, ctx: &mut Ctx) {
        self.finish(Outcome::Failed(kind), ctx);
    }

    pub fn receive(&mut self, frame: &EthernetFrame, ctx: &mut Ctx) {
        if !self.stack.accepts(frame) {
            return;
        }
        match frame.ethertype {
            EtherType::Arp => {
                if let Ok(arp) = ArpPacket::decode(&frame.payload) {
                    self.stack.on_arp(&arp, &mut ctx.frames);
                }
            }
            EtherType::Ipv4 => {
                let Ok(pkt) = Ipv4Packet::decode(&frame.payload) else { return };
                if pkt.dst != self.stack.ip {
                    return;
                }
                match pkt.protocol {
                    PROTO_UDP => {
                        if let Ok(udp) = UdpDatagram::decode(&pkt.payload) {
                            self.on_udp(&pkt, &udp, ctx);
                        }
                    }
                    PROTO_TCP => {
                        if let Ok(seg) = TcpSegment::decode(&pkt.payload) {
                            self.on_tcp(&pkt, &seg, ctx);
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    fn on_udp(&mut self, pkt: &Ipv4Packet, udp: &UdpDatagram, ctx: &mut Ctx) {
        let Some(Op { stage: Stage::Resolving { name, id, port, server }, .. }) = self.op.clone() else {
            return;
        };
        if udp.dst_port != port {
            return;
        }
        let Ok(msg) = DnsMessage::decode(&udp.payload) else { return };
        if msg.id != id {
            return;
        }
        let answer = msg.answers.iter().find(|r| r.name == name).and_then(|r| r.a_addr().map(|a| (a, r.ttl)));
        self.dns_log.push(DnsObservation {
            tick: ctx.now,
            name: name.clone(),
            query_dst: (server, DNS_PORT),
            reply_src: (pkt.src, udp.src_port),
            answer: answer.map(|a| a.0),
        });
        if (pkt.src, udp.src_port) != (server, DNS_PORT) {
            return self.fail(HostErrorKind::DnsSourceMismatch, ctx);
        }
        let answer = if msg.rcode == RCODE_NOERROR { answer } else { None };
        if let Some((ip, ttl)) = answer {
            self.dns_cache.insert(name.clone(), (ip, ctx.now + u64::from(ttl)));
        }
        let is_query = matches!(self.op.as_ref().map(|o| &o.action), Some(Action::DnsQuery { .. }))
            && self.op.as_ref().is_some_and(|o| o.req.is_none());
        if is_query {
            return self.finish(Outcome::Resolved { addr: answer.map(|a| a.0) }, ctx);
        }
        match answer {
            Some((ip, _)) => self.connect(ip, ctx),
            None => self.fail(HostErrorKind::NxDomain, ctx),
        }
    }

    fn on_tcp(&mut self, pkt: &Ipv4Packet, seg: &TcpSegment, ctx: &mut Ctx) {
        let Some(conn) = self.conns.get_mut(&seg.dst_port) else { return };
        if (conn.key.remote_ip, conn.key.remote_port) != (pkt.src, seg.src_port) {
            return;
        }
        let was_syn_sent = conn.state == ClientState::SynSent;
        let step = conn.on_segment(seg);
        let (remote, port) = (conn.key.remote_ip, conn.key.local_port);
        if conn.state == ClientState::Closed {
            self.conns.remove(&port);
        }
        let current = matches!(self.op, Some(Op { stage: Stage::Connecting { port: p, .. }, .. }) if p == port);
        if was_syn_sent && !step.send.is_empty() && current {
            let req = self.op.as_ref().and_then(|o| o.req.as_ref()).expect("connected without request");
            ctx.trace.push(
                self.event(ctx, TraceKind::HttpTx)
                    .with("conn", port)
                    .with("dst", format!("{remote}:80"))
                    .with("host", &req.host)
                    .with("method", req.method)
                    .with("path", &req.path),
            );
        }
        for s in &step.send {
            let out = self.stack.tcp_packet(self.stack.ip, remote, s);
            self.stack.send(out, &mut ctx.frames);
        }
        if let (Some(bytes), true) = (step.response, current) {
            self.on_response(port, remote, &bytes, ctx);
        }
    }

    fn on_response(&mut self, port: u16, remote: Ipv4Addr, bytes: &[u8], ctx: &mut Ctx) {
        let Ok(msg) = HttpMessage::parse(bytes) else {
            return self.fail(HostErrorKind::BadResponse, ctx);
        };
        let Some(status) = msg.status() else {
            return self.fail(HostErrorKind::BadResponse, ctx);
        };
        let page = classify(status, msg.body(), ctx.world);
        let mut ev = self
            .event(ctx, TraceKind::HttpRx)
            .with("conn", port)
            .with("digest", digest(msg.body()))
            .with("page", &page)
            .with("status", status);
        if let Some((name, role)) = ctx.world.responders.get(&(self.stack.ip, port)) {
            ev = ev.with("from", name).with("role", role.as_str());
        }
        if let Some(loc) = msg.header("location") {
            ev = ev.with("location", loc);
        }
        ctx.trace.push(ev);

        let op = self.op.as_mut().expect("response without op");
        let req = op.req.clone().expect("response without request");
        op.hops.push(Hop { url: req.url.to_string(), server: remote, status });
        if status == 302 {
            let Some(next) = msg.header("location").and_then(|l| req.url.join(l).ok()) else {
                return self.fail(HostErrorKind::BadResponse, ctx);
            };
            if op.redirects >= op.max_redirects {
                return self.fail(HostErrorKind::RedirectLimit, ctx);
            }
            op.redirects += 1;
            return self.fetch(next.as_str(), Method::Get, String::new(), None, ctx);
        }
        if status == 200 {
            self.last_page = Some((remote, req.host.clone()));
        }
        let body = msg.body().to_string();
        self.finish(Outcome::Response { status, body, page }, ctx);
    }

    /// Sends a prebuilt frame as-is.
    pub fn inject(&mut self, frame: EthernetFrame, ctx: &mut Ctx) {
        ctx.frames.push(frame);
    }
}
