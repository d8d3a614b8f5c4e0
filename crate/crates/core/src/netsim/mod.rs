//! Deterministic discrete-event network: topology, host stacks, the
//! captive servers, the NAT gateway with its upstream sites, and the clock.

mod host;
mod queue;
mod servers;
mod stack;
mod topology;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::auth::AuthServer;
use crate::dns_engine::{DnsEngine, DnsMode, RewriteRule, RewriteRuleSet, ZoneDb};
use crate::fabric::{Controller, FabricEvent, FlowModOp, GatePolicy, PortId, SimAction, SwitchId};
use crate::packets::{
    ArpOp, ArpPacket, DomainName, EtherType, EthernetFrame, Ipv4Packet, MacAddr, TcpSegment, UdpDatagram, PROTO_TCP,
    PROTO_UDP,
};
use crate::portal::{CaptureTechnique, CredentialStore, Portal};
use crate::trace::{render_trace, TraceEvent, TraceKind};

pub use host::{Action, DnsObservation, Hop, HostErrorKind, OpRecord, Outcome};
pub use queue::{EventKey, EventQueue};
pub use topology::{Endpoint, HostRole, HostSpec, LinkSpec, SiteSpec, SwitchSpec, Topology, TopologyError};

use host::Host;
use servers::{AuthConn, ControllerEndpoint, DnsServer, NatGateway, PortalServer, Site, CONTROLLER_AUTH_ISN};
use stack::Stack;

/// Ticks for one hop on the portal-to-controller control link.
pub const AUTH_LINK_LATENCY: u64 = 1;
pub const DEFAULT_TCP_TIMEOUT: u64 = 64;
pub const DEFAULT_MAX_REDIRECTS: u32 = 5;
pub const DEFAULT_BUDGET: u64 = 10_000;
/// Resolver configured on clients in DNAT mode when none is given.
pub const DEFAULT_PUBLIC_RESOLVER: Ipv4Addr = Ipv4Addr::new(8, 8, 8, 8);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DnsModeSpec {
    SpoofAll,
    Proxy,
    /// Rules run on the gateway; empty means `udp dport=53 -> <dns server>`.
    Dnat(Vec<RewriteRule>),
}

impl DnsModeSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DnsModeSpec::SpoofAll => "spoof_all",
            DnsModeSpec::Proxy => "proxy",
            DnsModeSpec::Dnat(_) => "dnat",
        }
    }

    pub fn pairs_with(&self, technique: CaptureTechnique) -> bool {
        matches!(
            (technique, self),
            (CaptureTechnique::DnsSpoofing, DnsModeSpec::SpoofAll)
                | (CaptureTechnique::IpForgery, DnsModeSpec::Proxy | DnsModeSpec::Dnat(_))
        )
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub technique: CaptureTechnique,
    pub dns_mode: DnsModeSpec,
    pub portal_domain: DomainName,
    pub credentials: CredentialStore,
    /// Genuine records in addition to the upstream sites.
    pub zone: ZoneDb,
    pub resolver: Option<Ipv4Addr>,
    pub controller_listen_at: u64,
    pub auth_channel: bool,
    pub tcp_timeout: u64,
    pub max_redirects: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            technique: CaptureTechnique::DnsSpoofing,
            dns_mode: DnsModeSpec::SpoofAll,
            portal_domain: crate::dns_engine::DEFAULT_PORTAL_DOMAIN.parse().expect("valid default domain"),
            credentials: CredentialStore::default(),
            zone: ZoneDb::new(),
            resolver: None,
            controller_listen_at: 0,
            auth_channel: true,
            tcp_timeout: DEFAULT_TCP_TIMEOUT,
            max_redirects: DEFAULT_MAX_REDIRECTS,
        }
    }
}

impl SimConfig {
    pub fn ip_forgery() -> Self {
        SimConfig { technique: CaptureTechnique::IpForgery, dns_mode: DnsModeSpec::Proxy, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("technique {technique} cannot be used with DNS mode {mode}")]
    Pairing { technique: &'static str, mode: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("no host named {0:?}")]
    UnknownHost(String),
    #[error("{0:?} is not a user host")]
    NotAUser(String),
    #[error(transparent)]
    Livelock(#[from] Livelock),
}

/// The tick budget ran out with events still queued.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("livelock: tick budget {budget} exhausted at tick {tick} with {pending} pending events ({summary})")]
pub struct Livelock {
    pub budget: u64,
    pub tick: u64,
    pub pending: usize,
    pub summary: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    pub enqueued: u64,
    pub delivered: u64,
    pub events: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub final_tick: u64,
    pub events: u64,
}

#[derive(Debug, Clone)]
pub(crate) enum Timer {
    OpTimeout { serial: u64 },
    Repeat(Action),
    AuthRetry,
}

#[derive(Debug, Clone)]
enum Event {
    Deliver { node: usize, port: u16, frame: EthernetFrame },
    Script { node: usize, action: Action },
    Inject { node: usize, frame: EthernetFrame },
    Timer { node: usize, timer: Timer },
    AuthStart,
    AuthToController(Vec<u8>),
    AuthToPortal(Vec<u8>),
}

impl Event {
    fn label(&self) -> &'static str {
        match self {
            Event::Deliver { .. } => "deliver",
            Event::Script { .. } => "script",
            Event::Inject { .. } => "inject",
            Event::Timer { .. } => "timer",
            Event::AuthStart | Event::AuthToController(_) | Event::AuthToPortal(_) => "auth",
        }
    }
}

/// Read-mostly state shared with node handlers.
#[derive(Debug, Clone)]
pub(crate) struct World {
    pub sites: BTreeMap<Ipv4Addr, Site>,
    /// Which server answered a client connection, keyed by client address.
    pub responders: BTreeMap<(Ipv4Addr, u16), (String, HostRole)>,
    pub tcp_timeout: u64,
    pub max_redirects: u32,
}

/// Output collected while one node handles one event.
pub(crate) struct Ctx<'a> {
    pub now: u64,
    pub frames: Vec<EthernetFrame>,
    pub trace: Vec<TraceEvent>,
    pub timers: Vec<(u64, Timer)>,
    pub auth: Vec<Vec<u8>>,
    pub cancel: Vec<EventKey>,
    pub world: &'a mut World,
    pub ctrl: &'a Controller,
}

#[derive(Debug, Clone)]
enum Node {
    Host(Box<Host>),
    Switch(SwitchId),
    Dns(Box<DnsServer>),
    Portal(Box<PortalServer>),
    Nat(Box<NatGateway>),
}

#[derive(Debug, Clone, Copy)]
struct Link {
    a: (usize, u16),
    b: (usize, u16),
    latency: u64,
}

/// A built network ready to run.
#[derive(Debug, Clone)]
pub struct Network {
    queue: EventQueue<Event>,
    nodes: Vec<Node>,
    names: Vec<String>,
    index: BTreeMap<String, usize>,
    links: Vec<Link>,
    ports: BTreeMap<(usize, u16), usize>,
    controller: Controller,
    endpoint: ControllerEndpoint,
    portal: Option<usize>,
    world: World,
    trace: Vec<TraceEvent>,
    counters: Counters,
}

impl Network {
    pub fn new(topo: &Topology, config: &SimConfig) -> Result<Self, BuildError> {
        topo.validate()?;
        if !config.dns_mode.pairs_with(config.technique) {
            return Err(BuildError::Pairing { technique: config.technique.name(), mode: config.dns_mode.name() });
        }

        let dns = topo.server(HostRole::Dns);
        let portal = topo.server(HostRole::Portal);
        let nat = topo.server(HostRole::Nat);
        let gateway = nat.map(|n| n.ip);
        let portal_ip = portal.map_or(Ipv4Addr::UNSPECIFIED, |p| p.ip);

        let mut genuine = config.zone.clone();
        for s in &topo.sites {
            genuine.insert(s.domain.clone(), s.ip);
        }
        let (mode, nat_rules) = match &config.dns_mode {
            DnsModeSpec::SpoofAll => (DnsMode::SpoofAll { portal_ip }, None),
            DnsModeSpec::Proxy => (DnsMode::Proxy { upstream: genuine.clone() }, None),
            DnsModeSpec::Dnat(rules) => {
                let rules = if rules.is_empty() {
                    let dns_ip = dns.map_or(Ipv4Addr::UNSPECIFIED, |d| d.ip);
                    vec![format!("udp dport=53 -> {dns_ip}").parse().expect("default rule parses")]
                } else {
                    rules.clone()
                };
                let set = RewriteRuleSet::new(rules);
                (DnsMode::Dnat { rules: set.clone(), inner: genuine.clone() }, Some(set))
            }
        };
        let dnat = nat_rules.is_some();
        let resolver = config.resolver.or(if dnat { Some(DEFAULT_PUBLIC_RESOLVER) } else { dns.map(|d| d.ip) });

        let mut policy = GatePolicy { nat_mac: nat.map(|n| n.mac), ..Default::default() };
        for s in [dns, portal, nat].into_iter().flatten() {
            policy.infrastructure.insert(s.mac);
        }
        policy.walled_garden = [dns, portal].into_iter().flatten().map(|s| s.ip).collect::<BTreeSet<_>>();
        if config.technique == CaptureTechnique::IpForgery {
            policy.http_intercept = portal.map(|p| p.mac);
        }
        let mut controller = Controller::new(policy);

        let mut nodes = Vec::new();
        let mut names = Vec::new();
        let mut portal_idx = None;
        let domain = config.portal_domain.to_string();
        let stack =
            |h: &HostSpec| Stack::new(h.mac, h.ip, topo.subnet, topo.prefix_len, gateway.filter(|g| *g != h.ip));
        for h in &topo.hosts {
            let node = match h.role {
                HostRole::User => Node::Host(Box::new(Host::new(
                    h.name.clone(),
                    stack(h),
                    resolver,
                    format!("http://{domain}/login"),
                ))),
                HostRole::Dns => Node::Dns(Box::new(DnsServer {
                    name: h.name.clone(),
                    stack: stack(h),
                    engine: DnsEngine {
                        mode: mode.clone(),
                        portal_ip,
                        portal_domain: config.portal_domain.clone(),
                        genuine: genuine.clone(),
                    },
                    via_gateway: dnat,
                })),
                HostRole::Portal => {
                    portal_idx = Some(nodes.len());
                    let p = Portal::new(config.technique, domain.clone(), config.credentials.clone());
                    Node::Portal(Box::new(PortalServer::new(h.name.clone(), stack(h), p, config.auth_channel)))
                }
                HostRole::Nat => Node::Nat(Box::new(NatGateway::new(h.name.clone(), stack(h), nat_rules.clone()))),
            };
            nodes.push(node);
            names.push(h.name.clone());
        }
        for s in &topo.switches {
            nodes.push(Node::Switch(controller.add_switch(s.name.clone(), s.port_count)));
            names.push(s.name.clone());
        }
        let index: BTreeMap<String, usize> = names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        let mut links = Vec::new();
        let mut ports = BTreeMap::new();
        for l in &topo.links {
            let a = (index[&l.a.node], l.a.port);
            let b = (index[&l.b.node], l.b.port);
            ports.insert(a, links.len());
            ports.insert(b, links.len());
            links.push(Link { a, b, latency: l.latency });
        }
        let sites =
            topo.sites.iter().map(|s| (s.ip, Site { domain: s.domain.to_string(), body: s.body.clone() })).collect();

        let mut net = Network {
            queue: EventQueue::default(),
            nodes,
            names,
            index,
            links,
            ports,
            controller,
            endpoint: ControllerEndpoint {
                listen_at: config.controller_listen_at,
                state: AuthConn::Disabled,
                server: AuthServer::default(),
            },
            portal: portal_idx,
            world: World {
                sites,
                responders: BTreeMap::new(),
                tcp_timeout: config.tcp_timeout.max(1),
                max_redirects: config.max_redirects,
            },
            trace: Vec::new(),
            counters: Counters::default(),
        };
        if portal_idx.is_some() && config.auth_channel {
            net.queue.schedule_at(0, Event::AuthStart);
        }
        Ok(net)
    }

    pub fn now(&self) -> u64 {
        self.queue.now()
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn trace_text(&self) -> String {
        render_trace(&self.trace)
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn controller_mut(&mut self) -> &mut Controller {
        &mut self.controller
    }

    pub fn node_names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn is_user(&self, name: &str) -> bool {
        self.index.get(name).is_some_and(|&i| matches!(self.nodes[i], Node::Host(_)))
    }

    fn host(&self, name: &str) -> Option<&Host> {
        match &self.nodes[*self.index.get(name)?] {
            Node::Host(h) => Some(h),
            _ => None,
        }
    }

    pub fn host_records(&self, name: &str) -> Option<&[OpRecord]> {
        self.host(name).map(|h| h.records.as_slice())
    }

    pub fn dns_log(&self, name: &str) -> Option<&[DnsObservation]> {
        self.host(name).map(|h| h.dns_log.as_slice())
    }

    pub fn host_mac(&self, name: &str) -> Option<MacAddr> {
        self.host(name).map(|h| h.stack.mac)
    }

    /// MACs the portal has recorded as logged in.
    pub fn portal_logins(&self) -> Vec<MacAddr> {
        match self.portal.map(|i| &self.nodes[i]) {
            Some(Node::Portal(p)) => p.logged_in().collect(),
            _ => Vec::new(),
        }
    }

    fn user_index(&self, name: &str) -> Result<usize, SimError> {
        let &i = self.index.get(name).ok_or_else(|| SimError::UnknownHost(name.to_string()))?;
        match self.nodes[i] {
            Node::Host(_) => Ok(i),
            _ => Err(SimError::NotAUser(name.to_string())),
        }
    }

    pub fn schedule(&mut self, at: u64, host: &str, action: Action) -> Result<(), SimError> {
        let node = self.user_index(host)?;
        self.queue.schedule_at(at, Event::Script { node, action });
        Ok(())
    }

    /// Transmits `frame` unchanged from `host` at tick `at`.
    pub fn inject_frame(&mut self, at: u64, host: &str, frame: EthernetFrame) -> Result<(), SimError> {
        let node = self.user_index(host)?;
        self.queue.schedule_at(at, Event::Inject { node, frame });
        Ok(())
    }

    /// Runs until the queue is empty. Events due after `budget` are not run.
    pub fn run_until_idle(&mut self, budget: u64) -> Result<RunSummary, Livelock> {
        while let Some(due) = self.queue.peek_due() {
            if due > budget {
                return Err(self.livelock(budget));
            }
            self.step();
        }
        Ok(RunSummary { final_tick: self.queue.now(), events: self.counters.events })
    }

    /// Schedules a fetch now and runs until `host` finishes it.
    pub fn http_get(&mut self, host: &str, url: &str, max_redirects: Option<u32>) -> Result<OpRecord, SimError> {
        let node = self.user_index(host)?;
        let before = self.host(host).map_or(0, |h| h.records.len());
        let action = Action::HttpGet { url: url.to_string(), max_redirects, every: None };
        self.queue.schedule_at(self.queue.now(), Event::Script { node, action });
        let budget = self.queue.now() + DEFAULT_BUDGET;
        loop {
            if let Some(rec) = self.host(host).and_then(|h| h.records.get(before)) {
                return Ok(rec.clone());
            }
            match self.queue.peek_due() {
                Some(due) if due <= budget => self.step(),
                _ => return Err(SimError::Livelock(self.livelock(budget))),
            }
        }
    }

    fn livelock(&self, budget: u64) -> Livelock {
        let mut kinds: BTreeMap<&str, usize> = BTreeMap::new();
        for (_, e) in self.queue.iter() {
            *kinds.entry(e.label()).or_default() += 1;
        }
        let next = self.queue.iter().next().map(|(k, _)| k.due).unwrap_or(0);
        let summary = kinds.iter().map(|(k, n)| format!("{k}={n}")).collect::<Vec<_>>().join(" ");
        Livelock {
            budget,
            tick: self.queue.now(),
            pending: self.queue.len(),
            summary: format!("{summary}; next due at {next}"),
        }
    }

    fn step(&mut self) {
        let Some((_, event)) = self.queue.pop() else { return };
        self.counters.events += 1;
        match event {
            Event::Deliver { node, port, frame } => self.deliver(node, port, frame),
            Event::Script { node, action } => self.run_node(node, |n, ctx| {
                if let Node::Host(h) = n {
                    h.enqueue(action, ctx);
                }
            }),
            Event::Inject { node, frame } => self.run_node(node, |n, ctx| {
                if let Node::Host(h) = n {
                    h.inject(frame, ctx);
                }
            }),
            Event::Timer { node, timer } => self.run_node(node, |n, ctx| match (n, timer) {
                (Node::Host(h), Timer::OpTimeout { serial }) => h.on_timeout(serial, ctx),
                (Node::Host(h), Timer::Repeat(action)) => h.enqueue(action, ctx),
                (Node::Portal(p), Timer::AuthRetry) => p.on_auth_retry(ctx),
                _ => {}
            }),
            Event::AuthStart => {
                if let Some(i) = self.portal {
                    self.run_node(i, |n, ctx| {
                        if let Node::Portal(p) = n {
                            p.start_auth(ctx);
                        }
                    });
                }
            }
            Event::AuthToPortal(wire) => {
                if let Some(i) = self.portal {
                    self.run_node(i, |n, ctx| {
                        if let Node::Portal(p) = n {
                            p.on_auth_segment(&wire, ctx);
                        }
                    });
                }
            }
            Event::AuthToController(wire) => self.controller_segment(&wire),
        }
    }

    fn run_node(&mut self, idx: usize, f: impl FnOnce(&mut Node, &mut Ctx)) {
        let mut ctx = Ctx {
            now: self.queue.now(),
            frames: Vec::new(),
            trace: Vec::new(),
            timers: Vec::new(),
            auth: Vec::new(),
            cancel: Vec::new(),
            world: &mut self.world,
            ctrl: &self.controller,
        };
        f(&mut self.nodes[idx], &mut ctx);
        let Ctx { frames, trace, timers, auth, cancel, .. } = ctx;
        for k in cancel {
            self.queue.cancel(k);
        }
        self.trace.extend(trace);
        for frame in frames {
            self.transmit(idx, 1, frame);
        }
        for (delay, timer) in timers {
            let is_timeout = matches!(timer, Timer::OpTimeout { .. });
            let key = self.queue.schedule_in(delay, Event::Timer { node: idx, timer });
            if let (true, Node::Host(h)) = (is_timeout, &mut self.nodes[idx]) {
                h.timeout_key = Some(key);
            }
        }
        for wire in auth {
            self.queue.schedule_in(AUTH_LINK_LATENCY, Event::AuthToController(wire));
        }
    }

    fn frame_event(&self, kind: TraceKind, node: usize, port: u16, link: usize, frame: &EthernetFrame) -> TraceEvent {
        let mut ev = TraceEvent::new(self.queue.now(), kind)
            .with("dst", frame.dst)
            .with("link", link)
            .with("node", &self.names[node])
            .with("port", port)
            .with("src", frame.src);
        for (k, v) in frame_summary(frame) {
            ev = ev.with(k, v);
        }
        ev
    }

    fn transmit(&mut self, node: usize, port: u16, frame: EthernetFrame) {
        let Some(&li) = self.ports.get(&(node, port)) else { return };
        let link = self.links[li];
        let to = if link.a == (node, port) { link.b } else { link.a };
        let ev = self.frame_event(TraceKind::FrameTx, node, port, li, &frame);
        self.trace.push(ev);
        self.counters.enqueued += 1;
        self.queue.schedule_in(link.latency, Event::Deliver { node: to.0, port: to.1, frame });
    }

    fn deliver(&mut self, node: usize, port: u16, frame: EthernetFrame) {
        self.counters.delivered += 1;
        let li = self.ports[&(node, port)];
        let ev = self.frame_event(TraceKind::FrameRx, node, port, li, &frame);
        self.trace.push(ev);
        match &self.nodes[node] {
            Node::Switch(sw) => {
                let sw = *sw;
                let actions = self
                    .controller
                    .switch_receive(sw, PortId(port), &frame)
                    .expect("links only attach to valid switch ports");
                for a in actions {
                    match a {
                        SimAction::Event(e) => {
                            let ev = fabric_event(self.queue.now(), &e, &self.controller);
                            self.trace.push(ev);
                        }
                        SimAction::Transmit { port, frame } => self.transmit(node, port.0, frame),
                    }
                }
            }
            _ => self.run_node(node, |n, ctx| match n {
                Node::Host(h) => h.receive(&frame, ctx),
                Node::Dns(d) => d.receive(&frame, ctx),
                Node::Portal(p) => p.receive(&frame, ctx),
                Node::Nat(g) => g.receive(&frame, ctx),
                Node::Switch(_) => {}
            }),
        }
    }

    fn controller_segment(&mut self, wire: &[u8]) {
        let Ok(seg) = TcpSegment::decode(wire) else { return };
        let now = self.queue.now();
        let mut replies = Vec::new();
        if seg.flags.syn && !seg.flags.ack {
            if now < self.endpoint.listen_at {
                return;
            }
            let rcv_nxt = seg.seq.wrapping_add(1);
            self.endpoint.state = AuthConn::Established { snd_nxt: CONTROLLER_AUTH_ISN + 1, rcv_nxt };
            self.endpoint.server = AuthServer::default();
            replies.push(ControllerEndpoint::segment(
                CONTROLLER_AUTH_ISN,
                rcv_nxt,
                crate::packets::TcpFlags::SYN_ACK,
                Vec::new(),
            ));
        } else if let AuthConn::Established { mut snd_nxt, rcv_nxt } = self.endpoint.state {
            if seg.payload.is_empty() || seg.seq != rcv_nxt {
                return;
            }
            let rcv_nxt = rcv_nxt.wrapping_add(seg.payload.len() as u32);
            let portal_name = self.portal.map_or("portal", |i| self.names[i].as_str()).to_string();
            for ex in self.endpoint.server.on_bytes(&mut self.controller, &seg.payload) {
                let mut ev = TraceEvent::new(now, TraceKind::AuthLine)
                    .with("dir", "cmd")
                    .with("from", &portal_name)
                    .with("line", &ex.line)
                    .with("to", "controller");
                if let Some(cmd) = ex.command {
                    ev = ev.with("mac", cmd.mac);
                }
                self.trace.push(ev);
                for e in &ex.events {
                    let ev = fabric_event(now, e, &self.controller);
                    self.trace.push(ev);
                }
                let bytes = ex.reply.into_bytes();
                let len = bytes.len() as u32;
                replies.push(ControllerEndpoint::segment(snd_nxt, rcv_nxt, crate::packets::TcpFlags::ACK, bytes));
                snd_nxt = snd_nxt.wrapping_add(len);
            }
            self.endpoint.state = AuthConn::Established { snd_nxt, rcv_nxt };
        }
        for r in replies {
            self.queue.schedule_in(AUTH_LINK_LATENCY, Event::AuthToPortal(r));
        }
    }
}

fn frame_summary(frame: &EthernetFrame) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    match frame.ethertype {
        EtherType::Arp => match ArpPacket::decode(&frame.payload) {
            Ok(arp) => {
                let op = if arp.op == ArpOp::Request { "arp-request" } else { "arp-reply" };
                out.push(("proto", op.to_string()));
                out.push(("ip_src", arp.sender_ip.to_string()));
                out.push(("ip_dst", arp.target_ip.to_string()));
            }
            Err(_) => out.push(("proto", "arp-invalid".to_string())),
        },
        EtherType::Ipv4 => match Ipv4Packet::decode(&frame.payload) {
            Ok(pkt) => {
                let (proto, sp, dp, flags, len) = match pkt.protocol {
                    PROTO_UDP => match UdpDatagram::decode(&pkt.payload) {
                        Ok(u) => ("udp", Some(u.src_port), Some(u.dst_port), None, u.payload.len()),
                        Err(_) => ("udp-invalid", None, None, None, 0),
                    },
                    PROTO_TCP => match TcpSegment::decode(&pkt.payload) {
                        Ok(t) => ("tcp", Some(t.src_port), Some(t.dst_port), Some(t.flags), t.payload.len()),
                        Err(_) => ("tcp-invalid", None, None, None, 0),
                    },
                    _ => ("ipv4", None, None, None, pkt.payload.len()),
                };
                let addr = |ip: Ipv4Addr, p: Option<u16>| match p {
                    Some(p) => format!("{ip}:{p}"),
                    None => ip.to_string(),
                };
                out.push(("proto", proto.to_string()));
                out.push(("ip_src", addr(pkt.src, sp)));
                out.push(("ip_dst", addr(pkt.dst, dp)));
                out.push(("len", len.to_string()));
                if let Some(f) = flags {
                    out.push(("flags", f.to_string()));
                }
            }
            Err(_) => out.push(("proto", "ipv4-invalid".to_string())),
        },
    }
    out
}

fn fabric_event(now: u64, e: &FabricEvent, ctrl: &Controller) -> TraceEvent {
    let sw_name = |s: SwitchId| ctrl.switch(s).map_or_else(|| format!("#{}", s.0), |s| s.name.clone());
    match e {
        FabricEvent::PacketIn { switch, in_port, src, dst, ethertype } => TraceEvent::new(now, TraceKind::PacketIn)
            .with("dst", dst)
            .with("ethertype", format!("0x{ethertype:04x}"))
            .with("in_port", in_port)
            .with("src", src)
            .with("switch", sw_name(*switch)),
        FabricEvent::FlowMod { switch, op, entry } => TraceEvent::new(now, TraceKind::FlowMod)
            .with("action", entry.action)
            .with("match", &entry.rule)
            .with(
                "op",
                match op {
                    FlowModOp::Add => "add",
                    FlowModOp::Modify => "modify",
                    FlowModOp::Remove => "remove",
                },
            )
            .with("priority", entry.priority)
            .with("switch", sw_name(*switch)),
        FabricEvent::PacketOut { switch, action, ports, redirected } => TraceEvent::new(now, TraceKind::PacketOut)
            .with("action", action)
            .with("ports", ports.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(","))
            .with("redirected", redirected)
            .with("switch", sw_name(*switch)),
        FabricEvent::Drop { switch, src, dst, reason } => TraceEvent::new(now, TraceKind::Drop)
            .with("dst", dst)
            .with("reason", reason.as_str())
            .with("src", src)
            .with("switch", sw_name(*switch)),
    }
}

impl fmt::Display for Counters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "enqueued={} delivered={} events={}", self.enqueued, self.delivered, self.events)
    }
}
