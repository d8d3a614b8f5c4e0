//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion does.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use portalsim::auth::{decode_command, decode_reply, encode_command, encode_reply, AuthCommand, AuthReply, AuthVerb};
use portalsim::fabric::AuthState;
use portalsim::netsim::{
    Action, Endpoint, HostRole, HostSpec, LinkSpec, Network, Outcome, SimConfig, SwitchSpec, Topology, DEFAULT_BUDGET,
};
use portalsim::packets::{
    ArpOp, ArpPacket, DnsKind, DnsMessage, DnsQuestion, DnsRecord, DomainName, EtherType, EthernetFrame, HttpMessage,
    Ipv4Packet, MacAddr, Method, TcpFlags, TcpSegment, UdpDatagram, PROTO_UDP,
};
use portalsim::portal::LOGIN_OK_MARKER;
use portalsim::scenario::{bundled, check_trace, parse_scenario, render_sequence, CheckOutcome, BUNDLED};
use portalsim::trace::{TraceEvent, TraceKind};

/// Wall-clock limits.
const FIG2_LIMIT: Duration = Duration::from_secs(1);
const CAPTIVITY_LIMIT: Duration = Duration::from_secs(30);

const CAPTIVITY_RUNS: u64 = 100;
const CONVERGENCE_TRIALS: u64 = 200;
const CODEC_CASES: usize = 10_000;

type Verdict = Result<String, String>;

fn golden(name: &str) -> String {
    let path = format!("{}/scenarios/{name}.trace", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn run_bundled(name: &str) -> Network {
    let sc = parse_scenario(bundled(name).expect("bundled scenario")).expect("scenario parses");
    sc.run(DEFAULT_BUDGET).map_err(|e| e.0).expect("scenario runs to completion")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// 1 and 2: bundled reproductions

fn fig2_reproduction() -> Verdict {
    let start = Instant::now();
    let net = run_bundled("fig2_dns_spoofing");
    let trace = net.trace_text();
    let elapsed = start.elapsed();
    match check_trace(&golden("fig2_dns_spoofing"), &trace) {
        CheckOutcome::Identical => {}
        other => return Err(format!("trace differs from golden: {other:?}")),
    }
    let expected = [
        "DNS query news.example",
        "spoofed answer 10.0.0.2",
        "GET / Host: news.example",
        "200 login page",
        "POST /login Host: news.example",
        "AUTH aa:bb:cc:dd:ee:01",
        "DNS re-query news.example",
        "genuine answer 93.184.216.34",
        "GET / Host: news.example",
        "200 site page news.example",
    ];
    let diagram = render_sequence(net.trace());
    let labels = diagram.arrow_labels();
    ensure(labels == expected, || format!("arrow sequence {labels:?}"))?;
    let body = net.host_records("u1").unwrap().last().and_then(|r| r.response()).map(|(_, b)| b.to_string());
    ensure(body.as_deref() == Some("NEWS-EXAMPLE-FRONT-PAGE"), || format!("final body {body:?}"))?;
    ensure(elapsed < FIG2_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!("byte-identical golden, 10 arrows, {elapsed:.2?}"))
}

fn ip_forgery_reproduction() -> Verdict {
    let net = run_bundled("ip_forgery_redirect");
    match check_trace(&golden("ip_forgery_redirect"), &net.trace_text()) {
        CheckOutcome::Identical => {}
        other => return Err(format!("trace differs from golden: {other:?}")),
    }
    let ev = net.trace();
    let first_dns = ev.iter().find(|e| e.kind == TraceKind::DnsAnswer).ok_or("no DNS answer")?;
    ensure(
        first_dns.get("name") == Some("news.example")
            && first_dns.get("answer") == Some("93.184.216.34")
            && first_dns.get("spoofed") == Some("false"),
        || format!("first DNS answer {first_dns}"),
    )?;
    let rx: Vec<&TraceEvent> = ev.iter().filter(|e| e.kind == TraceKind::HttpRx).collect();
    ensure(rx.len() >= 2, || "fewer than two HTTP exchanges".into())?;
    ensure(rx[0].get("status") == Some("302") && rx[0].get("location") == Some("http://portal.local/"), || {
        format!("first exchange {}", rx[0])
    })?;
    ensure(
        rx[1].get("role") == Some("portal") && rx[1].get("status") == Some("200") && rx[1].get("page") == Some("login"),
        || format!("second exchange {}", rx[1]),
    )?;
    let first = &net.host_records("u1").unwrap()[0];
    ensure(first.redirects() == 1, || format!("{} redirects", first.redirects()))?;
    Ok("genuine DNS, 302 to portal.local, second exchange at portal".into())
}

// ---------------------------------------------------------------------------
// 3 and 8: randomized captivity runs

struct GeneratedRun {
    text: String,
    site_bodies: BTreeSet<String>,
}

fn random_word(rng: &mut ChaCha8Rng, len: usize) -> String {
    const ALPHA: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
    (0..len).map(|_| ALPHA[rng.gen_range(0..ALPHA.len())] as char).collect()
}

fn generate_captivity(seed: u64) -> GeneratedRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = rng.gen_range(1..=4usize);
    let nsites = rng.gen_range(1..=4usize);
    let mut text = format!("[topology]\npreset fig1 users={users}\n");
    let mut sites = Vec::new();
    let mut site_bodies = BTreeSet::new();
    let mut used_ips = BTreeSet::new();
    for j in 0..nsites {
        let domain = format!("{}{j}.example", random_word(&mut rng, 5));
        let ip = loop {
            let ip = Ipv4Addr::new(rng.gen_range(11..=223), rng.gen(), rng.gen(), rng.gen_range(1..=254));
            if used_ips.insert(ip) {
                break ip;
            }
        };
        let body = format!("UPSTREAM-{j}-{}", random_word(&mut rng, 10));
        text.push_str(&format!("site {domain} {ip} {body}\n"));
        sites.push(domain);
        site_bodies.insert(body);
    }
    let (technique, mode) = [("dns_spoofing", "spoof_all"), ("ip_forgery", "proxy"), ("ip_forgery", "dnat")]
        .choose(&mut rng)
        .copied()
        .unwrap();
    text.push_str(&format!("[capture]\ntechnique {technique}\ndns_mode {mode}\n"));
    if mode == "dnat" {
        text.push_str("resolver 8.8.8.8\n[rewrite_rules]\nudp dport=53 -> 10.0.0.3\n");
    }
    text.push_str("[credentials]\n");
    let passwords: Vec<String> = (0..users).map(|_| random_word(&mut rng, 8)).collect();
    for (i, pw) in passwords.iter().enumerate() {
        text.push_str(&format!("user{} {pw}\n", i + 1));
    }

    let mut script: Vec<(u64, usize, String)> = Vec::new();
    for (u, password) in passwords.iter().enumerate() {
        let mut tick = rng.gen_range(0..40u64);
        for _ in 0..rng.gen_range(1..=5) {
            let site = sites.choose(&mut rng).unwrap();
            let action = match rng.gen_range(0..10) {
                0..=3 => format!("http_get http://{site}/"),
                4..=6 => format!("login user{} {password}", u + 1),
                7 => format!("login user{} wrong{}", u + 1, random_word(&mut rng, 3)),
                8 => format!("dns_query {site}"),
                _ => format!("http_get http://missing{}.example/", random_word(&mut rng, 3)),
            };
            script.push((tick, u, action));
            tick += rng.gen_range(0..120);
        }
        let site = sites.choose(&mut rng).unwrap();
        script.push((tick, u, format!("http_get http://{site}/")));
    }
    script.sort_by_key(|(t, u, _)| (*t, *u));
    text.push_str("[script]\n");
    for (t, u, a) in script {
        text.push_str(&format!("at {t} u{} {a}\n", u + 1));
    }
    GeneratedRun { text, site_bodies }
}

struct CaptivityReport {
    violations: Vec<String>,
    auth_violations: Vec<String>,
    logins: usize,
    upstream_pages: usize,
}

fn captivity_runs() -> CaptivityReport {
    let mut rep = CaptivityReport { violations: Vec::new(), auth_violations: Vec::new(), logins: 0, upstream_pages: 0 };
    for seed in 0..CAPTIVITY_RUNS {
        let gen = generate_captivity(seed);
        let sc = match parse_scenario(&gen.text) {
            Ok(s) => s,
            Err(e) => {
                rep.violations.push(format!("seed {seed}: generated scenario rejected: {e}"));
                continue;
            }
        };
        let net = match sc.run(DEFAULT_BUDGET) {
            Ok(n) => n,
            Err((e, _)) => {
                rep.violations.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let macs: BTreeMap<String, MacAddr> =
            sc.topology.hosts.iter().filter(|h| h.role == HostRole::User).map(|h| (h.name.clone(), h.mac)).collect();

        // Tick at which the controller processed each MAC's AUTH line.
        let mut auth_ticks: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        for e in net.trace().iter().filter(|e| e.kind == TraceKind::AuthLine && e.get("dir") == Some("cmd")) {
            if e.get("line").is_some_and(|l| l.starts_with("AUTH ")) {
                auth_ticks.entry(e.get("mac").unwrap_or("?").to_string()).or_default().push(e.tick);
            }
        }

        for (name, mac) in &macs {
            let records = net.host_records(name).unwrap();
            let authorized_at = auth_ticks.get(&mac.to_string()).and_then(|v| v.first().copied());
            let mut successes = 0;
            for r in records {
                let Outcome::Response { body, .. } = &r.outcome else { continue };
                if gen.site_bodies.contains(body) {
                    rep.upstream_pages += 1;
                    if authorized_at.is_none_or(|t| r.finished < t) {
                        rep.violations.push(format!("seed {seed}: captive {name} got upstream page at {}", r.finished));
                    }
                }
                if matches!(r.action, Action::Login { .. }) && body.contains(LOGIN_OK_MARKER) {
                    successes += 1;
                    rep.logins += 1;
                    let later = records.iter().any(|x| {
                        x.started >= r.finished
                            && matches!(&x.outcome, Outcome::Response { body, .. } if gen.site_bodies.contains(body))
                    });
                    if !later {
                        rep.violations.push(format!(
                            "seed {seed}: {name} logged in at {} but never reached upstream",
                            r.finished
                        ));
                    }
                }
            }
            let commands = auth_ticks.get(&mac.to_string()).map_or(0, Vec::len);
            let expected = successes.min(1);
            if commands != expected {
                rep.auth_violations
                    .push(format!("seed {seed}: {name} sent {commands} AUTH lines for {successes} successful logins"));
            }
            if net.controller().auth().is_authorized(*mac) != (expected == 1) {
                rep.auth_violations.push(format!("seed {seed}: {name} AuthTable state disagrees"));
            }
        }
    }
    rep
}

fn captivity_invariant(rep: &CaptivityReport, elapsed: Duration) -> Verdict {
    ensure(rep.violations.is_empty(), || format!("{} violations, first: {}", rep.violations.len(), rep.violations[0]))?;
    ensure(rep.logins > 0 && rep.upstream_pages > 0, || "generator produced no logins".into())?;
    ensure(elapsed < CAPTIVITY_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{CAPTIVITY_RUNS} runs, {} successful logins, {} upstream pages, 0 violations, {elapsed:.2?}",
        rep.logins, rep.upstream_pages
    ))
}

fn exactly_once_auth(rep: &CaptivityReport) -> Verdict {
    ensure(rep.auth_violations.is_empty(), || {
        format!("{} violations, first: {}", rep.auth_violations.len(), rep.auth_violations[0])
    })?;
    Ok(format!("{CAPTIVITY_RUNS} runs, {} successful logins, 0 violations", rep.logins))
}

// ---------------------------------------------------------------------------
// 4: learning-switch convergence against a flooding oracle

struct Tree {
    topo: Topology,
    /// Host name and its MAC / IP, in order.
    hosts: Vec<(String, MacAddr, Ipv4Addr)>,
}

fn random_tree(rng: &mut ChaCha8Rng) -> Tree {
    let nswitch = rng.gen_range(1..=6usize);
    let nhost = rng.gen_range(2..=8usize);
    let mut ports = vec![0u16; nswitch];
    let mut links = Vec::new();
    let next_port = |ports: &mut Vec<u16>, s: usize| {
        ports[s] += 1;
        ports[s]
    };
    for s in 1..nswitch {
        let parent = rng.gen_range(0..s);
        let (pa, pb) = (next_port(&mut ports, parent), next_port(&mut ports, s));
        links.push(LinkSpec {
            a: Endpoint::new(format!("s{}", parent + 1), pa),
            b: Endpoint::new(format!("s{}", s + 1), pb),
            latency: rng.gen_range(1..=3),
        });
    }
    let mut hosts = Vec::new();
    let mut specs = Vec::new();
    for h in 0..nhost {
        let s = rng.gen_range(0..nswitch);
        let name = format!("h{}", h + 1);
        let mac = MacAddr([0x02, 0, 0, 0, 0x10, h as u8 + 1]);
        let ip = Ipv4Addr::new(10, 0, 0, 20 + h as u8);
        let p = next_port(&mut ports, s);
        links.push(LinkSpec {
            a: Endpoint::new(name.clone(), 1),
            b: Endpoint::new(format!("s{}", s + 1), p),
            latency: rng.gen_range(1..=3),
        });
        specs.push(HostSpec { name: name.clone(), mac, ip, role: HostRole::User });
        hosts.push((name, mac, ip));
    }
    let switches =
        (0..nswitch).map(|s| SwitchSpec { name: format!("s{}", s + 1), port_count: ports[s].max(1) }).collect();
    links.shuffle(rng);
    let topo = Topology { hosts: specs, switches, links, ..Topology::default() };
    Tree { topo, hosts }
}

/// Every node a frame reaches when every switch floods it out of all ports
/// except the one it came in on. Returns host names with multiplicity.
fn flood_oracle(topo: &Topology, from: &str) -> Vec<String> {
    let mut peer: BTreeMap<(String, u16), (String, u16)> = BTreeMap::new();
    for l in &topo.links {
        peer.insert((l.a.node.clone(), l.a.port), (l.b.node.clone(), l.b.port));
        peer.insert((l.b.node.clone(), l.b.port), (l.a.node.clone(), l.a.port));
    }
    let switch_ports: BTreeMap<&str, u16> = topo.switches.iter().map(|s| (s.name.as_str(), s.port_count)).collect();
    let mut reached = Vec::new();
    let mut work: VecDeque<(String, u16)> = VecDeque::new();
    work.push_back(peer[&(from.to_string(), 1)].clone());
    let mut steps = 0;
    while let Some((node, in_port)) = work.pop_front() {
        steps += 1;
        assert!(steps < 10_000, "flood does not terminate");
        match switch_ports.get(node.as_str()) {
            Some(&n) => {
                for p in (1..=n).filter(|p| *p != in_port) {
                    if let Some(next) = peer.get(&(node.clone(), p)) {
                        work.push_back(next.clone());
                    }
                }
            }
            None => reached.push(node),
        }
    }
    reached
}

type Delivery = (String, String, String, String);

fn convergence_trial(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = random_tree(&mut rng);
    let mut net = Network::new(&tree.topo, &SimConfig::default()).map_err(|e| format!("build: {e}"))?;
    for (_, mac, _) in &tree.hosts {
        net.controller_mut().authorize_mac(*mac);
    }

    let mut expected: Vec<Delivery> = Vec::new();
    let accept = |dst: MacAddr, mac: MacAddr| dst == mac || dst == MacAddr::BROADCAST;
    let nobody = Ipv4Addr::new(10, 0, 0, 250);

    // Phase 1: each host broadcasts once, spaced so nothing overlaps.
    for (i, (name, mac, ip)) in tree.hosts.iter().enumerate() {
        let arp = ArpPacket::request(*mac, *ip, nobody);
        let frame = EthernetFrame::new(MacAddr::BROADCAST, *mac, EtherType::Arp, arp.encode());
        net.inject_frame(100 * i as u64, name, frame).map_err(|e| e.to_string())?;
        for r in flood_oracle(&tree.topo, name) {
            let rmac = tree.hosts.iter().find(|h| h.0 == r).unwrap().1;
            if accept(MacAddr::BROADCAST, rmac) {
                expected.push((r, mac.to_string(), MacAddr::BROADCAST.to_string(), ip.to_string()));
            }
        }
    }
    let phase2 = 100 * tree.hosts.len() as u64 + 100;

    // Phase 2: random unicast between hosts.
    for j in 0..rng.gen_range(10..40u16) {
        let a = rng.gen_range(0..tree.hosts.len());
        let b = (a + rng.gen_range(1..tree.hosts.len())) % tree.hosts.len();
        let (sname, smac, sip) = &tree.hosts[a];
        let (_, dmac, dip) = &tree.hosts[b];
        let sport = 20_000 + j;
        let udp = UdpDatagram::new(sport, 9, vec![j as u8; 4]);
        let ip = Ipv4Packet::new(*sip, *dip, PROTO_UDP, 64, j, udp.encode());
        let frame = EthernetFrame::new(*dmac, *smac, EtherType::Ipv4, ip.encode());
        net.inject_frame(phase2 + 7 * u64::from(j), sname, frame).map_err(|e| e.to_string())?;
        for r in flood_oracle(&tree.topo, sname) {
            let rmac = tree.hosts.iter().find(|h| h.0 == r).unwrap().1;
            if accept(*dmac, rmac) {
                expected.push((r, smac.to_string(), dmac.to_string(), format!("{sip}:{sport}")));
            }
        }
    }
    net.run_until_idle(DEFAULT_BUDGET).map_err(|e| e.to_string())?;

    let host_macs: BTreeMap<&str, MacAddr> = tree.hosts.iter().map(|h| (h.0.as_str(), h.1)).collect();
    let mut delivered: Vec<Delivery> = Vec::new();
    for e in net.trace() {
        if e.tick >= phase2 {
            let flood = e.kind == TraceKind::PacketOut && e.get("action") == Some("flood");
            if e.kind == TraceKind::PacketIn || flood {
                return Err(format!("seed {seed}: {e} after convergence"));
            }
        }
        if e.kind != TraceKind::FrameRx {
            continue;
        }
        let Some(&mac) = e.get("node").and_then(|n| host_macs.get(n)) else { continue };
        let dst: MacAddr = e.get("dst").unwrap().parse().unwrap();
        if accept(dst, mac) {
            let field = |k| e.get(k).unwrap_or("").to_string();
            delivered.push((field("node"), field("src"), field("dst"), field("ip_src")));
        }
    }
    expected.sort();
    delivered.sort();
    ensure(delivered == expected, || {
        format!("seed {seed}: delivered {} frames, oracle expects {}", delivered.len(), expected.len())
    })
}

fn learning_convergence() -> Verdict {
    let failures: Vec<String> = (0..CONVERGENCE_TRIALS).filter_map(|s| convergence_trial(s).err()).collect();
    ensure(failures.is_empty(), || format!("{} violations, first: {}", failures.len(), failures[0]))?;
    Ok(format!("{CONVERGENCE_TRIALS} random trees, 0 violations"))
}

// ---------------------------------------------------------------------------
// 5: codecs

fn mac(rng: &mut ChaCha8Rng) -> MacAddr {
    MacAddr(rng.gen())
}

fn ip(rng: &mut ChaCha8Rng) -> Ipv4Addr {
    Ipv4Addr::from(rng.gen::<u32>())
}

fn bytes(rng: &mut ChaCha8Rng, max: usize) -> Vec<u8> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| rng.gen()).collect()
}

fn domain(rng: &mut ChaCha8Rng) -> DomainName {
    let n = rng.gen_range(0..4);
    let labels: Vec<Vec<u8>> = (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=20);
            (0..len).map(|_| rng.gen::<u8>().to_ascii_lowercase()).collect()
        })
        .collect();
    DomainName::from_labels(labels).unwrap()
}

fn record(rng: &mut ChaCha8Rng) -> DnsRecord {
    if rng.gen_bool(0.5) {
        DnsRecord::a(domain(rng), rng.gen(), ip(rng))
    } else {
        DnsRecord {
            name: domain(rng),
            rtype: rng.gen_range(2..=255),
            rclass: rng.gen(),
            ttl: rng.gen(),
            rdata: bytes(rng, 16),
        }
    }
}

fn dns(rng: &mut ChaCha8Rng) -> DnsMessage {
    DnsMessage {
        id: rng.gen(),
        kind: if rng.gen() { DnsKind::Query } else { DnsKind::Response },
        opcode: 0,
        rcode: rng.gen_range(0..16),
        recursion_desired: rng.gen(),
        recursion_available: rng.gen(),
        questions: (0..rng.gen_range(0..3))
            .map(|_| DnsQuestion { qname: domain(rng), qtype: rng.gen(), qclass: rng.gen() })
            .collect(),
        answers: (0..rng.gen_range(0..3)).map(|_| record(rng)).collect(),
    }
}

fn token(rng: &mut ChaCha8Rng) -> String {
    const T: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_";
    let n = rng.gen_range(1..12);
    (0..n).map(|_| T[rng.gen_range(0..T.len())] as char).collect()
}

fn header_value(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(0..20);
    let mut v: String = (0..n).map(|_| rng.gen_range(0x21u8..0x7f) as char).collect();
    // surrounding whitespace is not part of a field value
    if v.len() >= 2 && rng.gen_bool(0.3) {
        v.insert(v.len() / 2, ' ');
    }
    v
}

fn http(rng: &mut ChaCha8Rng) -> HttpMessage {
    let headers = (0..rng.gen_range(0..4))
        .map(|_| (token(rng), header_value(rng)))
        .filter(|(k, _)| !k.eq_ignore_ascii_case("content-length"))
        .collect();
    let len = rng.gen_range(0..40);
    let body = random_word(rng, len);
    if rng.gen() {
        let method = if rng.gen() { Method::Get } else { Method::Post };
        let len = rng.gen_range(0..10);
        HttpMessage::Request { method, path: format!("/{}", random_word(rng, len)), headers, body }
    } else {
        HttpMessage::Response { status: rng.gen_range(100..600), headers, body }
    }
}

fn tcp(rng: &mut ChaCha8Rng) -> TcpSegment {
    let flags = *[TcpFlags::SYN, TcpFlags::SYN_ACK, TcpFlags::ACK, TcpFlags::FIN_ACK].choose(rng).unwrap();
    let payload = if flags.syn { Vec::new() } else { bytes(rng, 64) };
    TcpSegment { src_port: rng.gen(), dst_port: rng.gen(), seq: rng.gen(), ack: rng.gen(), flags, payload }
}

fn arp(rng: &mut ChaCha8Rng) -> ArpPacket {
    if rng.gen() {
        ArpPacket::request(mac(rng), ip(rng), ip(rng))
    } else {
        ArpPacket {
            op: ArpOp::Reply,
            sender_mac: mac(rng),
            sender_ip: ip(rng),
            target_mac: mac(rng),
            target_ip: ip(rng),
        }
    }
}

fn udp(rng: &mut ChaCha8Rng) -> UdpDatagram {
    UdpDatagram::new(rng.gen(), rng.gen(), bytes(rng, 80))
}

fn ethernet(rng: &mut ChaCha8Rng) -> EthernetFrame {
    let src = loop {
        let m = mac(rng);
        if m != MacAddr::BROADCAST {
            break m;
        }
    };
    let et = if rng.gen() { EtherType::Arp } else { EtherType::Ipv4 };
    EthernetFrame::new(mac(rng), src, et, bytes(rng, 80))
}

fn ipv4(rng: &mut ChaCha8Rng) -> Ipv4Packet {
    Ipv4Packet::new(ip(rng), ip(rng), rng.gen(), rng.gen(), rng.gen(), bytes(rng, 80))
}

fn auth_command(rng: &mut ChaCha8Rng) -> AuthCommand {
    AuthCommand { verb: if rng.gen() { AuthVerb::Auth } else { AuthVerb::Query }, mac: mac(rng) }
}

fn auth_reply(rng: &mut ChaCha8Rng) -> AuthReply {
    *[
        AuthReply::OK,
        AuthReply::ERR_UNKNOWN,
        AuthReply::with_state(AuthState::Authorized),
        AuthReply::with_state(AuthState::Unauthorized),
    ]
    .choose(rng)
    .unwrap()
}

struct Layer {
    name: &'static str,
    round_trip: fn(&mut ChaCha8Rng) -> Result<(), String>,
    encode_sample: fn(&mut ChaCha8Rng) -> Vec<u8>,
    decode: fn(&[u8]),
}

macro_rules! rt {
    ($gen:ident, $enc:expr, $dec:expr) => {
        |rng: &mut ChaCha8Rng| {
            let x = $gen(rng);
            let wire = $enc(&x);
            match $dec(&wire) {
                Ok(y) if y == x => Ok(()),
                other => Err(format!("{x:?} -> {other:?}")),
            }
        }
    };
}

fn layers() -> Vec<Layer> {
    vec![
        Layer {
            name: "ethernet",
            round_trip: rt!(ethernet, EthernetFrame::encode, |w: &Vec<u8>| EthernetFrame::decode(w)),
            encode_sample: |r| ethernet(r).encode(),
            decode: |b| drop(EthernetFrame::decode(b)),
        },
        Layer {
            name: "arp",
            round_trip: rt!(arp, ArpPacket::encode, |w: &Vec<u8>| ArpPacket::decode(w)),
            encode_sample: |r| arp(r).encode(),
            decode: |b| drop(ArpPacket::decode(b)),
        },
        Layer {
            name: "ipv4",
            round_trip: rt!(ipv4, Ipv4Packet::encode, |w: &Vec<u8>| Ipv4Packet::decode(w)),
            encode_sample: |r| ipv4(r).encode(),
            decode: |b| drop(Ipv4Packet::decode(b)),
        },
        Layer {
            name: "udp",
            round_trip: rt!(udp, UdpDatagram::encode, |w: &Vec<u8>| UdpDatagram::decode(w)),
            encode_sample: |r| udp(r).encode(),
            decode: |b| drop(UdpDatagram::decode(b)),
        },
        Layer {
            name: "tcp",
            round_trip: rt!(tcp, TcpSegment::encode, |w: &Vec<u8>| TcpSegment::decode(w)),
            encode_sample: |r| tcp(r).encode(),
            decode: |b| drop(TcpSegment::decode(b)),
        },
        Layer {
            name: "dns",
            round_trip: rt!(dns, |m: &DnsMessage| m.encode().unwrap(), |w: &Vec<u8>| DnsMessage::decode(w)),
            encode_sample: |r| dns(r).encode().unwrap(),
            decode: |b| drop(DnsMessage::decode(b)),
        },
        Layer {
            name: "http",
            round_trip: rt!(http, HttpMessage::render, |w: &Vec<u8>| HttpMessage::parse(w)),
            encode_sample: |r| http(r).render(),
            decode: |b| drop(HttpMessage::parse(b)),
        },
        Layer {
            name: "auth-command",
            round_trip: rt!(auth_command, encode_command, |w: &String| decode_command(w)),
            encode_sample: |r| encode_command(&auth_command(r)).into_bytes(),
            decode: |b| drop(decode_command(&String::from_utf8_lossy(b))),
        },
        Layer {
            name: "auth-reply",
            round_trip: rt!(auth_reply, encode_reply, |w: &String| decode_reply(w)),
            encode_sample: |r| encode_reply(&auth_reply(r)).into_bytes(),
            decode: |b| drop(decode_reply(&String::from_utf8_lossy(b))),
        },
    ]
}

fn codec_round_trip_and_fuzz() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut summary = Vec::new();
    for layer in layers() {
        for i in 0..CODEC_CASES {
            (layer.round_trip)(&mut rng).map_err(|e| format!("{} round trip case {i}: {e}", layer.name))?;
        }
        // Random octets, then single-octet mutations of valid encodings.
        let mut inputs: Vec<Vec<u8>> = (0..CODEC_CASES).map(|_| bytes(&mut rng, 128)).collect();
        for _ in 0..CODEC_CASES {
            let mut w = (layer.encode_sample)(&mut rng);
            if !w.is_empty() {
                let at = rng.gen_range(0..w.len());
                w[at] = rng.gen();
            }
            if rng.gen_bool(0.2) {
                let cut = rng.gen_range(0..=w.len());
                w.truncate(cut);
            }
            inputs.push(w);
        }
        for (i, input) in inputs.iter().enumerate() {
            catch_unwind(|| (layer.decode)(input))
                .map_err(|_| format!("{} decoder panicked on fuzz input {i}: {input:02x?}", layer.name))?;
        }
        summary.push(layer.name);
    }
    Ok(format!("{CODEC_CASES} round trips and {} fuzz inputs per layer: {}", 2 * CODEC_CASES, summary.join(", ")))
}

// ---------------------------------------------------------------------------
// 6 and 7

fn dnat_transparency() -> Verdict {
    let net = run_bundled("dnat_rewrite");
    let log = net.dns_log("u1").unwrap();
    ensure(!log.is_empty(), || "no DNS exchanges observed".into())?;
    let dns_server = Ipv4Addr::new(10, 0, 0, 3);
    let mut rewritten = 0;
    for obs in log {
        ensure(obs.reply_src == obs.query_dst, || format!("{obs:?}"))?;
        if obs.query_dst.0 != dns_server {
            rewritten += 1;
        }
    }
    ensure(rewritten > 0, || "no exchange went through the rewrite".into())?;
    // the DNS server really did see the rewritten destination
    let served = net.trace().iter().filter(|e| e.kind == TraceKind::DnsAnswer && e.get("node") == Some("dns")).count();
    ensure(served >= rewritten, || format!("{served} answers for {rewritten} rewritten queries"))?;
    Ok(format!("{rewritten} rewritten exchanges, reply source = original destination in all"))
}

fn determinism() -> Verdict {
    for (name, _) in BUNDLED {
        let a = run_bundled(name).trace_text();
        let b = run_bundled(name).trace_text();
        ensure(a == b, || format!("{name}: two runs differ"))?;
        ensure(check_trace(&golden(name), &a).is_identical(), || format!("{name}: differs from golden"))?;
    }
    Ok(format!("{} bundled scenarios, identical across runs and to goldens", BUNDLED.len()))
}

// ---------------------------------------------------------------------------

fn guard<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        format!("panicked: {msg}")
    })
}

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|_| {}));

    let start = Instant::now();
    let captivity = guard(captivity_runs);
    let elapsed = start.elapsed();
    let c3 = captivity.as_ref().map_err(Clone::clone).and_then(|r| captivity_invariant(r, elapsed));
    let c8 = captivity.as_ref().map_err(Clone::clone).and_then(exactly_once_auth);

    let results: Vec<(&str, Verdict)> = vec![
        ("1 fig2 dns-spoofing reproduction", guard(fig2_reproduction).and_then(|v| v)),
        ("2 ip-forgery reproduction", guard(ip_forgery_reproduction).and_then(|v| v)),
        ("3 captivity invariant", c3),
        ("4 learning-switch convergence", guard(learning_convergence).and_then(|v| v)),
        ("5 codec round-trip and fuzz", guard(codec_round_trip_and_fuzz).and_then(|v| v)),
        ("6 dnat transparency", guard(dnat_transparency).and_then(|v| v)),
        ("7 determinism", guard(determinism).and_then(|v| v)),
        ("8 exactly-once authorization", c8),
    ];
    let mut failed = 0;
    for (name, verdict) in &results {
        match verdict {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
