//! Scenario files: parsing, running, golden checks and sequence diagrams.
//! The file format is described in `docs/scenario-format.md`.

mod check;
mod sequence;

use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::dns_engine::RewriteRule;
use crate::netsim::{
    Action, BuildError, DnsModeSpec, Endpoint, HostRole, HostSpec, LinkSpec, Livelock, Network, SimConfig, SiteSpec,
    SwitchSpec, Topology,
};
use crate::packets::{DomainName, MacAddr};
use crate::portal::CaptureTechnique;

pub use check::{check_trace, CheckOutcome};
pub use sequence::{render_sequence, Arrow, Lifeline, SequenceDiagram, SequenceItem};

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("fig2_dns_spoofing", include_str!("../../scenarios/fig2_dns_spoofing.scn")),
    ("ip_forgery_redirect", include_str!("../../scenarios/ip_forgery_redirect.scn")),
    ("dnat_rewrite", include_str!("../../scenarios/dnat_rewrite.scn")),
    ("learning_switch_only", include_str!("../../scenarios/learning_switch_only.scn")),
    ("wrong_password", include_str!("../../scenarios/wrong_password.scn")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Diagnostic codes, one per class of scenario error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagCode {
    Syntax,
    UnknownSection,
    UnknownDirective,
    BadValue,
    MissingTopology,
    TicksDecrease,
    UnknownHost,
    BadPairing,
    InvalidTopology,
}

impl DiagCode {
    pub fn code(self) -> &'static str {
        match self {
            DiagCode::Syntax => "S001",
            DiagCode::UnknownSection => "S002",
            DiagCode::UnknownDirective => "S003",
            DiagCode::BadValue => "S004",
            DiagCode::MissingTopology => "S005",
            DiagCode::TicksDecrease => "S010",
            DiagCode::UnknownHost => "S011",
            DiagCode::BadPairing => "S012",
            DiagCode::InvalidTopology => "S013",
        }
    }
}

impl fmt::Display for DiagCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: error[{code}]: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub col: usize,
    pub code: DiagCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    pub at: u64,
    pub host: String,
    pub action: Action,
    pub line: usize,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: Topology,
    pub config: SimConfig,
    pub script: Vec<ScriptEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Topology,
    Capture,
    Credentials,
    Zone,
    RewriteRules,
    Script,
}

struct Tok<'a> {
    col: usize,
    text: &'a str,
}

fn tokenize(line: &str) -> Vec<Tok<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push(Tok { col: s + 1, text: &line[s..i] });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Tok { col: s + 1, text: &line[s..] });
    }
    out
}

struct Parser {
    line: usize,
}

impl Parser {
    fn err(&self, col: usize, code: DiagCode, message: impl Into<String>) -> ScenarioError {
        ScenarioError { line: self.line, col, code, message: message.into() }
    }

    fn value<T: std::str::FromStr>(&self, tok: &Tok, what: &str) -> Result<T, ScenarioError> {
        tok.text.parse().map_err(|_| self.err(tok.col, DiagCode::BadValue, format!("invalid {what} {:?}", tok.text)))
    }

    /// `key=value` token; returns the value part.
    fn kv<'a>(&self, tok: &Tok<'a>, key: &str) -> Result<Tok<'a>, ScenarioError> {
        match tok.text.split_once('=') {
            Some((k, v)) if k == key => Ok(Tok { col: tok.col + k.len() + 1, text: v }),
            _ => Err(self.err(tok.col, DiagCode::Syntax, format!("expected {key}=<value>, found {:?}", tok.text))),
        }
    }

    fn arity(&self, toks: &[Tok], min: usize, max: usize, usage: &str) -> Result<(), ScenarioError> {
        if toks.len() < min || toks.len() > max {
            let col = toks.get(max).or(toks.first()).map_or(1, |t| t.col);
            return Err(self.err(col, DiagCode::Syntax, format!("usage: {usage}")));
        }
        Ok(())
    }
}

fn endpoint(p: &Parser, tok: &Tok) -> Result<Endpoint, ScenarioError> {
    match tok.text.rsplit_once(':') {
        Some((node, port)) => {
            let port = p.value(&Tok { col: tok.col + node.len() + 1, text: port }, "port")?;
            Ok(Endpoint::new(node, port))
        }
        None => Ok(Endpoint::new(tok.text, 1)),
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut p = Parser { line: 0 };
    let mut section = None;
    let mut topology: Option<Topology> = None;
    let mut topo_line = 1;
    let mut config = SimConfig::default();
    let mut dns_mode: Option<(DnsModeSpec, usize, usize)> = None;
    let mut technique_at = (1, 1);
    let mut rules: Vec<RewriteRule> = Vec::new();
    let mut script = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        p.line = i + 1;
        let line = raw.split('#').next().unwrap_or("");
        let toks = tokenize(line);
        let Some(first) = toks.first() else { continue };
        if first.text.starts_with('[') {
            let name = line.trim();
            if !name.ends_with(']') || toks.len() != 1 {
                return Err(p.err(first.col, DiagCode::Syntax, "section header must be [name]"));
            }
            section = Some(match &name[1..name.len() - 1] {
                "topology" => {
                    topo_line = p.line;
                    topology.get_or_insert_with(Topology::default);
                    Section::Topology
                }
                "capture" => Section::Capture,
                "credentials" => Section::Credentials,
                "zone" => Section::Zone,
                "rewrite_rules" => Section::RewriteRules,
                "script" => Section::Script,
                other => return Err(p.err(first.col, DiagCode::UnknownSection, format!("unknown section [{other}]"))),
            });
            continue;
        }
        let Some(sec) = section else {
            return Err(p.err(first.col, DiagCode::Syntax, "directive outside of any section"));
        };
        match sec {
            Section::Topology => {
                let topo = topology.as_mut().expect("created with section");
                topology_line(&p, topo, &toks, line)?;
            }
            Section::Capture => {
                p.arity(&toks, 2, 2, "<key> <value>")?;
                let v = &toks[1];
                match first.text {
                    "technique" => {
                        technique_at = (p.line, v.col);
                        config.technique = match v.text {
                            "dns_spoofing" => CaptureTechnique::DnsSpoofing,
                            "ip_forgery" => CaptureTechnique::IpForgery,
                            _ => {
                                return Err(p.err(v.col, DiagCode::BadValue, format!("unknown technique {:?}", v.text)))
                            }
                        }
                    }
                    "dns_mode" => {
                        let m = match v.text {
                            "spoof_all" => DnsModeSpec::SpoofAll,
                            "proxy" => DnsModeSpec::Proxy,
                            "dnat" => DnsModeSpec::Dnat(Vec::new()),
                            _ => {
                                return Err(p.err(v.col, DiagCode::BadValue, format!("unknown dns_mode {:?}", v.text)))
                            }
                        };
                        dns_mode = Some((m, p.line, v.col));
                    }
                    "portal_domain" => config.portal_domain = p.value::<DomainName>(v, "domain")?,
                    "resolver" => config.resolver = Some(p.value(v, "IPv4 address")?),
                    "controller_listen_at" => config.controller_listen_at = p.value(v, "tick")?,
                    "tcp_timeout" => config.tcp_timeout = p.value(v, "tick count")?,
                    "max_redirects" => config.max_redirects = p.value(v, "count")?,
                    "auth_channel" => {
                        config.auth_channel = match v.text {
                            "on" => true,
                            "off" => false,
                            _ => return Err(p.err(v.col, DiagCode::BadValue, "auth_channel is on or off")),
                        }
                    }
                    other => {
                        return Err(p.err(
                            first.col,
                            DiagCode::UnknownDirective,
                            format!("unknown capture setting {other:?}"),
                        ))
                    }
                }
            }
            Section::Credentials => {
                p.arity(&toks, 2, 2, "<user> <password>")?;
                config.credentials.insert(toks[0].text, toks[1].text);
            }
            Section::Zone => {
                p.arity(&toks, 2, 2, "<name> <ipv4>")?;
                let name = p.value::<DomainName>(&toks[0], "domain")?;
                config.zone.insert(name, p.value(&toks[1], "IPv4 address")?);
            }
            Section::RewriteRules => {
                let rule = line.trim().parse::<RewriteRule>().map_err(|_| {
                    p.err(first.col, DiagCode::BadValue, "rule is `udp|tcp [dst=<ip>] [dport=<port>] -> <ip>[:<port>]`")
                })?;
                rules.push(rule);
            }
            Section::Script => script.push(script_line(&p, &toks)?),
        }
    }

    let topology = topology.ok_or_else(|| ScenarioError {
        line: 1,
        col: 1,
        code: DiagCode::MissingTopology,
        message: "scenario has no [topology] section".into(),
    })?;
    config.dns_mode = match dns_mode.clone() {
        Some((DnsModeSpec::Dnat(_), ..)) => DnsModeSpec::Dnat(rules),
        Some((m, ..)) => m,
        None => match config.technique {
            CaptureTechnique::DnsSpoofing => DnsModeSpec::SpoofAll,
            CaptureTechnique::IpForgery => DnsModeSpec::Proxy,
        },
    };
    if !config.dns_mode.pairs_with(config.technique) {
        let (line, col) = dns_mode.map_or(technique_at, |(_, l, c)| (l, c));
        return Err(ScenarioError {
            line,
            col,
            code: DiagCode::BadPairing,
            message: format!(
                "technique {} cannot be used with dns_mode {}",
                config.technique.name(),
                config.dns_mode.name()
            ),
        });
    }
    topology.validate().map_err(|e| ScenarioError {
        line: topo_line,
        col: 1,
        code: DiagCode::InvalidTopology,
        message: e.to_string(),
    })?;

    let mut last = 0;
    for entry in &script {
        if entry.at < last {
            return Err(ScenarioError {
                line: entry.line,
                col: 4,
                code: DiagCode::TicksDecrease,
                message: format!("tick {} is earlier than the previous action at {last}", entry.at),
            });
        }
        last = entry.at;
        if !topology.hosts.iter().any(|h| h.name == entry.host && h.role == HostRole::User) {
            return Err(ScenarioError {
                line: entry.line,
                col: 4 + entry.at.to_string().len() + 1,
                code: DiagCode::UnknownHost,
                message: format!("no user host named {:?}", entry.host),
            });
        }
    }
    Ok(Scenario { topology, config, script })
}

fn topology_line(p: &Parser, topo: &mut Topology, toks: &[Tok], line: &str) -> Result<(), ScenarioError> {
    let first = &toks[0];
    match first.text {
        "preset" => {
            p.arity(toks, 2, 3, "preset fig1 [users=<n>]")?;
            if toks[1].text != "fig1" {
                return Err(p.err(toks[1].col, DiagCode::BadValue, format!("unknown preset {:?}", toks[1].text)));
            }
            let users = match toks.get(2) {
                Some(t) => p.value(&p.kv(t, "users")?, "user count")?,
                None => 1,
            };
            if !(1..=200).contains(&users) {
                return Err(p.err(toks[2].col, DiagCode::BadValue, "users must be 1..=200"));
            }
            let sites = std::mem::take(&mut topo.sites);
            *topo = Topology::fig1(users);
            topo.sites = sites;
        }
        "subnet" => {
            p.arity(toks, 2, 2, "subnet <ipv4>/<prefix>")?;
            let t = &toks[1];
            let (net, len) =
                t.text.split_once('/').ok_or_else(|| p.err(t.col, DiagCode::BadValue, "subnet is <ipv4>/<prefix>"))?;
            topo.subnet = p.value(&Tok { col: t.col, text: net }, "IPv4 address")?;
            topo.prefix_len = p.value(&Tok { col: t.col + net.len() + 1, text: len }, "prefix length")?;
        }
        "switch" => {
            p.arity(toks, 3, 3, "switch <name> ports=<n>")?;
            let ports = p.value(&p.kv(&toks[2], "ports")?, "port count")?;
            topo.switches.push(SwitchSpec { name: toks[1].text.into(), port_count: ports });
        }
        "host" => {
            p.arity(toks, 4, 5, "host <name> mac=<mac> ip=<ipv4> [role=user|dns|portal|nat]")?;
            let mac: MacAddr = p.value(&p.kv(&toks[2], "mac")?, "MAC address")?;
            let ip: Ipv4Addr = p.value(&p.kv(&toks[3], "ip")?, "IPv4 address")?;
            let role = match toks.get(4) {
                None => HostRole::User,
                Some(t) => match p.kv(t, "role")?.text {
                    "user" => HostRole::User,
                    "dns" => HostRole::Dns,
                    "portal" => HostRole::Portal,
                    "nat" => HostRole::Nat,
                    other => return Err(p.err(t.col, DiagCode::BadValue, format!("unknown role {other:?}"))),
                },
            };
            topo.hosts.push(HostSpec { name: toks[1].text.into(), mac, ip, role });
        }
        "link" => {
            p.arity(toks, 3, 4, "link <node>[:<port>] <node>[:<port>] [latency=<n>]")?;
            let latency = match toks.get(3) {
                Some(t) => p.value(&p.kv(t, "latency")?, "latency")?,
                None => 1,
            };
            topo.links.push(LinkSpec { a: endpoint(p, &toks[1])?, b: endpoint(p, &toks[2])?, latency });
        }
        "site" => {
            if toks.len() < 4 {
                return Err(p.err(first.col, DiagCode::Syntax, "usage: site <domain> <ipv4> <page body...>"));
            }
            let domain = p.value::<DomainName>(&toks[1], "domain")?;
            let ip = p.value(&toks[2], "IPv4 address")?;
            let body = line[toks[3].col - 1..].trim_end().to_string();
            topo.sites.push(SiteSpec { domain, ip, body });
        }
        other => {
            return Err(p.err(first.col, DiagCode::UnknownDirective, format!("unknown topology directive {other:?}")))
        }
    }
    Ok(())
}

fn script_line(p: &Parser, toks: &[Tok]) -> Result<ScriptEntry, ScenarioError> {
    if toks[0].text != "at" || toks.len() < 4 {
        return Err(p.err(toks[0].col, DiagCode::Syntax, "usage: at <tick> <host> <action> ..."));
    }
    let at = p.value(&toks[1], "tick")?;
    let host = toks[2].text.to_string();
    let verb = &toks[3];
    let args = &toks[4..];
    let action = match verb.text {
        "http_get" => {
            if args.is_empty() || args.len() > 3 {
                return Err(p.err(verb.col, DiagCode::Syntax, "usage: http_get <url> [max_redirects=<n>] [every=<n>]"));
            }
            let mut max_redirects = None;
            let mut every = None;
            for t in &args[1..] {
                if t.text.starts_with("max_redirects=") {
                    max_redirects = Some(p.value(&p.kv(t, "max_redirects")?, "count")?);
                } else {
                    let n: u64 = p.value(&p.kv(t, "every")?, "tick count")?;
                    if n == 0 {
                        return Err(p.err(t.col, DiagCode::BadValue, "every must be at least 1"));
                    }
                    every = Some(n);
                }
            }
            Action::HttpGet { url: args[0].text.to_string(), max_redirects, every }
        }
        "login" => {
            if args.len() != 2 {
                return Err(p.err(verb.col, DiagCode::Syntax, "usage: login <user> <password>"));
            }
            Action::Login { user: args[0].text.into(), password: args[1].text.into() }
        }
        "dns_query" => {
            if args.len() != 1 {
                return Err(p.err(verb.col, DiagCode::Syntax, "usage: dns_query <name>"));
            }
            Action::DnsQuery { name: p.value(&args[0], "domain")? }
        }
        other => return Err(p.err(verb.col, DiagCode::UnknownDirective, format!("unknown action {other:?}"))),
    };
    Ok(ScriptEntry { at, host, action, line: p.line })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Livelock(Livelock),
}

impl Scenario {
    pub fn build(&self) -> Result<Network, BuildError> {
        let mut net = Network::new(&self.topology, &self.config)?;
        for e in &self.script {
            net.schedule(e.at, &e.host, e.action.clone()).expect("hosts checked at parse time");
        }
        Ok(net)
    }

    /// Builds and runs to completion. On livelock the partially run network
    /// is returned alongside the diagnostic.
    pub fn run(&self, budget: u64) -> Result<Network, (RunError, Option<Box<Network>>)> {
        let mut net = self.build().map_err(|e| (RunError::Build(e), None))?;
        match net.run_until_idle(budget) {
            Ok(_) => Ok(net),
            Err(l) => Err((RunError::Livelock(l), Some(Box::new(net)))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[topology]\npreset fig1 users=2\nsite news.example 93.184.216.34 NEWS PAGE\n";

    fn parse_err(text: &str) -> ScenarioError {
        parse_scenario(text).unwrap_err()
    }

    #[test]
    fn bundled_scenarios_parse() {
        for (name, text) in BUNDLED {
            parse_scenario(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn site_body_keeps_spaces() {
        let s = parse_scenario(BASE).unwrap();
        assert_eq!(s.topology.sites[0].body, "NEWS PAGE");
        assert_eq!(s.topology.hosts.len(), 5);
    }

    #[test]
    fn syntax_error_has_position() {
        let e = parse_err(&format!("{BASE}[script]\nat 5 u1 http_get\n"));
        assert_eq!((e.line, e.col, e.code), (5, 9, DiagCode::Syntax));
        let e = parse_err("[topology]\nhost h1 mac=zz ip=10.0.0.9\n");
        assert_eq!((e.line, e.col, e.code), (2, 13, DiagCode::BadValue));
        let e = parse_err("[nope]\n");
        assert_eq!(e.code, DiagCode::UnknownSection);
    }

    #[test]
    fn invariant_violations_have_distinct_codes() {
        let dec = parse_err(&format!("{BASE}[script]\nat 5 u1 dns_query a.example\nat 3 u1 dns_query a.example\n"));
        assert_eq!((dec.line, dec.code), (6, DiagCode::TicksDecrease));
        let host = parse_err(&format!("{BASE}[script]\nat 5 u9 dns_query a.example\n"));
        assert_eq!((host.line, host.col, host.code), (5, 6, DiagCode::UnknownHost));
        let server = parse_err(&format!("{BASE}[script]\nat 5 dns dns_query a.example\n"));
        assert_eq!(server.code, DiagCode::UnknownHost);
        let pair = parse_err(&format!("{BASE}[capture]\ntechnique dns_spoofing\ndns_mode proxy\n"));
        assert_eq!((pair.line, pair.col, pair.code), (6, 10, DiagCode::BadPairing));
        let codes = [dec.code, host.code, pair.code];
        assert!(codes.iter().all(|c| codes.iter().filter(|d| *d == c).count() == 1));
    }

    #[test]
    fn capture_defaults_follow_technique() {
        let s = parse_scenario(&format!("{BASE}[capture]\ntechnique ip_forgery\n")).unwrap();
        assert_eq!(s.config.dns_mode, DnsModeSpec::Proxy);
        let s = parse_scenario(&format!(
            "{BASE}[capture]\ntechnique ip_forgery\ndns_mode dnat\n[rewrite_rules]\nudp dport=53 -> 10.0.0.3\n"
        ))
        .unwrap();
        assert!(matches!(s.config.dns_mode, DnsModeSpec::Dnat(ref r) if r.len() == 1));
    }

    #[test]
    fn topology_errors_are_reported() {
        let e = parse_err("[topology]\npreset fig1 users=1\nhost x mac=02:00:00:00:00:09 ip=10.0.0.11\n");
        assert_eq!(e.code, DiagCode::InvalidTopology);
        assert!(e.message.contains("10.0.0.11"));
    }
}
