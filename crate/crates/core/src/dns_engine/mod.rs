//! The captive DNS server and its three answering strategies.

mod dnat;
mod zone;

use std::net::Ipv4Addr;

pub use dnat::{DnatResult, L4Proto, Rewrite, RewriteRule, RewriteRuleSet, RuleMatch, RuleParseError};
pub use zone::ZoneDb;

use crate::packets::{
    DnsKind, DnsMessage, DnsRecord, DomainName, CLASS_IN, RCODE_FORMERR, RCODE_NOERROR, RCODE_NXDOMAIN, TYPE_A,
};

/// TTL on spoofed answers; zero keeps clients from caching them past login.
pub const SPOOF_TTL: u32 = 0;
/// TTL on genuine answers.
pub const PROXY_TTL: u32 = 60;

pub const DEFAULT_PORTAL_DOMAIN: &str = "portal.local";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DnsMode {
    /// Every name resolves to the portal.
    SpoofAll { portal_ip: Ipv4Addr },
    /// Answers come from the upstream zone on the client's behalf.
    Proxy { upstream: ZoneDb },
    /// Port-53 traffic is rewritten toward this server, which answers from
    /// `inner`. The rules run on the gateway.
    Dnat { rules: RewriteRuleSet, inner: ZoneDb },
}

impl DnsMode {
    pub fn name(&self) -> &'static str {
        match self {
            DnsMode::SpoofAll { .. } => "spoof_all",
            DnsMode::Proxy { .. } => "proxy",
            DnsMode::Dnat { .. } => "dnat",
        }
    }
}

/// A response plus whether its answer was forged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsAnswer {
    pub message: DnsMessage,
    pub spoofed: bool,
}

fn respond(query: &DnsMessage, rcode: u8, answers: Vec<DnsRecord>) -> DnsMessage {
    DnsMessage {
        id: query.id,
        kind: DnsKind::Response,
        opcode: 0,
        rcode,
        recursion_desired: query.recursion_desired,
        recursion_available: true,
        questions: query.questions.clone(),
        answers,
    }
}

fn from_zone(query: &DnsMessage, zone: &ZoneDb, name: &DomainName) -> DnsMessage {
    match zone.lookup(name) {
        Some(ip) => respond(query, RCODE_NOERROR, vec![DnsRecord::a(name.clone(), PROXY_TTL, ip)]),
        None => respond(query, RCODE_NXDOMAIN, Vec::new()),
    }
}

/// Answers one query under `mode`. The portal's own name resolves to
/// `portal_ip` in every mode. Anything but a single A/IN question gets an
/// empty answer: FORMERR for the wrong question count, NXDOMAIN otherwise.
pub fn handle_dns_query(
    mode: &DnsMode,
    query: &DnsMessage,
    portal_ip: Ipv4Addr,
    portal_domain: &DomainName,
) -> DnsAnswer {
    if query.kind != DnsKind::Query || query.questions.len() != 1 {
        return DnsAnswer { message: respond(query, RCODE_FORMERR, Vec::new()), spoofed: false };
    }
    let q = &query.questions[0];
    if q.qtype != TYPE_A || q.qclass != CLASS_IN {
        return DnsAnswer { message: respond(query, RCODE_NXDOMAIN, Vec::new()), spoofed: false };
    }
    let name = &q.qname;
    match mode {
        DnsMode::SpoofAll { portal_ip: spoof } => DnsAnswer {
            message: respond(query, RCODE_NOERROR, vec![DnsRecord::a(name.clone(), SPOOF_TTL, *spoof)]),
            spoofed: name != portal_domain,
        },
        DnsMode::Proxy { upstream: zone } | DnsMode::Dnat { inner: zone, .. } => {
            let message = if name == portal_domain {
                respond(query, RCODE_NOERROR, vec![DnsRecord::a(name.clone(), PROXY_TTL, portal_ip)])
            } else {
                from_zone(query, zone, name)
            };
            DnsAnswer { message, spoofed: false }
        }
    }
}

/// The DNS server's configuration. Authorized clients are always answered
/// from `genuine`, so a client that has logged in under `SpoofAll` sees real
/// addresses on its next lookup.
#[derive(Debug, Clone)]
pub struct DnsEngine {
    pub mode: DnsMode,
    pub portal_ip: Ipv4Addr,
    pub portal_domain: DomainName,
    pub genuine: ZoneDb,
}

impl DnsEngine {
    pub fn answer(&self, query: &DnsMessage, client_authorized: bool) -> DnsAnswer {
        if client_authorized {
            if let DnsMode::SpoofAll { .. } = self.mode {
                let proxy = DnsMode::Proxy { upstream: self.genuine.clone() };
                return handle_dns_query(&proxy, query, self.portal_ip, &self.portal_domain);
            }
        }
        handle_dns_query(&self.mode, query, self.portal_ip, &self.portal_domain)
    }
}
