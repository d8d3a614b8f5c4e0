//! Turns a trace into a message sequence chart: one lifeline per
//! participant, arrows for protocol messages, notes for side effects.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::trace::{TraceEvent, TraceKind};

pub const FABRIC: &str = "fabric";
pub const CONTROLLER: &str = "controller";
/// Server lifelines always drawn after the fabric, in this order.
const STANDARD: [&str; 4] = ["dns", "portal", CONTROLLER, "nat"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lifeline {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arrow {
    pub tick: u64,
    pub from: String,
    pub to: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SequenceItem {
    Arrow(Arrow),
    Note { tick: u64, over: String, text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SequenceDiagram {
    pub lifelines: Vec<Lifeline>,
    pub items: Vec<SequenceItem>,
}

impl SequenceDiagram {
    pub fn arrows(&self) -> impl Iterator<Item = &Arrow> {
        self.items.iter().filter_map(|i| match i {
            SequenceItem::Arrow(a) => Some(a),
            SequenceItem::Note { .. } => None,
        })
    }

    pub fn arrow_labels(&self) -> Vec<&str> {
        self.arrows().map(|a| a.label.as_str()).collect()
    }
}

impl fmt::Display for SequenceDiagram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.lifelines.iter().map(|l| l.name.as_str()).collect();
        writeln!(f, "participants: {}", names.join(", "))?;
        for item in &self.items {
            match item {
                SequenceItem::Arrow(a) => writeln!(f, "{:>6}  {} -> {}: {}", a.tick, a.from, a.to, a.label)?,
                SequenceItem::Note { tick, over, text } => writeln!(f, "{tick:>6}  note over {over}: {text}")?,
            }
        }
        Ok(())
    }
}

fn strip_port(addr: &str) -> &str {
    addr.split_once(':').map_or(addr, |(ip, _)| ip)
}

fn page_label(ev: &TraceEvent) -> String {
    let status = ev.get("status").unwrap_or("?");
    match ev.get("page").unwrap_or("other") {
        "login" => format!("{status} login page"),
        "redirect" => format!("{status} redirect {}", ev.get("location").unwrap_or("?")),
        "already-authorized" => format!("{status} already authorized"),
        p => match p.strip_prefix("site:") {
            Some(d) => format!("{status} site page {d}"),
            None => format!("{status} {p}"),
        },
    }
}

struct Builder {
    users: Vec<String>,
    others: Vec<String>,
    items: Vec<SequenceItem>,
}

impl Builder {
    fn touch(&mut self, name: &str, user: bool) {
        if self.users.iter().chain(&self.others).any(|n| n == name) {
            return;
        }
        let list = if user { &mut self.users } else { &mut self.others };
        list.push(name.to_string());
    }

    fn arrow(&mut self, tick: u64, from: &str, to: &str, label: String) {
        self.items.push(SequenceItem::Arrow(Arrow { tick, from: from.into(), to: to.into(), label }));
    }

    fn note(&mut self, tick: u64, over: &str, text: String) {
        let dup = matches!(self.items.last(),
            Some(SequenceItem::Note { over: o, text: t, .. }) if o == over && *t == text);
        if !dup {
            self.items.push(SequenceItem::Note { tick, over: over.into(), text });
        }
    }
}

/// Builds the chart from trace events. Frame-level events are folded into
/// the fabric lifeline; only policy drops and portal steering show up, as
/// notes.
pub fn render_sequence(events: &[TraceEvent]) -> SequenceDiagram {
    // First transmitter of each address is its owner.
    let mut owner: BTreeMap<String, String> = BTreeMap::new();
    for ev in events.iter().filter(|e| e.kind == TraceKind::FrameTx) {
        if let (Some(ip), Some(node)) = (ev.get("ip_src"), ev.get("node")) {
            owner.entry(strip_port(ip).to_string()).or_insert_with(|| node.to_string());
        }
    }
    // Responder of each HTTP exchange, keyed by client node and connection.
    let mut responder: BTreeMap<(String, String), String> = BTreeMap::new();
    for ev in events.iter().filter(|e| e.kind == TraceKind::HttpRx) {
        if let (Some(node), Some(conn), Some(from)) = (ev.get("node"), ev.get("conn"), ev.get("from")) {
            responder.insert((node.into(), conn.into()), from.into());
        }
    }

    let mut b = Builder { users: Vec::new(), others: Vec::new(), items: Vec::new() };
    let mut asked: BTreeSet<(String, String)> = BTreeSet::new();
    for ev in events {
        let t = ev.tick;
        match ev.kind {
            TraceKind::DnsAnswer => {
                let server = ev.get("node").unwrap_or("dns");
                let client_ip = strip_port(ev.get("client").unwrap_or("?"));
                let client = owner.get(client_ip).map_or(client_ip, String::as_str).to_string();
                let name = ev.get("name").unwrap_or("?");
                b.touch(&client, true);
                b.touch(server, false);
                let verb = if asked.insert((client.clone(), name.to_string())) { "DNS query" } else { "DNS re-query" };
                b.arrow(t, &client, server, format!("{verb} {name}"));
                let answer = match (ev.get("rcode"), ev.get("answer")) {
                    (Some("0"), Some(ip)) if ev.get("spoofed") == Some("true") => format!("spoofed answer {ip}"),
                    (Some("0"), Some(ip)) => format!("genuine answer {ip}"),
                    (Some("3"), _) => format!("NXDOMAIN {name}"),
                    (rcode, _) => format!("rcode {}", rcode.unwrap_or("?")),
                };
                b.arrow(t, server, &client, answer);
            }
            TraceKind::HttpTx => {
                let node = ev.get("node").unwrap_or("?").to_string();
                let conn = ev.get("conn").unwrap_or("?").to_string();
                let to = responder
                    .get(&(node.clone(), conn))
                    .cloned()
                    .or_else(|| ev.get("dst").and_then(|d| owner.get(strip_port(d)).cloned()))
                    .unwrap_or_else(|| "?".into());
                b.touch(&node, true);
                b.touch(&to, false);
                let label = format!(
                    "{} {} Host: {}",
                    ev.get("method").unwrap_or("?"),
                    ev.get("path").unwrap_or("/"),
                    ev.get("host").unwrap_or("?")
                );
                b.arrow(t, &node, &to, label);
            }
            TraceKind::HttpRx => {
                let node = ev.get("node").unwrap_or("?");
                let from = ev.get("from").unwrap_or("?");
                if ev.get("page") == Some("login-result") {
                    let text = match ev.get("status") {
                        Some("200") => "login accepted".to_string(),
                        s => format!("login rejected ({})", s.unwrap_or("?")),
                    };
                    b.note(t, node, text);
                } else {
                    b.arrow(t, from, node, page_label(ev));
                }
            }
            TraceKind::AuthLine => {
                let line = ev.get("line").unwrap_or("").trim_end().to_string();
                let from = ev.get("from").unwrap_or("?");
                b.touch(from, false);
                if ev.get("dir") == Some("cmd") {
                    b.touch(CONTROLLER, false);
                    b.arrow(t, from, CONTROLLER, line);
                } else {
                    b.note(t, ev.get("to").unwrap_or("?"), format!("controller replied {line}"));
                }
            }
            TraceKind::Drop if ev.get("reason") == Some("policy") => {
                let text = format!("dropped {} -> {}", ev.get("src").unwrap_or("?"), ev.get("dst").unwrap_or("?"));
                b.note(t, FABRIC, text);
            }
            TraceKind::PacketOut if ev.get("redirected") == Some("true") => {
                b.note(t, FABRIC, "steered to portal".into());
            }
            TraceKind::HostError => {
                let node = ev.get("node").unwrap_or("?");
                b.note(t, node, format!("error {}", ev.get("error").unwrap_or("?")));
            }
            _ => {}
        }
    }

    let mut names: Vec<String> = if b.users.is_empty() { vec!["user".into()] } else { b.users.clone() };
    names.push(FABRIC.into());
    names.extend(STANDARD.iter().map(|s| s.to_string()));
    for n in &b.others {
        if !names.contains(n) {
            names.push(n.clone());
        }
    }
    SequenceDiagram { lifelines: names.into_iter().map(|name| Lifeline { name }).collect(), items: b.items }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::parse_trace;

    #[test]
    fn fixed_trace_renders() {
        let text = "portaltrace/1\n\
            1 FrameTx ip_src=10.0.0.11:5 node=u1\n\
            2 DnsAnswer answer=10.0.0.2 client=10.0.0.11:5 name=a.example node=dns rcode=0 spoofed=true\n\
            3 PacketOut redirected=true switch=s1\n\
            3 PacketOut redirected=true switch=s2\n\
            4 HttpTx conn=7 host=a.example method=GET node=u1 path=/\n\
            5 HttpRx conn=7 from=portal node=u1 page=login status=200\n\
            6 AuthLine dir=cmd from=portal line=AUTH%20m%0A\n\
            7 AuthLine dir=reply from=controller line=OK%0A to=portal\n";
        let d = render_sequence(&parse_trace(text).unwrap());
        assert_eq!(
            d.arrow_labels(),
            ["DNS query a.example", "spoofed answer 10.0.0.2", "GET / Host: a.example", "200 login page", "AUTH m"]
        );
        let names: Vec<_> = d.lifelines.iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, ["u1", "fabric", "dns", "portal", "controller", "nat"]);
        // consecutive identical notes collapse
        assert_eq!(d.items.len(), 7);
        assert!(d.to_string().contains("note over portal: controller replied OK"));
    }

    #[test]
    fn empty_trace_has_lifelines_only() {
        let d = render_sequence(&[]);
        assert!(d.items.is_empty());
        assert_eq!(d.to_string(), "participants: user, fabric, dns, portal, controller, nat\n");
    }
}
