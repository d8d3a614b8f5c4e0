//! Trace events and their one-line text form.
//!
//! A trace file starts with [`TRACE_VERSION`] on its own line, followed by
//! one event per line: `<tick> <Kind> key=value ...` with keys sorted and
//! values percent-escaped.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const TRACE_VERSION: &str = "portaltrace/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TraceKind {
    FrameTx,
    FrameRx,
    PacketIn,
    FlowMod,
    PacketOut,
    Drop,
    DnsAnswer,
    HttpTx,
    HttpRx,
    AuthLine,
    HostError,
}

impl TraceKind {
    pub const ALL: [TraceKind; 11] = [
        TraceKind::FrameTx,
        TraceKind::FrameRx,
        TraceKind::PacketIn,
        TraceKind::FlowMod,
        TraceKind::PacketOut,
        TraceKind::Drop,
        TraceKind::DnsAnswer,
        TraceKind::HttpTx,
        TraceKind::HttpRx,
        TraceKind::AuthLine,
        TraceKind::HostError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::FrameTx => "FrameTx",
            TraceKind::FrameRx => "FrameRx",
            TraceKind::PacketIn => "PacketIn",
            TraceKind::FlowMod => "FlowMod",
            TraceKind::PacketOut => "PacketOut",
            TraceKind::Drop => "Drop",
            TraceKind::DnsAnswer => "DnsAnswer",
            TraceKind::HttpTx => "HttpTx",
            TraceKind::HttpRx => "HttpRx",
            TraceKind::AuthLine => "AuthLine",
            TraceKind::HostError => "HostError",
        }
    }
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TraceKind {
    type Err = TraceParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TraceKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| TraceParseError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceParseError {
    #[error("missing tick")]
    MissingTick,
    #[error("bad tick {0:?}")]
    BadTick(String),
    #[error("missing event kind")]
    MissingKind,
    #[error("unknown event kind {0:?}")]
    UnknownKind(String),
    #[error("attribute {0:?} is not key=value")]
    BadAttribute(String),
    #[error("bad escape in {0:?}")]
    BadEscape(String),
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("keys out of order at {0:?}")]
    UnsortedKeys(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub tick: u64,
    pub kind: TraceKind,
    pub attrs: BTreeMap<String, String>,
}

impl TraceEvent {
    pub fn new(tick: u64, kind: TraceKind) -> Self {
        TraceEvent { tick, kind, attrs: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.attrs.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }

    pub fn parse_line(line: &str) -> Result<Self, TraceParseError> {
        let mut parts = line.split(' ');
        let tick = parts.next().filter(|t| !t.is_empty()).ok_or(TraceParseError::MissingTick)?;
        let tick = tick.parse().map_err(|_| TraceParseError::BadTick(tick.to_string()))?;
        let kind = parts.next().ok_or(TraceParseError::MissingKind)?.parse()?;
        let mut attrs = BTreeMap::new();
        let mut last: Option<String> = None;
        for part in parts {
            let (k, v) = part.split_once('=').ok_or_else(|| TraceParseError::BadAttribute(part.to_string()))?;
            let k = unescape(k)?;
            if last.as_deref().is_some_and(|l| l > k.as_str()) {
                return Err(TraceParseError::UnsortedKeys(k));
            }
            if attrs.insert(k.clone(), unescape(v)?).is_some() {
                return Err(TraceParseError::DuplicateKey(k));
            }
            last = Some(k);
        }
        Ok(TraceEvent { tick, kind, attrs })
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.tick, self.kind)?;
        for (k, v) in &self.attrs {
            write!(f, " {}={}", escape_key(k), escape(v))?;
        }
        Ok(())
    }
}

fn needs_escape(b: u8) -> bool {
    !(0x21..=0x7e).contains(&b) || b == b'%'
}

/// Percent-escapes spaces, `%`, and anything outside printable ASCII.
pub fn escape(s: &str) -> String {
    escape_with(s, false)
}

/// Keys additionally escape `=`, so the first raw `=` ends the key.
fn escape_key(s: &str) -> String {
    escape_with(s, true)
}

fn escape_with(s: &str, key: bool) -> String {
    let mut out = String::with_capacity(s.len());
    for &b in s.as_bytes() {
        if needs_escape(b) || (key && b == b'=') {
            out.push_str(&format!("%{b:02X}"));
        } else {
            out.push(b as char);
        }
    }
    out
}

pub fn unescape(s: &str) -> Result<String, TraceParseError> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = bytes
                .get(i + 1..i + 3)
                .and_then(|h| std::str::from_utf8(h).ok())
                .and_then(|h| u8::from_str_radix(h, 16).ok())
                .ok_or_else(|| TraceParseError::BadEscape(s.to_string()))?;
            out.push(hex);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|_| TraceParseError::BadEscape(s.to_string()))
}

/// Full trace text, header included.
pub fn render_trace(events: &[TraceEvent]) -> String {
    let mut out = String::from(TRACE_VERSION);
    out.push('\n');
    for e in events {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceFileError {
    #[error("missing version header")]
    MissingHeader,
    #[error("version header {found:?}, expected {TRACE_VERSION:?}")]
    VersionMismatch { found: String },
    #[error("line {line}: {source}")]
    Line { line: usize, source: TraceParseError },
}

/// Parses a whole trace file. Line numbers in errors are 1-based and count
/// the header.
pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>, TraceFileError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(TraceFileError::MissingHeader)?;
    if header != TRACE_VERSION {
        return Err(TraceFileError::VersionMismatch { found: header.to_string() });
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| TraceEvent::parse_line(l).map_err(|source| TraceFileError::Line { line: i + 2, source }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn line_format() {
        let e = TraceEvent::new(7, TraceKind::AuthLine).with("line", "AUTH aa:bb:cc:dd:ee:01\n").with("dir", "cmd");
        assert_eq!(e.to_string(), "7 AuthLine dir=cmd line=AUTH%20aa:bb:cc:dd:ee:01%0A");
        assert_eq!(TraceEvent::parse_line(&e.to_string()), Ok(e));
    }

    #[test]
    fn file_header() {
        assert_eq!(parse_trace("portaltrace/1\n"), Ok(vec![]));
        assert!(matches!(parse_trace("portaltrace/2\n"), Err(TraceFileError::VersionMismatch { .. })));
        assert!(matches!(parse_trace("portaltrace/1\n0 Nope\n"), Err(TraceFileError::Line { line: 2, .. })));
        assert!(matches!(TraceEvent::parse_line("0 Drop b=1 a=2"), Err(TraceParseError::UnsortedKeys(_))));
    }

    proptest! {
        #[test]
        fn roundtrip(tick in any::<u64>(), kind in 0usize..11,
                     attrs in proptest::collection::btree_map("\\PC{1,8}", "\\PC{0,12}", 0..6)) {
            let e = TraceEvent { tick, kind: TraceKind::ALL[kind], attrs };
            let line = e.to_string();
            prop_assert!(!line.contains('\n'));
            prop_assert_eq!(TraceEvent::parse_line(&line), Ok(e));
        }
    }
}
