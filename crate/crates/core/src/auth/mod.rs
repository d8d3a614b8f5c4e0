//! Line protocol between the portal and the controller, plus the two
//! endpoint state machines that frame it over a byte stream.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::fabric::{AuthState, Controller, FabricEvent};
use crate::packets::MacAddr;

/// TCP port the controller listens on.
pub const AUTH_PORT: u16 = 6633;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthVerb {
    Auth,
    Query,
}

impl AuthVerb {
    pub fn as_str(self) -> &'static str {
        match self {
            AuthVerb::Auth => "AUTH",
            AuthVerb::Query => "QUERY",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthLineError {
    #[error("line is not terminated by LF")]
    MissingNewline,
    #[error("bad MAC address {0:?}")]
    BadMac(String),
    #[error("unknown verb {0:?}")]
    UnknownVerb(String),
    #[error("malformed line {0:?}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthCommand {
    pub verb: AuthVerb,
    pub mac: MacAddr,
}

impl fmt::Display for AuthCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.verb.as_str(), self.mac)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplyStatus {
    Ok,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthReply {
    pub status: ReplyStatus,
    pub state: Option<AuthState>,
}

impl AuthReply {
    pub const OK: AuthReply = AuthReply { status: ReplyStatus::Ok, state: None };
    pub const ERR_UNKNOWN: AuthReply = AuthReply { status: ReplyStatus::Unknown, state: None };

    pub fn with_state(state: AuthState) -> Self {
        AuthReply { status: ReplyStatus::Ok, state: Some(state) }
    }
}

impl fmt::Display for AuthReply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.status, self.state) {
            (ReplyStatus::Unknown, _) => f.write_str("ERR UNKNOWN"),
            (ReplyStatus::Ok, None) => f.write_str("OK"),
            (ReplyStatus::Ok, Some(AuthState::Authorized)) => f.write_str("OK AUTHORIZED"),
            (ReplyStatus::Ok, Some(AuthState::Unauthorized)) => f.write_str("OK UNAUTHORIZED"),
        }
    }
}

fn strip_lf(line: &str) -> Result<&str, AuthLineError> {
    let body = line.strip_suffix('\n').ok_or(AuthLineError::MissingNewline)?;
    if body.contains('\n') {
        return Err(AuthLineError::Malformed(line.to_string()));
    }
    Ok(body)
}

pub fn encode_command(cmd: &AuthCommand) -> String {
    format!("{cmd}\n")
}

pub fn decode_command(line: &str) -> Result<AuthCommand, AuthLineError> {
    let body = strip_lf(line)?;
    let (verb, rest) = body.split_once(' ').unwrap_or((body, ""));
    let verb = match verb {
        "AUTH" => AuthVerb::Auth,
        "QUERY" => AuthVerb::Query,
        other => return Err(AuthLineError::UnknownVerb(other.to_string())),
    };
    let mac = rest.parse().map_err(|_| AuthLineError::BadMac(rest.to_string()))?;
    Ok(AuthCommand { verb, mac })
}

pub fn encode_reply(reply: &AuthReply) -> String {
    format!("{reply}\n")
}

pub fn decode_reply(line: &str) -> Result<AuthReply, AuthLineError> {
    match strip_lf(line)? {
        "OK" => Ok(AuthReply::OK),
        "OK AUTHORIZED" => Ok(AuthReply::with_state(AuthState::Authorized)),
        "OK UNAUTHORIZED" => Ok(AuthReply::with_state(AuthState::Unauthorized)),
        "ERR UNKNOWN" => Ok(AuthReply::ERR_UNKNOWN),
        other => match other.split(' ').next() {
            Some("OK" | "ERR") => Err(AuthLineError::Malformed(line.to_string())),
            Some(v) => Err(AuthLineError::UnknownVerb(v.to_string())),
            None => Err(AuthLineError::Malformed(line.to_string())),
        },
    }
}

/// Applies one command to the controller.
pub fn server_handle_command(ctrl: &mut Controller, cmd: AuthCommand) -> (AuthReply, Vec<FabricEvent>) {
    match cmd.verb {
        AuthVerb::Auth => (AuthReply::OK, ctrl.authorize_mac(cmd.mac)),
        AuthVerb::Query => (AuthReply::with_state(ctrl.auth().state(cmd.mac)), Vec::new()),
    }
}

/// Splits a byte stream into LF-terminated lines.
#[derive(Debug, Clone, Default)]
pub struct LineBuffer {
    buf: Vec<u8>,
}

impl LineBuffer {
    pub fn push(&mut self, bytes: &[u8]) -> Vec<String> {
        self.buf.extend_from_slice(bytes);
        let mut lines = Vec::new();
        while let Some(pos) = self.buf.iter().position(|&b| b == b'\n') {
            let line: Vec<u8> = self.buf.drain(..=pos).collect();
            lines.push(String::from_utf8_lossy(&line).into_owned());
        }
        lines
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

/// One line handled by the server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerExchange {
    pub line: String,
    pub reply: String,
    pub command: Option<AuthCommand>,
    pub events: Vec<FabricEvent>,
}

/// Controller side of the channel.
#[derive(Debug, Clone, Default)]
pub struct AuthServer {
    input: LineBuffer,
    pub commands_seen: usize,
}

impl AuthServer {
    pub fn on_bytes(&mut self, ctrl: &mut Controller, bytes: &[u8]) -> Vec<ServerExchange> {
        self.input
            .push(bytes)
            .into_iter()
            .map(|line| {
                self.commands_seen += 1;
                match decode_command(&line) {
                    Ok(cmd) => {
                        let (reply, events) = server_handle_command(ctrl, cmd);
                        ServerExchange { line, reply: encode_reply(&reply), command: Some(cmd), events }
                    }
                    Err(_) => ServerExchange {
                        line,
                        reply: encode_reply(&AuthReply::ERR_UNKNOWN),
                        command: None,
                        events: Vec::new(),
                    },
                }
            })
            .collect()
    }
}

/// Portal side of the channel: remembers which command each reply answers.
#[derive(Debug, Clone, Default)]
pub struct AuthClient {
    input: LineBuffer,
    outstanding: VecDeque<AuthCommand>,
    pub commands_sent: usize,
}

impl AuthClient {
    /// Bytes to write for `cmd`.
    pub fn send(&mut self, cmd: AuthCommand) -> Vec<u8> {
        self.outstanding.push_back(cmd);
        self.commands_sent += 1;
        encode_command(&cmd).into_bytes()
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    /// Replies completed by `bytes`, paired with the command they answer.
    pub fn on_bytes(&mut self, bytes: &[u8]) -> Vec<(Option<AuthCommand>, String, Result<AuthReply, AuthLineError>)> {
        self.input
            .push(bytes)
            .into_iter()
            .map(|line| {
                let cmd = self.outstanding.pop_front();
                let reply = decode_reply(&line);
                (cmd, line, reply)
            })
            .collect()
    }
}
