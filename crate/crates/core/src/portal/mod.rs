//! The captive web server: login page, credential check and, under IP
//! forgery, redirects for every foreign Host.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use crate::auth::{AuthCommand, AuthVerb};
use crate::dns_engine::DnsMode;
use crate::packets::{HttpMessage, MacAddr, Method};

pub const LOGIN_PAGE: &str = include_str!("../../assets/login.html");
pub const LOGIN_OK_PAGE: &str = include_str!("../../assets/login_ok.html");
pub const LOGIN_FAILED_PAGE: &str = include_str!("../../assets/login_failed.html");
pub const ALREADY_AUTHORIZED_PAGE: &str = include_str!("../../assets/already.html");

pub const LOGIN_MARKER: &str = "CAPTIVE-PORTAL-LOGIN";
pub const LOGIN_OK_MARKER: &str = "LOGIN-OK";
pub const LOGIN_FAILED_MARKER: &str = "LOGIN-FAILED";
pub const ALREADY_AUTHORIZED_MARKER: &str = "ALREADY-AUTHORIZED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptureTechnique {
    DnsSpoofing,
    IpForgery,
}

impl CaptureTechnique {
    pub fn name(self) -> &'static str {
        match self {
            CaptureTechnique::DnsSpoofing => "dns_spoofing",
            CaptureTechnique::IpForgery => "ip_forgery",
        }
    }

    /// DNS spoofing needs the spoofing resolver; IP forgery needs a truthful one.
    pub fn pairs_with(self, mode: &DnsMode) -> bool {
        matches!(
            (self, mode),
            (CaptureTechnique::DnsSpoofing, DnsMode::SpoofAll { .. })
                | (CaptureTechnique::IpForgery, DnsMode::Proxy { .. } | DnsMode::Dnat { .. })
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CredentialStore {
    users: BTreeMap<String, String>,
}

impl CredentialStore {
    pub fn insert(&mut self, user: impl Into<String>, password: impl Into<String>) {
        self.users.insert(user.into(), password.into());
    }

    pub fn check(&self, user: &str, password: &str) -> bool {
        self.users.get(user).is_some_and(|p| p == password)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.users.iter().map(|(u, p)| (u.as_str(), p.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Captive,
    LoggedIn,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortalSession {
    pub client_mac: MacAddr,
    pub client_ip: Ipv4Addr,
    pub state: SessionState,
}

impl PortalSession {
    pub fn captive(client_mac: MacAddr, client_ip: Ipv4Addr) -> Self {
        PortalSession { client_mac, client_ip, state: SessionState::Captive }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoginOutcome {
    pub response: HttpMessage,
    pub command: Option<AuthCommand>,
    pub session: PortalSession,
}

fn normalize_host(h: &str) -> String {
    let h =
        h.rsplit_once(':').map_or(h, |(name, port)| if port.bytes().all(|b| b.is_ascii_digit()) { name } else { h });
    h.trim_end_matches('.').to_ascii_lowercase()
}

#[derive(Debug, Clone)]
pub struct Portal {
    pub technique: CaptureTechnique,
    pub domain: String,
    pub credentials: CredentialStore,
    sessions: BTreeMap<MacAddr, PortalSession>,
}

impl Portal {
    pub fn new(technique: CaptureTechnique, domain: impl Into<String>, credentials: CredentialStore) -> Self {
        Portal { technique, domain: normalize_host(&domain.into()), credentials, sessions: BTreeMap::new() }
    }

    pub fn location(&self) -> String {
        format!("http://{}/", self.domain)
    }

    fn is_portal_host(&self, req: &HttpMessage) -> bool {
        req.header("host").is_some_and(|h| normalize_host(h) == self.domain)
    }

    /// The session for `mac`, created captive on first contact.
    pub fn session(&self, mac: MacAddr, ip: Ipv4Addr) -> PortalSession {
        self.sessions.get(&mac).cloned().unwrap_or_else(|| PortalSession::captive(mac, ip))
    }

    pub fn commit(&mut self, session: PortalSession) {
        self.sessions.insert(session.client_mac, session);
    }

    pub fn sessions(&self) -> impl Iterator<Item = &PortalSession> {
        self.sessions.values()
    }

    /// Non-login requests.
    pub fn handle_http(&self, client: &PortalSession, req: &HttpMessage) -> HttpMessage {
        let HttpMessage::Request { method, path, .. } = req else {
            return HttpMessage::response(400, "BAD-REQUEST");
        };
        if req.header("host").is_none() {
            return HttpMessage::response(400, "BAD-REQUEST");
        }
        let on_portal = self.is_portal_host(req);
        if self.technique == CaptureTechnique::IpForgery && !on_portal && client.state == SessionState::Captive {
            return HttpMessage::redirect(&self.location());
        }
        match (method, path.as_str(), client.state) {
            (Method::Get, "/", SessionState::Captive) => HttpMessage::response(200, LOGIN_PAGE),
            (Method::Get, "/", SessionState::LoggedIn) => HttpMessage::response(200, ALREADY_AUTHORIZED_PAGE),
            _ => HttpMessage::response(404, "NOT-FOUND"),
        }
    }

    /// `POST /login` with a form body `username=..&password=..`.
    pub fn handle_login(client: &PortalSession, req: &HttpMessage, creds: &CredentialStore) -> LoginOutcome {
        let unchanged = |response| LoginOutcome { response, command: None, session: client.clone() };
        let mut user = None;
        let mut pass = None;
        for (k, v) in url::form_urlencoded::parse(req.body().as_bytes()) {
            match k.as_ref() {
                "username" => user = Some(v.into_owned()),
                "password" => pass = Some(v.into_owned()),
                _ => {}
            }
        }
        let (Some(user), Some(pass)) = (user, pass) else {
            return unchanged(HttpMessage::response(400, "BAD-REQUEST"));
        };
        if !creds.check(&user, &pass) {
            return unchanged(HttpMessage::response(403, LOGIN_FAILED_PAGE));
        }
        let command = (client.state == SessionState::Captive)
            .then_some(AuthCommand { verb: AuthVerb::Auth, mac: client.client_mac });
        LoginOutcome {
            response: HttpMessage::response(200, LOGIN_OK_PAGE),
            command,
            session: PortalSession { state: SessionState::LoggedIn, ..client.clone() },
        }
    }

    /// Routes a request. The caller commits `session` once any emitted
    /// command has been delivered.
    pub fn handle(&self, client: &PortalSession, req: &HttpMessage) -> LoginOutcome {
        let is_login = matches!(req, HttpMessage::Request { method: Method::Post, path, .. } if path == "/login");
        let redirect = self.technique == CaptureTechnique::IpForgery
            && !self.is_portal_host(req)
            && client.state == SessionState::Captive;
        if is_login && !redirect && req.header("host").is_some() {
            Self::handle_login(client, req, &self.credentials)
        } else {
            LoginOutcome { response: self.handle_http(client, req), command: None, session: client.clone() }
        }
    }
}

/// Form body for a login POST.
pub fn login_form(user: &str, password: &str) -> String {
    url::form_urlencoded::Serializer::new(String::new())
        .append_pair("username", user)
        .append_pair("password", password)
        .finish()
}
