//! Minimal HTTP/1.1 text form: one request or response per connection.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HttpError {
    #[error("HTTP message truncated")]
    Truncated,
    #[error("malformed start line {0:?}")]
    BadStartLine(String),
    #[error("unsupported method {0:?}")]
    BadMethod(String),
    #[error("unsupported HTTP version {0:?}")]
    BadVersion(String),
    #[error("malformed header line {0:?}")]
    BadHeader(String),
    #[error("invalid Content-Length {0:?}")]
    BadContentLength(String),
    #[error("{0} octets follow the declared body")]
    TrailingData(usize),
    #[error("message is not valid UTF-8")]
    BadEncoding,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HttpMessage {
    Request { method: Method, path: String, headers: Vec<(String, String)>, body: String },
    Response { status: u16, headers: Vec<(String, String)>, body: String },
}

pub fn reason_phrase(status: u16) -> &'static str {
    match status {
        200 => "OK",
        302 => "Found",
        400 => "Bad Request",
        403 => "Forbidden",
        404 => "Not Found",
        503 => "Service Unavailable",
        _ => "Unknown",
    }
}

impl HttpMessage {
    pub fn get(path: &str, host: &str) -> Self {
        HttpMessage::Request {
            method: Method::Get,
            path: path.to_string(),
            headers: vec![("Host".into(), host.into())],
            body: String::new(),
        }
    }

    pub fn response(status: u16, body: impl Into<String>) -> Self {
        HttpMessage::Response { status, headers: Vec::new(), body: body.into() }
    }

    pub fn redirect(location: &str) -> Self {
        HttpMessage::Response { status: 302, headers: vec![("Location".into(), location.into())], body: String::new() }
    }

    pub fn headers(&self) -> &[(String, String)] {
        match self {
            HttpMessage::Request { headers, .. } | HttpMessage::Response { headers, .. } => headers,
        }
    }

    pub fn body(&self) -> &str {
        match self {
            HttpMessage::Request { body, .. } | HttpMessage::Response { body, .. } => body,
        }
    }

    /// Case-insensitive header lookup; first occurrence wins.
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers().iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            HttpMessage::Response { status, .. } => Some(*status),
            HttpMessage::Request { .. } => None,
        }
    }

    pub fn render(&self) -> Vec<u8> {
        let mut out = String::new();
        match self {
            HttpMessage::Request { method, path, .. } => {
                out.push_str(&format!("{method} {path} HTTP/1.1\r\n"));
            }
            HttpMessage::Response { status, .. } => {
                out.push_str(&format!("HTTP/1.1 {status} {}\r\n", reason_phrase(*status)));
            }
        }
        for (k, v) in self.headers() {
            out.push_str(&format!("{k}: {v}\r\n"));
        }
        let body = self.body();
        if !body.is_empty() {
            out.push_str(&format!("Content-Length: {}\r\n", body.len()));
        }
        out.push_str("\r\n");
        out.push_str(body);
        out.into_bytes()
    }

    /// Parses exactly one message. `Content-Length` is consumed and not kept
    /// in `headers`; without it the body must be empty.
    pub fn parse(wire: &[u8]) -> Result<Self, HttpError> {
        let text = std::str::from_utf8(wire).map_err(|_| HttpError::BadEncoding)?;
        let head_end = text.find("\r\n\r\n").ok_or(HttpError::Truncated)?;
        let head = &text[..head_end];
        let rest = &text[head_end + 4..];
        let mut lines = head.split("\r\n");
        let start = lines.next().unwrap_or_default();

        let mut headers = Vec::new();
        let mut content_length: Option<usize> = None;
        for line in lines {
            let (k, v) = line.split_once(':').ok_or_else(|| HttpError::BadHeader(line.to_string()))?;
            if k.is_empty() || !k.bytes().all(is_token_byte) {
                return Err(HttpError::BadHeader(line.to_string()));
            }
            let v = v.trim_start_matches([' ', '\t']);
            if k.eq_ignore_ascii_case("content-length") {
                let n = v.parse::<usize>().map_err(|_| HttpError::BadContentLength(v.to_string()))?;
                if content_length.replace(n).is_some() {
                    return Err(HttpError::BadContentLength(v.to_string()));
                }
            } else {
                headers.push((k.to_string(), v.to_string()));
            }
        }
        let want = content_length.unwrap_or(0);
        if rest.len() < want {
            return Err(HttpError::Truncated);
        }
        if rest.len() > want {
            return Err(HttpError::TrailingData(rest.len() - want));
        }
        let body = rest.to_string();

        let parts: Vec<&str> = start.split(' ').collect();
        if start.starts_with("HTTP/") {
            if parts.len() < 2 {
                return Err(HttpError::BadStartLine(start.to_string()));
            }
            if parts[0] != "HTTP/1.1" {
                return Err(HttpError::BadVersion(parts[0].to_string()));
            }
            let status = parts[1]
                .parse::<u16>()
                .ok()
                .filter(|s| (100..=999).contains(s))
                .ok_or_else(|| HttpError::BadStartLine(start.to_string()))?;
            Ok(HttpMessage::Response { status, headers, body })
        } else {
            if parts.len() != 3 {
                return Err(HttpError::BadStartLine(start.to_string()));
            }
            let method = match parts[0] {
                "GET" => Method::Get,
                "POST" => Method::Post,
                other => return Err(HttpError::BadMethod(other.to_string())),
            };
            if parts[2] != "HTTP/1.1" {
                return Err(HttpError::BadVersion(parts[2].to_string()));
            }
            if !parts[1].starts_with('/') {
                return Err(HttpError::BadStartLine(start.to_string()));
            }
            Ok(HttpMessage::Request { method, path: parts[1].to_string(), headers, body })
        }
    }
}

fn is_token_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b"!#$%&'*+-.^_`|~".contains(&b)
}
