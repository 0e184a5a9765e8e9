//! Blocking HTTP client for the gateway routes.

use std::time::Duration;

use serde_json::Value;

use crate::api::REQUEST_ID;
use crate::error::ApiError;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{0}")]
    Api(ApiError),
    #[error("cannot reach gateway: {0}")]
    Transport(String),
    #[error("unreadable response ({status}): {message}")]
    Decode { status: u16, message: String },
}

impl ClientError {
    /// Process exit code: 2 usage and other client errors, 3 auth, 4 not
    /// found, 5 server or connection.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Api(e) => match e.status {
                401 | 403 => 3,
                404 => 4,
                400..=499 => 2,
                _ => 5,
            },
            ClientError::Transport(_) | ClientError::Decode { .. } => 5,
        }
    }

    pub fn code(&self) -> &str {
        match self {
            ClientError::Api(e) => &e.code,
            ClientError::Transport(_) => "UNREACHABLE",
            ClientError::Decode { .. } => "BAD_RESPONSE",
        }
    }
}

/// A response body as received, plus its request id.
#[derive(Clone, Debug)]
pub struct Raw {
    pub status: u16,
    pub request_id: Option<String>,
    pub body: String,
}

impl Raw {
    pub fn json(&self) -> Result<Value, ClientError> {
        serde_json::from_str(&self.body)
            .map_err(|e| ClientError::Decode { status: self.status, message: e.to_string() })
    }
}

pub struct Client {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl Client {
    pub fn new(base: &str, token: Option<String>) -> Client {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Client { base: base.trim_end_matches('/').to_string(), token, agent }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn finish(&self, resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Raw, ClientError> {
        let mut resp = resp.map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let request_id = resp.headers().get(REQUEST_ID).and_then(|v| v.to_str().ok()).map(str::to_string);
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Decode { status, message: e.to_string() })?;
        if (200..300).contains(&status) {
            return Ok(Raw { status, request_id, body });
        }
        match serde_json::from_str::<ApiError>(&body) {
            Ok(e) => Err(ClientError::Api(e)),
            Err(_) => Err(ClientError::Decode { status, message: body }),
        }
    }

    fn auth(&self) -> Option<String> {
        self.token.as_ref().map(|t| format!("Bearer {t}"))
    }

    pub fn get(&self, path: &str, query: &[(&str, &str)]) -> Result<Raw, ClientError> {
        let mut req = self.agent.get(self.url(path));
        for (k, v) in query {
            req = req.query(*k, *v);
        }
        if let Some(a) = self.auth() {
            req = req.header("authorization", a);
        }
        self.finish(req.call())
    }

    pub fn delete(&self, path: &str) -> Result<Raw, ClientError> {
        let mut req = self.agent.delete(self.url(path));
        if let Some(a) = self.auth() {
            req = req.header("authorization", a);
        }
        self.finish(req.call())
    }

    pub fn post(&self, path: &str, body: &Value) -> Result<Raw, ClientError> {
        let mut req = self.agent.post(self.url(path));
        if let Some(a) = self.auth() {
            req = req.header("authorization", a);
        }
        self.finish(req.send_json(body))
    }

    pub fn patch(&self, path: &str, body: &Value) -> Result<Raw, ClientError> {
        let mut req = self.agent.patch(self.url(path));
        if let Some(a) = self.auth() {
            req = req.header("authorization", a);
        }
        self.finish(req.send_json(body))
    }
}
