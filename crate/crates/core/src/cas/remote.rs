use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use reqwest::blocking::{multipart, Client, Response};
use serde::{Deserialize, Serialize};

use super::{BackendKind, CasError, Cid, ContentStat, ContentStore};
use crate::metrics::UploadMetrics;

/// Where [`RemoteStore::get`] reads content from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    /// `POST /api/v0/cat` on the API port.
    #[default]
    Api,
    /// `GET /ipfs/<cid>` on the read-only gateway port.
    Gateway,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// `host:port` or full base URL of the daemon API.
    pub api_addr: String,
    /// `host:port` or full base URL of the HTTP gateway.
    pub gateway_addr: String,
    pub retrieval: RetrievalMode,
    pub timeout_s: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            api_addr: "127.0.0.1:5001".to_string(),
            gateway_addr: "127.0.0.1:8080".to_string(),
            retrieval: RetrievalMode::Api,
            timeout_s: 60,
        }
    }
}

fn base_url(addr: &str) -> String {
    let addr = addr.trim_end_matches('/');
    if addr.starts_with("http://") || addr.starts_with("https://") {
        addr.to_string()
    } else {
        format!("http://{addr}")
    }
}

/// Client for an IPFS daemon's HTTP API.
#[derive(Debug)]
pub struct RemoteStore {
    api: String,
    gateway: String,
    retrieval: RetrievalMode,
    client: Client,
    // The daemon has no notion of "when was this added", so remember it
    // for content added through this client.
    added_at: Mutex<HashMap<String, DateTime<Utc>>>,
}

#[derive(Deserialize)]
struct AddResponse {
    #[serde(rename = "Hash")]
    hash: Option<String>,
}

#[derive(Deserialize)]
struct FilesStat {
    #[serde(rename = "Size")]
    size: u64,
}

#[derive(Deserialize)]
struct DaemonError {
    #[serde(rename = "Message")]
    message: String,
}

impl RemoteStore {
    pub fn new(config: &RemoteConfig) -> Result<RemoteStore, CasError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_s.max(1)))
            .build()
            .map_err(|e| CasError::Protocol(format!("building HTTP client: {e}")))?;
        Ok(RemoteStore {
            api: base_url(&config.api_addr),
            gateway: base_url(&config.gateway_addr),
            retrieval: config.retrieval,
            client,
            added_at: Mutex::new(HashMap::new()),
        })
    }

    /// Checks that the daemon answers `POST /api/v0/version`.
    pub fn ping(&self) -> Result<(), CasError> {
        let resp = self
            .client
            .post(format!("{}/api/v0/version", self.api))
            .send()
            .map_err(send_error)?;
        check(resp, "")?;
        Ok(())
    }

    /// Reads `cid` through the gateway regardless of the configured mode.
    pub fn get_via_gateway(&self, cid: &Cid) -> Result<Vec<u8>, CasError> {
        let resp = self
            .client
            .get(format!("{}/ipfs/{}", self.gateway, cid))
            .send()
            .map_err(send_error)?;
        if resp.status() == reqwest::StatusCode::NOT_FOUND {
            return Err(CasError::NotFound(cid.to_string()));
        }
        let resp = check(resp, cid.as_str())?;
        read_body(resp)
    }

    /// Reads `cid` through `POST /api/v0/cat`.
    pub fn cat(&self, cid: &Cid) -> Result<Vec<u8>, CasError> {
        let resp = self
            .client
            .post(format!("{}/api/v0/cat", self.api))
            .query(&[("arg", cid.as_str())])
            .send()
            .map_err(send_error)?;
        read_body(check(resp, cid.as_str())?)
    }

    fn add(&self, form: multipart::Form, size: u64) -> Result<(Cid, UploadMetrics), CasError> {
        let start = Instant::now();
        let resp = self
            .client
            .post(format!("{}/api/v0/add", self.api))
            .query(&[("pin", "false")])
            .multipart(form)
            .send()
            .map_err(send_error)?;
        let body = check(resp, "")?
            .text()
            .map_err(|e| CasError::Protocol(format!("reading add response: {e}")))?;
        let elapsed = start.elapsed().as_secs_f64();

        // The daemon may stream progress objects; the final one carries the root hash.
        let hash = body
            .lines()
            .filter(|l| !l.trim().is_empty())
            .filter_map(|l| serde_json::from_str::<AddResponse>(l).ok())
            .filter_map(|r| r.hash)
            .next_back()
            .ok_or_else(|| CasError::Protocol(format!("add response without Hash: {body}")))?;
        let cid = Cid::remote(&hash)?;
        self.added_at
            .lock()
            .expect("added_at poisoned")
            .insert(hash, Utc::now());
        Ok((cid, UploadMetrics::from_upload(size, elapsed)))
    }

    fn is_pinned(&self, cid: &Cid) -> Result<bool, CasError> {
        let resp = self
            .client
            .post(format!("{}/api/v0/pin/ls", self.api))
            .query(&[("arg", cid.as_str()), ("type", "recursive")])
            .send()
            .map_err(send_error)?;
        if resp.status().is_success() {
            return Ok(true);
        }
        match daemon_error(resp, cid.as_str()) {
            CasError::Protocol(msg) if msg.contains("not pinned") => Ok(false),
            other => Err(other),
        }
    }
}

impl ContentStore for RemoteStore {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn put(&self, content: &[u8]) -> Result<(Cid, UploadMetrics), CasError> {
        let part = multipart::Part::bytes(content.to_vec()).file_name("blob");
        self.add(multipart::Form::new().part("file", part), content.len() as u64)
    }

    fn put_file(&self, path: &Path) -> Result<(Cid, UploadMetrics), CasError> {
        let size = std::fs::metadata(path).map_err(CasError::Input)?.len();
        let form = multipart::Form::new()
            .file("file", path)
            .map_err(CasError::Input)?;
        self.add(form, size)
    }

    fn get(&self, cid: &Cid) -> Result<Vec<u8>, CasError> {
        match self.retrieval {
            RetrievalMode::Api => self.cat(cid),
            RetrievalMode::Gateway => self.get_via_gateway(cid),
        }
    }

    fn pin(&self, cid: &Cid) -> Result<ContentStat, CasError> {
        let resp = self
            .client
            .post(format!("{}/api/v0/pin/add", self.api))
            .query(&[("arg", cid.as_str())])
            .send()
            .map_err(send_error)?;
        check(resp, cid.as_str())?;
        self.stat(cid)
    }

    fn stat(&self, cid: &Cid) -> Result<ContentStat, CasError> {
        let resp = self
            .client
            .post(format!("{}/api/v0/files/stat", self.api))
            .query(&[("arg", format!("/ipfs/{cid}"))])
            .send()
            .map_err(send_error)?;
        let stat: FilesStat = check(resp, cid.as_str())?
            .json()
            .map_err(|e| CasError::Protocol(format!("parsing files/stat response: {e}")))?;
        let pinned = self.is_pinned(cid)?;
        let created_at = self
            .added_at
            .lock()
            .expect("added_at poisoned")
            .get(cid.as_str())
            .copied()
            .unwrap_or_else(Utc::now);
        Ok(ContentStat {
            size_bytes: stat.size,
            pinned,
            created_at: DateTime::from_timestamp_millis(created_at.timestamp_millis())
                .unwrap_or(created_at),
        })
    }

    fn parse_cid(&self, text: &str) -> Result<Cid, CasError> {
        Cid::remote(text)
    }
}

fn send_error(e: reqwest::Error) -> CasError {
    // Bodies are in memory, so a body error while sending means the transport dropped.
    if e.is_connect() || e.is_timeout() || e.is_body() || io_unreachable(&e) {
        CasError::Unreachable(e.to_string())
    } else {
        CasError::Protocol(e.to_string())
    }
}

fn io_unreachable(e: &reqwest::Error) -> bool {
    use std::io::ErrorKind::*;
    let mut src = std::error::Error::source(e);
    while let Some(err) = src {
        if let Some(io) = err.downcast_ref::<std::io::Error>() {
            return matches!(
                io.kind(),
                ConnectionRefused | ConnectionReset | ConnectionAborted | BrokenPipe | TimedOut
            );
        }
        src = err.source();
    }
    false
}

fn read_body(resp: Response) -> Result<Vec<u8>, CasError> {
    resp.bytes()
        .map(|b| b.to_vec())
        .map_err(|e| CasError::Protocol(format!("reading response body: {e}")))
}

fn check(resp: Response, cid: &str) -> Result<Response, CasError> {
    if resp.status().is_success() {
        Ok(resp)
    } else {
        Err(daemon_error(resp, cid))
    }
}

fn daemon_error(resp: Response, cid: &str) -> CasError {
    let status = resp.status();
    let body = resp.text().unwrap_or_default();
    let message = serde_json::from_str::<DaemonError>(&body)
        .map(|e| e.message)
        .unwrap_or(body);
    let lower = message.to_ascii_lowercase();
    if status == reqwest::StatusCode::NOT_FOUND
        || lower.contains("not found")
        || lower.contains("no link named")
    {
        CasError::NotFound(cid.to_string())
    } else if lower.contains("invalid") && (lower.contains("cid") || lower.contains("path")) {
        CasError::InvalidCid(cid.to_string())
    } else {
        CasError::Protocol(format!("{status}: {message}"))
    }
}
