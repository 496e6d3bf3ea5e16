//! In-process stand-in for an IPFS daemon: the API routes the remote backend
//! uses plus the `/ipfs/<cid>` gateway route, all on one port.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use cidledger::Cid;
use tiny_http::{Header, Method, Request, Response, Server};

#[derive(Default)]
struct State {
    objects: HashMap<String, Vec<u8>>,
    pinned: HashSet<String>,
}

pub struct FakeDaemon {
    pub addr: String,
    state: Arc<Mutex<State>>,
    server: Arc<Server>,
    handle: Option<JoinHandle<()>>,
}

impl FakeDaemon {
    pub fn start() -> FakeDaemon {
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind fake daemon"));
        let addr = server.server_addr().to_ip().expect("ip listener").to_string();
        let state = Arc::new(Mutex::new(State::default()));
        let (srv, st) = (server.clone(), state.clone());
        let handle = std::thread::spawn(move || {
            for req in srv.incoming_requests() {
                handle(req, &st);
            }
        });
        FakeDaemon { addr, state, server, handle: Some(handle) }
    }

    pub fn remote_config(&self) -> cidledger::cas::RemoteConfig {
        cidledger::cas::RemoteConfig {
            api_addr: self.addr.clone(),
            gateway_addr: self.addr.clone(),
            timeout_s: 10,
            ..Default::default()
        }
    }

    /// Replaces the stored bytes behind `cid`.
    pub fn overwrite(&self, cid: &str, bytes: &[u8]) {
        self.state.lock().unwrap().objects.insert(cid.to_string(), bytes.to_vec());
    }

    pub fn remove(&self, cid: &str) {
        let mut st = self.state.lock().unwrap();
        st.objects.remove(cid);
        st.pinned.remove(cid);
    }

    pub fn is_pinned(&self, cid: &str) -> bool {
        self.state.lock().unwrap().pinned.contains(cid)
    }
}

impl Drop for FakeDaemon {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'%' if i + 2 < bytes.len() => {
                let hex = std::str::from_utf8(&bytes[i + 1..i + 3]).unwrap();
                out.push(u8::from_str_radix(hex, 16).unwrap());
                i += 3;
            }
            b'+' => {
                out.push(b' ');
                i += 1;
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    String::from_utf8(out).unwrap()
}

fn query(url: &str) -> HashMap<String, String> {
    url.split_once('?')
        .map(|(_, q)| q)
        .unwrap_or("")
        .split('&')
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), percent_decode(v)))
        .collect()
}

/// Body of the first part of a multipart/form-data request.
fn first_part(content_type: &str, body: &[u8]) -> Option<Vec<u8>> {
    let boundary = content_type.split("boundary=").nth(1)?.trim_matches('"');
    let delim = format!("--{boundary}");
    let start = find(body, delim.as_bytes())? + delim.len();
    let headers_end = start + find(&body[start..], b"\r\n\r\n")? + 4;
    let end_delim = format!("\r\n--{boundary}");
    let end = headers_end + find(&body[headers_end..], end_delim.as_bytes())?;
    Some(body[headers_end..end].to_vec())
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

fn json(status: u16, value: serde_json::Value) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_data(value.to_string().into_bytes())
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").unwrap())
}

fn daemon_error(msg: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    json(500, serde_json::json!({"Message": msg, "Code": 0, "Type": "error"}))
}

fn handle(mut req: Request, state: &Mutex<State>) {
    let url = req.url().to_string();
    let path = url.split('?').next().unwrap_or("").to_string();
    let q = query(&url);
    let arg = q.get("arg").cloned().unwrap_or_default();
    let resp = match (req.method().clone(), path.as_str()) {
        (Method::Post, "/api/v0/version") => json(200, serde_json::json!({"Version": "0.0.0-fake"})),
        (Method::Post, "/api/v0/add") => {
            let ct = req
                .headers()
                .iter()
                .find(|h| h.field.equiv("Content-Type"))
                .map(|h| h.value.as_str().to_string())
                .unwrap_or_default();
            let mut body = Vec::new();
            req.as_reader().read_to_end(&mut body).unwrap();
            match first_part(&ct, &body) {
                Some(content) => {
                    let cid = Cid::for_content(&content).to_string();
                    let size = content.len();
                    state.lock().unwrap().objects.insert(cid.clone(), content);
                    json(200, serde_json::json!({"Name": "blob", "Hash": cid, "Size": size.to_string()}))
                }
                None => daemon_error("file argument 'path' is required"),
            }
        }
        (Method::Post, "/api/v0/cat") => match state.lock().unwrap().objects.get(&arg) {
            Some(bytes) => Response::from_data(bytes.clone()),
            None => daemon_error("block was not found locally (offline): ipld: could not find node"),
        },
        (Method::Post, "/api/v0/pin/add") => {
            let mut st = state.lock().unwrap();
            if st.objects.contains_key(&arg) {
                st.pinned.insert(arg.clone());
                json(200, serde_json::json!({"Pins": [arg]}))
            } else {
                daemon_error("block was not found locally (offline)")
            }
        }
        (Method::Post, "/api/v0/pin/ls") => {
            if state.lock().unwrap().pinned.contains(&arg) {
                json(200, serde_json::json!({"Keys": {arg: {"Type": "recursive"}}}))
            } else {
                daemon_error(&format!("path '{arg}' is not pinned"))
            }
        }
        (Method::Post, "/api/v0/files/stat") => {
            let cid = arg.trim_start_matches("/ipfs/").to_string();
            match state.lock().unwrap().objects.get(&cid) {
                Some(bytes) => json(
                    200,
                    serde_json::json!({"Hash": cid, "Size": bytes.len(), "CumulativeSize": bytes.len() + 11, "Type": "file"}),
                ),
                None => daemon_error("block was not found locally (offline)"),
            }
        }
        (Method::Get, p) if p.starts_with("/ipfs/") => {
            match state.lock().unwrap().objects.get(&p["/ipfs/".len()..]) {
                Some(bytes) => Response::from_data(bytes.clone()),
                None => Response::from_data(b"404 page not found".to_vec()).with_status_code(404),
            }
        }
        _ => Response::from_data(b"404 page not found".to_vec()).with_status_code(404),
    };
    let _ = req.respond(resp);
}
