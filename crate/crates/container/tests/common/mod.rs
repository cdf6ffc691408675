#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use ozy_container::{Container, ContainerConfig};
use serde_json::Value as Json;
use tokio::runtime::Runtime;

pub fn programs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../programs")
}

pub fn runtime() -> Runtime {
    tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap()
}

/// A config over `data`; `body` holds extra top-level keys and `[[tenants]]` tables.
pub fn config(data: &Path, body: &str) -> ContainerConfig {
    let text = format!("data_dir = '{}'\n{body}", data.display());
    ContainerConfig::from_toml(&text, "test.toml", &programs_dir()).unwrap()
}

pub fn start(cfg: &ContainerConfig, rt: &Runtime) -> Container {
    Container::start(cfg, rt.handle().clone()).unwrap()
}

/// What the stub answers to one request.
pub struct Reply {
    pub status: u16,
    pub body: String,
    pub delay_ms: u64,
}

impl Reply {
    pub fn ok(body: impl Into<String>) -> Reply {
        Reply { status: 200, body: body.into(), delay_ms: 0 }
    }

    pub fn status(status: u16, body: &str) -> Reply {
        Reply { status, body: body.into(), delay_ms: 0 }
    }

    pub fn after(mut self, ms: u64) -> Reply {
        self.delay_ms = ms;
        self
    }
}

type Behaviour = dyn Fn(&str, &[Json]) -> Reply + Send + Sync;

struct StubState {
    behave: Box<Behaviour>,
    log: Mutex<Vec<(String, String)>>,
    hits: AtomicUsize,
}

/// An HTTP service standing in for a partner endpoint. Records every request.
pub struct Stub {
    pub url: String,
    state: Arc<StubState>,
}

impl Stub {
    pub fn start(rt: &Runtime, behave: impl Fn(&str, &[Json]) -> Reply + Send + Sync + 'static) -> Stub {
        let state = Arc::new(StubState { behave: Box::new(behave), log: Mutex::new(Vec::new()), hits: AtomicUsize::new(0) });
        let app = Router::new().route("/{op}", post(handle)).with_state(state.clone());
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        rt.spawn(async move { axum::serve(listener, app).await.unwrap() });
        Stub { url, state }
    }

    pub fn requests(&self) -> Vec<(String, String)> {
        self.state.log.lock().unwrap().clone()
    }

    pub fn hits(&self) -> usize {
        self.state.hits.load(Ordering::SeqCst)
    }
}

async fn handle(State(s): State<Arc<StubState>>, UrlPath(op): UrlPath<String>, body: String) -> Response {
    s.hits.fetch_add(1, Ordering::SeqCst);
    s.log.lock().unwrap().push((op.clone(), body.clone()));
    let args = serde_json::from_str::<Json>(&body).ok().and_then(|j| j.get("args").and_then(Json::as_array).cloned()).unwrap_or_default();
    let r = (s.behave)(&op, &args);
    if r.delay_ms > 0 {
        tokio::time::sleep(Duration::from_millis(r.delay_ms)).await;
    }
    (StatusCode::from_u16(r.status).unwrap(), [("content-type", "application/json")], r.body).into_response()
}

/// Polls `f` until it holds or `ms` elapse.
pub fn eventually(ms: u64, mut f: impl FnMut() -> bool) -> bool {
    let end = std::time::Instant::now() + Duration::from_millis(ms);
    loop {
        if f() {
            return true;
        }
        if std::time::Instant::now() > end {
            return false;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

/// The container's HTTP API on an ephemeral port.
pub struct Served {
    pub base: String,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    done: Option<tokio::task::JoinHandle<std::io::Result<()>>>,
}

impl Served {
    pub fn start(c: &Container, rt: &Runtime) -> Served {
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let done = rt.spawn(ozy_container::server::serve(c.clone(), listener, async move {
            let _ = rx.await;
        }));
        Served { base, stop: Some(tx), done: Some(done) }
    }

    /// Stops accepting requests and passivates; returns once the server has exited.
    pub fn stop(&mut self, rt: &Runtime) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(done) = self.done.take() {
            rt.block_on(done).unwrap().unwrap();
        }
    }
}

/// Minimal JSON client for the container API.
pub struct Api {
    pub base: String,
    pub token: String,
    client: reqwest::Client,
}

pub struct Answer {
    pub status: u16,
    pub body: String,
    pub process: Option<String>,
}

impl Answer {
    pub fn json(&self) -> Json {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.body))
    }
}

impl Api {
    pub fn new(base: &str, token: &str) -> Api {
        Api { base: base.into(), token: token.into(), client: reqwest::Client::new() }
    }

    pub async fn send(&self, method: reqwest::Method, path: &str, body: Option<String>) -> Answer {
        let mut req = self.client.request(method, format!("{}{path}", self.base)).bearer_auth(&self.token);
        if let Some(b) = body {
            req = req.header("content-type", "application/json").body(b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status().as_u16();
        let process = resp.headers().get("x-ozy-process").and_then(|v| v.to_str().ok()).map(str::to_string);
        Answer { status, body: resp.text().await.unwrap(), process }
    }

    pub fn post(&self, rt: &Runtime, path: &str, body: &str) -> Answer {
        rt.block_on(self.send(reqwest::Method::POST, path, Some(body.to_string())))
    }

    pub fn get(&self, rt: &Runtime, path: &str) -> Answer {
        rt.block_on(self.send(reqwest::Method::GET, path, None))
    }
}

/// Splits an SSE body into `(event, data)` pairs.
pub fn sse_events(text: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for block in text.split("\n\n") {
        let (mut event, mut data, mut any) = ("message".to_string(), String::new(), false);
        for line in block.lines() {
            if let Some(e) = line.strip_prefix("event:") {
                event = e.trim().to_string();
                any = true;
            } else if let Some(d) = line.strip_prefix("data:") {
                data.push_str(d.strip_prefix(' ').unwrap_or(d));
                any = true;
            }
        }
        if any {
            out.push((event, data));
        }
    }
    out
}
