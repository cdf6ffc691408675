//! Subcommands that talk to a running container over its HTTP API.

use std::time::Duration;

use reqwest::blocking::{Client, Response};
use serde_json::{json, Map, Value as Json};

use crate::exit;

pub struct Conn {
    pub url: String,
    pub token: Option<String>,
}

pub struct SendArgs {
    pub tenant: String,
    pub ask: bool,
    pub create: bool,
    pub program: Option<String>,
    pub process: Option<String>,
    pub procedure: Option<String>,
    pub args: Option<String>,
    pub external: Option<String>,
    pub correlation: Vec<String>,
    pub timeout: Option<u64>,
}

/// Parses a command-line value: JSON if it is JSON, otherwise a bare atom.
fn value(text: &str) -> Json {
    serde_json::from_str(text).unwrap_or_else(|_| Json::String(text.to_string()))
}

fn pair(text: &str) -> Result<(String, Json), String> {
    let (k, v) = text.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got `{text}`"))?;
    Ok((k.to_string(), value(v)))
}

impl Conn {
    fn client(&self) -> Client {
        Client::builder().timeout(Duration::from_secs(300)).build().expect("http client")
    }

    fn request(&self, method: reqwest::Method, path: &str, body: Option<Json>) -> Result<Response, i32> {
        let mut req = self.client().request(method, format!("{}{path}", self.url.trim_end_matches('/')));
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.header("content-type", "application/json").body(b.to_string());
        }
        req.send().map_err(|e| {
            eprintln!("ozy: cannot reach {}: {e}", self.url);
            exit::UNREACHABLE
        })
    }

    /// Returns the body of a successful response; otherwise prints it and maps the status.
    fn fetch(&self, method: reqwest::Method, path: &str, body: Option<Json>) -> Result<(u16, String), i32> {
        let resp = self.request(method, path, body)?;
        let status = resp.status().as_u16();
        let text = resp.text().unwrap_or_default();
        if status >= 400 {
            println!("{text}");
            eprintln!("ozy: HTTP {status}");
            return Err(exit::http(status));
        }
        Ok((status, text))
    }
}

fn parse(text: &str) -> Json {
    serde_json::from_str(text).unwrap_or(Json::Null)
}

pub fn ps(c: &Conn, tenant: &str) -> i32 {
    let (_, text) = match c.fetch(reqwest::Method::GET, &format!("/root/tenants/{tenant}/processes"), None) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let list = parse(&text);
    for p in list.as_array().into_iter().flatten() {
        let s = |k: &str| p[k].as_str().unwrap_or("").to_string();
        let frontier: Vec<&str> = p["frontier"].as_array().into_iter().flatten().filter_map(Json::as_str).collect();
        let place = if p["live"].as_bool() == Some(true) { "live" } else { "passivated" };
        let line = format!("{}  {}  {}", s("processId"), s("program"), s("status"));
        if frontier.is_empty() {
            println!("{line}  {place}");
        } else {
            println!("{line} frontier=[{}]  {place}", frontier.join(","));
        }
    }
    exit::OK
}

pub fn send(c: &Conn, a: SendArgs) -> i32 {
    let mut body = Map::new();
    body.insert("mode".into(), json!(if a.ask { "ask" } else { "tell" }));
    if let Some(p) = a.program {
        body.insert("program".into(), json!(p));
    }
    if let Some(p) = a.process {
        body.insert("processId".into(), json!(p));
    }
    if let Some(p) = a.procedure {
        body.insert("procedure".into(), json!(p));
    }
    if let Some(args) = a.args {
        match serde_json::from_str::<Json>(&args) {
            Ok(j @ (Json::Array(_) | Json::Object(_))) => {
                body.insert("args".into(), j);
            }
            _ => {
                eprintln!("ozy: --args must be a JSON array or object");
                return exit::USAGE;
            }
        }
    }
    if let Some(e) = a.external {
        match pair(&e) {
            Ok((k, v)) => {
                body.insert("external".into(), json!(k));
                body.insert("value".into(), v);
            }
            Err(m) => {
                eprintln!("ozy: --external: {m}");
                return exit::USAGE;
            }
        }
    }
    if !a.correlation.is_empty() {
        let mut cs = Map::new();
        for c in &a.correlation {
            match pair(c) {
                Ok((k, v)) => {
                    cs.insert(k, v);
                }
                Err(m) => {
                    eprintln!("ozy: --correlation: {m}");
                    return exit::USAGE;
                }
            }
        }
        body.insert("correlation".into(), Json::Object(cs));
    }
    if let Some(t) = a.timeout {
        body.insert("timeout".into(), json!(t));
    }
    let path = if a.create { "processes" } else { "messages" };
    match c.fetch(reqwest::Method::POST, &format!("/root/tenants/{}/{path}", a.tenant), Some(Json::Object(body))) {
        Ok((_, text)) => {
            println!("{text}");
            exit::OK
        }
        Err(code) => code,
    }
}

pub fn dead_letters(c: &Conn, tenant: &str) -> i32 {
    let (_, text) = match c.fetch(reqwest::Method::GET, &format!("/root/tenants/{tenant}/deadletters"), None) {
        Ok(r) => r,
        Err(code) => return code,
    };
    for d in parse(&text).as_array().into_iter().flatten() {
        println!("{}  {}  {}  {}", d["id"].as_str().unwrap_or(""), d["at_ms"], d["reason"].as_str().unwrap_or(""), d["envelope"]);
    }
    exit::OK
}

pub fn register(c: &Conn, tenant: &str, name: &str, file: &std::path::Path) -> i32 {
    let source = match std::fs::read_to_string(file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("ozy: cannot read {}: {e}", file.display());
            return exit::LOAD;
        }
    };
    match c.fetch(reqwest::Method::POST, &format!("/root/tenants/{tenant}/programs"), Some(json!({ "name": name, "source": source }))) {
        Ok(_) => {
            println!("registered {name}");
            exit::OK
        }
        Err(code) => code,
    }
}

pub fn advance(c: &Conn, ms: i64) -> i32 {
    match c.fetch(reqwest::Method::POST, "/admin/clock/advance", Some(json!({ "ms": ms }))) {
        Ok((_, text)) => {
            println!("now = {}", parse(&text)["now"]);
            exit::OK
        }
        Err(code) => code,
    }
}
