//! Module implementations behind `Mod.op` calls.
//!
//! Values cross the boundary through the JSON bijection only. Outbound HTTP
//! calls are `POST <endpoint>/<op>` with body `{"args":[...]}`; the response
//! body is the result. Every failure becomes `connectorError(Status Reason)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use ozy_core::machine::{Member, PendingCall};
use ozy_core::term::{float_preserving, Term};
use serde_json::Value as Json;

use crate::config::{ConfigError, ConnectorKind, ConnectorSpec};

pub fn connector_error(status: Term, reason: &str) -> Term {
    Term::tuple("connectorError", vec![status, Term::atom(reason)])
}

#[derive(Debug, Clone)]
pub enum Connector {
    Http(HttpConnector),
    Local(LocalConnector),
}

#[derive(Debug, Clone)]
pub struct HttpConnector {
    pub endpoint: String,
    pub timeout_ms: u64,
    pub idempotent: BTreeSet<String>,
}

#[derive(Debug, Clone, Default)]
pub struct LocalConnector {
    pub constants: BTreeMap<String, Term>,
    pub tables: BTreeMap<String, BTreeMap<String, Term>>,
    pub series: BTreeMap<String, BTreeMap<String, PathBuf>>,
}

fn term_of(j: &Json, what: &str) -> Result<Term, ConfigError> {
    Term::from_json(j).map_err(|e| ConfigError::Invalid(format!("{what}: {e}")))
}

/// Canonical table key for an argument list.
pub fn args_key(args: &[Term]) -> String {
    float_preserving(&Json::Array(args.iter().map(Term::to_json).collect()))
}

impl Connector {
    pub fn from_spec(spec: &ConnectorSpec) -> Result<Connector, ConfigError> {
        Ok(match spec.kind {
            ConnectorKind::Http => Connector::Http(HttpConnector {
                endpoint: spec.endpoint.clone().unwrap_or_default().trim_end_matches('/').to_string(),
                timeout_ms: spec.timeout_ms,
                idempotent: spec.idempotent.iter().cloned().collect(),
            }),
            ConnectorKind::Local => {
                let mut local = LocalConnector { series: spec.series.clone(), ..LocalConnector::default() };
                for (k, v) in &spec.constants {
                    local.constants.insert(k.clone(), term_of(v, &format!("{}.{k}", spec.name))?);
                }
                for (op, rows) in &spec.tables {
                    let mut table = BTreeMap::new();
                    for (key, v) in rows {
                        let key = if key == "*" {
                            key.clone()
                        } else {
                            let args = Term::from_json_text(key).map_err(|e| ConfigError::Invalid(format!("{}.{op} key {key}: {e}", spec.name)))?;
                            match args.as_list() {
                                Some(items) => args_key(&items.into_iter().cloned().collect::<Vec<_>>()),
                                None => return Err(ConfigError::Invalid(format!("{}.{op} key {key} must be a JSON array", spec.name))),
                            }
                        };
                        table.insert(key, term_of(v, &format!("{}.{op}", spec.name))?);
                    }
                    local.tables.insert(op.clone(), table);
                }
                Connector::Local(local)
            }
        })
    }

    pub fn member(&self, name: &str) -> Option<Member> {
        match self {
            Connector::Http(h) => Some(Member::Operation { idempotent: h.idempotent.contains(name) }),
            Connector::Local(l) => {
                if let Some(c) = l.constants.get(name) {
                    Some(Member::Constant(c.clone()))
                } else if l.tables.contains_key(name) || l.series.contains_key(name) {
                    Some(Member::Operation { idempotent: true })
                } else {
                    None
                }
            }
        }
    }
}

impl LocalConnector {
    pub fn invoke(&self, call: &PendingCall, now_ms: i64) -> Result<Term, Term> {
        if let Some(table) = self.tables.get(&call.op) {
            let key = args_key(&call.args);
            return table.get(&key).or_else(|| table.get("*")).cloned().ok_or_else(|| connector_error(Term::Int(404), &format!("no entry for {}{key}", call.op)));
        }
        if let Some(files) = self.series.get(&call.op) {
            let which = match call.args.first() {
                Some(Term::Atom(a)) => a.to_string(),
                Some(other) => other.to_json_text(),
                None => String::new(),
            };
            let path = files.get(&which).ok_or_else(|| connector_error(Term::Int(404), &format!("no series {which} for {}", call.op)))?;
            return read_series(path, now_ms);
        }
        Err(connector_error(Term::Int(404), &format!("unknown operation {}", call.op)))
    }
}

/// Latest reading of a `timestamp,value` file whose timestamp is not after `now_ms`.
pub fn read_series(path: &PathBuf, now_ms: i64) -> Result<Term, Term> {
    let text = fs::read_to_string(path).map_err(|e| connector_error(Term::Int(503), &format!("{}: {e}", path.display())))?;
    let mut latest = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || connector_error(Term::Int(500), &format!("{}:{}: expected timestamp,value", path.display(), n + 1));
        let (ts, v) = line.split_once(',').ok_or_else(bad)?;
        let ts: i64 = ts.trim().parse().map_err(|_| bad())?;
        let v = v.trim();
        let value = match v.parse::<i64>() {
            Ok(i) => Term::Int(i),
            Err(_) => Term::Float(v.parse::<f64>().map_err(|_| bad())?),
        };
        if ts <= now_ms {
            latest = Some(value);
        }
    }
    latest.ok_or_else(|| connector_error(Term::Int(404), &format!("no reading in {} at {now_ms}", path.display())))
}

impl HttpConnector {
    pub fn request_body(call: &PendingCall) -> String {
        let args = Json::Array(call.args.iter().map(Term::to_json).collect());
        format!("{{\"args\":{}}}", float_preserving(&args))
    }

    pub async fn invoke(&self, client: &reqwest::Client, call: &PendingCall) -> Result<Term, Term> {
        let url = format!("{}/{}", self.endpoint, call.op);
        let sent = client
            .post(&url)
            .header("content-type", "application/json")
            .body(HttpConnector::request_body(call))
            .timeout(Duration::from_millis(self.timeout_ms))
            .send()
            .await;
        let resp = match sent {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Err(connector_error(Term::atom("timeout"), &format!("{url}: no response within {} ms", self.timeout_ms))),
            Err(e) => return Err(connector_error(Term::atom("unreachable"), &format!("{url}: {e}"))),
        };
        let status = resp.status();
        let body = match resp.text().await {
            Ok(b) => b,
            Err(e) if e.is_timeout() => return Err(connector_error(Term::atom("timeout"), &format!("{url}: no response within {} ms", self.timeout_ms))),
            Err(e) => return Err(connector_error(Term::Int(status.as_u16() as i64), &e.to_string())),
        };
        if !status.is_success() {
            let reason = if body.trim().is_empty() { status.canonical_reason().unwrap_or("error").to_string() } else { body };
            return Err(connector_error(Term::Int(status.as_u16() as i64), &reason));
        }
        Term::from_json_text(&body).map_err(|e| connector_error(Term::Int(status.as_u16() as i64), &format!("bad response body: {e}")))
    }
}
