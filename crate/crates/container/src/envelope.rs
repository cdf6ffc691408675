//! Messages entering the container.

use ozy_core::term::Term;
use serde_json::{Map, Value as Json};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Tell,
    Ask,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Args {
    Positional(Vec<Term>),
    /// Matched to the procedure's parameter names.
    Named(Vec<(String, Term)>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Only locate or create the process.
    None,
    Call { procedure: String, args: Args },
    Bind { external: String, value: Term },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub tenant: String,
    pub mode: Mode,
    pub process: Option<String>,
    /// Business attributes, e.g. `order: 'SO-17'`.
    pub correlation: Vec<(String, Term)>,
    /// Program to instantiate when nothing else resolves the target.
    pub program: Option<String>,
    /// Always start a fresh process.
    pub create: bool,
    pub action: Action,
    pub timeout_ms: Option<u64>,
}

pub fn call(procedure: &str, args: Vec<Term>) -> Action {
    Action::Call { procedure: procedure.into(), args: Args::Positional(args) }
}

pub fn bind(external: &str, value: Term) -> Action {
    Action::Bind { external: external.into(), value }
}

impl Envelope {
    pub fn new(tenant: &str, mode: Mode, action: Action) -> Envelope {
        Envelope { tenant: tenant.into(), mode, process: None, correlation: Vec::new(), program: None, create: false, action, timeout_ms: None }
    }

    pub fn tell(tenant: &str, action: Action) -> Envelope {
        Envelope::new(tenant, Mode::Tell, action)
    }

    pub fn ask(tenant: &str, action: Action) -> Envelope {
        Envelope::new(tenant, Mode::Ask, action)
    }

    pub fn to_process(mut self, process: &str) -> Envelope {
        self.process = Some(process.into());
        self
    }

    pub fn correlated(mut self, name: &str, value: Term) -> Envelope {
        self.correlation.push((name.into(), value));
        self
    }

    pub fn program(mut self, name: &str) -> Envelope {
        self.program = Some(name.into());
        self
    }

    pub fn creating(mut self, program: &str) -> Envelope {
        self.create = true;
        self.program(program)
    }

    pub fn timeout(mut self, ms: u64) -> Envelope {
        self.timeout_ms = Some(ms);
        self
    }

    /// Reads an HTTP request body. `create` marks the process-creation endpoint.
    pub fn from_json(tenant: &str, create: bool, body: &Json) -> Result<Envelope, String> {
        let Json::Object(m) = body else { return Err("body must be a JSON object".into()) };
        const KEYS: &[&str] = &["program", "mode", "procedure", "external", "args", "value", "correlation", "processId", "timeout"];
        if let Some(k) = m.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(format!("unexpected field `{k}`"));
        }
        let text = |k: &str| -> Result<Option<String>, String> {
            match m.get(k) {
                None => Ok(None),
                Some(Json::String(s)) => Ok(Some(s.clone())),
                Some(_) => Err(format!("`{k}` must be a string")),
            }
        };
        let term = |j: &Json| Term::from_json(j).map_err(|e| e.to_string());
        let mode = match text("mode")?.as_deref() {
            None | Some("tell") => Mode::Tell,
            Some("ask") => Mode::Ask,
            Some(other) => return Err(format!("mode must be tell or ask, not `{other}`")),
        };
        let action = match (text("procedure")?, text("external")?) {
            (Some(_), Some(_)) => return Err("give either `procedure` or `external`, not both".into()),
            (Some(procedure), None) => {
                if m.contains_key("value") {
                    return Err("`value` goes with `external`; procedures take `args`".into());
                }
                let args = match m.get("args") {
                    None => Args::Positional(Vec::new()),
                    Some(Json::Array(items)) => Args::Positional(items.iter().map(term).collect::<Result<_, _>>()?),
                    Some(Json::Object(fields)) => Args::Named(fields.iter().map(|(k, v)| Ok((k.clone(), term(v)?))).collect::<Result<_, String>>()?),
                    Some(_) => return Err("`args` must be an array or an object".into()),
                };
                Action::Call { procedure, args }
            }
            (None, Some(external)) => {
                let value = m.get("value").ok_or("`external` needs a `value`")?;
                Action::Bind { external, value: term(value)? }
            }
            (None, None) => {
                if m.contains_key("args") || m.contains_key("value") {
                    return Err("`args`/`value` given without `procedure`/`external`".into());
                }
                Action::None
            }
        };
        let correlation = match m.get("correlation") {
            None => Vec::new(),
            Some(Json::Object(c)) => c.iter().map(|(k, v)| Ok((k.clone(), term(v)?))).collect::<Result<_, String>>()?,
            Some(_) => return Err("`correlation` must be an object".into()),
        };
        let timeout_ms = match m.get("timeout") {
            None => None,
            Some(j) => Some(j.as_u64().ok_or("`timeout` must be a non-negative integer (ms)")?),
        };
        let program = text("program")?;
        if create && program.is_none() {
            return Err("`program` is required".into());
        }
        Ok(Envelope { tenant: tenant.into(), mode, process: text("processId")?, correlation, program, create, action, timeout_ms })
    }

    /// JSON rendering, kept with dead letters.
    pub fn to_json(&self) -> Json {
        let mut m = Map::new();
        m.insert("mode".into(), Json::from(if self.mode == Mode::Ask { "ask" } else { "tell" }));
        if let Some(p) = &self.process {
            m.insert("processId".into(), Json::from(p.as_str()));
        }
        if let Some(p) = &self.program {
            m.insert("program".into(), Json::from(p.as_str()));
        }
        if !self.correlation.is_empty() {
            m.insert("correlation".into(), Json::Object(self.correlation.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()));
        }
        match &self.action {
            Action::None => {}
            Action::Call { procedure, args } => {
                m.insert("procedure".into(), Json::from(procedure.as_str()));
                let args = match args {
                    Args::Positional(a) => Json::Array(a.iter().map(Term::to_json).collect()),
                    Args::Named(n) => Json::Object(n.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()),
                };
                m.insert("args".into(), args);
            }
            Action::Bind { external, value } => {
                m.insert("external".into(), Json::from(external.as_str()));
                m.insert("value".into(), value.to_json());
            }
        }
        Json::Object(m)
    }
}
