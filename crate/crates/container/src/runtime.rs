//! Tenants, processes and their lifecycle.
//!
//! Every process sits behind its own lock, so delivery, connector
//! completions, timer fires and passivation of one process form a single
//! total order. Distinct processes run in parallel.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::{Duration, Instant};

use ozy_core::lang::{load_program, Program, Resolver};
use ozy_core::machine::{correlation_key, Effect, Host, Machine, MachineError, Member, PendingCall, Status, StreamEvent};
use ozy_core::snapshot::{read_snapshot, restore, snapshot, write_snapshot, SnapshotMeta, EXTENSION};
use ozy_core::store::{Value, VarRef, VarState};
use ozy_core::term::{Term, TermError};
use serde::Serialize;

use crate::clock::Clock;
use crate::config::{ClockMode, ConfigError, ContainerConfig};
use crate::connectors::{connector_error, Connector, HttpConnector};
use crate::correlation::{CorrelationError, CorrelationStore};
use crate::deadletter::{DeadLetter, DeadLetters};
use crate::envelope::{Action, Args, Envelope, Mode};
use crate::hub::{Feed, HubEvent, StreamHub};
use crate::reply::{AskOutcome, ReplySlot};

#[derive(Debug, thiserror::Error)]
pub enum RouteError {
    #[error("unknown tenant `{0}`")]
    UnknownTenant(String),
    #[error("unknown process `{0}`")]
    UnknownProcess(String),
    #[error("unknown program `{0}`")]
    UnknownProgram(String),
    #[error("{0}")]
    Duplicate(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("storage: {0}")]
    Storage(String),
}

/// What happened to a routed envelope.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub process: Option<String>,
    pub created: bool,
    /// Present iff the envelope was an Ask.
    pub reply: Option<Arc<ReplySlot>>,
    pub dead_letter: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ProcessInfo {
    pub process_id: String,
    pub program: String,
    pub status: String,
    pub frontier: Vec<String>,
    pub reductions: u64,
    pub live: bool,
    /// Messages handled since the container started.
    pub seq: u64,
}

pub struct Tenant {
    pub id: String,
    token: String,
    programs: RwLock<BTreeMap<String, Arc<Program>>>,
    connectors: BTreeMap<String, Connector>,
    procs: Mutex<BTreeMap<String, Arc<ProcHandle>>>,
    counter: AtomicU64,
}

impl Tenant {
    fn handle(&self, pid: &str) -> Option<Arc<ProcHandle>> {
        self.procs.lock().unwrap().get(pid).cloned()
    }

    fn handles(&self) -> Vec<Arc<ProcHandle>> {
        self.procs.lock().unwrap().values().cloned().collect()
    }

    fn resolver(&self) -> Resolver {
        Resolver::default().with_modules(self.connectors.keys().cloned())
    }

    fn program(&self, name: &str) -> Option<Arc<Program>> {
        self.programs.read().unwrap().get(name).cloned()
    }
}

struct ProcHandle {
    id: String,
    seq: AtomicU64,
    state: Mutex<ProcState>,
}

enum ProcState {
    Live(Box<Live>),
    Passivated(PathBuf),
}

struct Live {
    machine: Machine,
    meta: SnapshotMeta,
    asks: Vec<(VarRef, Arc<ReplySlot>)>,
    subs: BTreeSet<String>,
    last_active: Instant,
    saved: Option<(u64, PathBuf)>,
    commits: Vec<Term>,
}

impl Live {
    fn new(machine: Machine, meta: SnapshotMeta) -> Live {
        Live { machine, meta, asks: Vec::new(), subs: BTreeSet::new(), last_active: Instant::now(), saved: None, commits: Vec::new() }
    }

    fn drop_closed_asks(&mut self) {
        let (open, closed): (Vec<_>, Vec<_>) = std::mem::take(&mut self.asks).into_iter().partition(|(_, s)| !s.is_closed());
        for (v, _) in closed {
            self.machine.unpin(v);
        }
        self.asks = open;
    }
}

type TimerKey = (i64, String, String, u64);

struct Inner {
    data_dir: PathBuf,
    turn_limit: usize,
    ask_timeout_ms: u64,
    idle: Duration,
    checkpoint: bool,
    clock: Clock,
    tenants: BTreeMap<String, Arc<Tenant>>,
    correlations: Mutex<CorrelationStore>,
    dead: DeadLetters,
    timers: Mutex<BTreeSet<TimerKey>>,
    timer_wake: tokio::sync::Notify,
    advancing: Mutex<()>,
    hub: StreamHub,
    http: reqwest::Client,
    rt: tokio::runtime::Handle,
    closing: tokio::sync::watch::Sender<bool>,
}

const CLOCK_FILE: &str = "virtual-clock";

#[derive(Clone)]
pub struct Container {
    inner: Arc<Inner>,
}

struct ProcHost<'a> {
    inner: &'a Inner,
    tenant: &'a Tenant,
    pid: &'a str,
    now: i64,
}

impl Host for ProcHost<'_> {
    fn now_ms(&self) -> i64 {
        self.now
    }

    fn is_virtual_clock(&self) -> bool {
        self.inner.clock.is_virtual()
    }

    fn member(&self, module: &str, name: &str) -> Option<Member> {
        self.tenant.connectors.get(module)?.member(name)
    }

    fn register_correlation(&mut self, key: &str) -> Result<(), String> {
        self.inner.correlations.lock().unwrap().put(&self.tenant.id, key, self.pid).map_err(|e| e.to_string())
    }
}

fn machine_error_term(e: &MachineError) -> Term {
    match e {
        MachineError::UnknownProcedure(p) => Term::tuple("unknownProcedure", vec![Term::atom(p)]),
        MachineError::UnknownExternal(x) => Term::tuple("unknownExternal", vec![Term::atom(x)]),
        MachineError::Crashed(r) => Term::tuple("crashed", vec![Term::atom(r)]),
        MachineError::Unbound(x) => Term::tuple("unbound", vec![Term::atom(x)]),
    }
}

/// Orders named arguments by the procedure's parameters. An Ask leaves the
/// last parameter for the reply when one argument short.
fn order_named(m: &Machine, procedure: &str, named: &[(String, Term)], ask: bool) -> Result<Vec<Term>, Term> {
    let bad = |msg: String| Term::tuple("badArguments", vec![Term::atom(procedure), Term::atom(&msg)]);
    let v = m.global(procedure).ok_or_else(|| Term::tuple("unknownProcedure", vec![Term::atom(procedure)]))?;
    let Some(Value::Closure(c)) = m.store().value(v) else { return Err(bad("not a procedure".into())) };
    let params = &c.proc.params;
    let take = if ask && params.len() == named.len() + 1 { named.len() } else { params.len() };
    let matches = |k: &str, p: &str| k == p || (k.len() == p.len() && k[..1].to_uppercase() == p[..1] && k[1..] == p[1..]);
    let mut out = Vec::with_capacity(take);
    for p in &params[..take] {
        match named.iter().find(|(k, _)| matches(k, p)) {
            Some((_, t)) => out.push(t.clone()),
            None => return Err(bad(format!("missing argument {p}"))),
        }
    }
    if let Some((k, _)) = named.iter().find(|(k, _)| !params[..take].iter().any(|p| matches(k, p))) {
        return Err(bad(format!("no parameter named {k}")));
    }
    Ok(out)
}

fn parse_snapshot_name<'a>(tenant: &str, name: &'a str) -> Option<(&'a str, u64)> {
    let rest = name.strip_prefix(tenant)?.strip_prefix('.')?.strip_suffix(EXTENSION)?.strip_suffix('.')?;
    let (pid, red) = rest.rsplit_once('.')?;
    Some((pid, red.parse().ok()?))
}

/// The counter part of a generated `p-<n>-<suffix>` id.
fn pid_counter(pid: &str) -> Option<u64> {
    pid.strip_prefix("p-")?.split('-').next()?.parse().ok()
}

impl Container {
    /// Boots from configuration: loads programs (failing fast), opens the
    /// correlation log and recovers passivated processes.
    pub fn start(cfg: &ContainerConfig, rt: tokio::runtime::Handle) -> Result<Container, ConfigError> {
        cfg.validate()?;
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ConfigError::Io { path, source }
        };
        fs::create_dir_all(&cfg.data_dir).map_err(io(&cfg.data_dir))?;
        let corr_path = cfg.data_dir.join("correlations.jsonl");
        let correlations = CorrelationStore::open(&corr_path).map_err(io(&corr_path))?;
        let mut tenants = BTreeMap::new();
        for tc in &cfg.tenants {
            let mut connectors = BTreeMap::new();
            for spec in &tc.connectors {
                connectors.insert(spec.name.clone(), Connector::from_spec(spec)?);
            }
            let tenant = Tenant {
                id: tc.id.clone(),
                token: tc.token.clone(),
                programs: RwLock::new(BTreeMap::new()),
                connectors,
                procs: Mutex::new(BTreeMap::new()),
                counter: AtomicU64::new(1),
            };
            let resolver = tenant.resolver();
            let mut sources: Vec<(String, PathBuf)> = tc.programs.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            let hot = cfg.data_dir.join("programs").join(&tc.id);
            if let Ok(rd) = fs::read_dir(&hot) {
                for e in rd.flatten() {
                    let p = e.path();
                    if let (Some(stem), Some("oz")) = (p.file_stem().and_then(|s| s.to_str()), p.extension().and_then(|s| s.to_str())) {
                        if !tc.programs.contains_key(stem) {
                            sources.push((stem.to_string(), p.clone()));
                        }
                    }
                }
            }
            for (name, path) in sources {
                let src = fs::read_to_string(&path).map_err(io(&path))?;
                let p = load_program(&name, &src, &path.display().to_string(), &resolver).map_err(|e| ConfigError::Invalid(format!("tenant `{}`: {e}", tc.id)))?;
                tenant.programs.write().unwrap().insert(name, Arc::new(p));
            }
            tenants.insert(tc.id.clone(), Arc::new(tenant));
        }
        let clock = match cfg.clock {
            ClockMode::Real => Clock::Real,
            // A virtual clock resumes where the previous run left it.
            ClockMode::Virtual => Clock::virtual_at(fs::read_to_string(cfg.data_dir.join(CLOCK_FILE)).ok().and_then(|t| t.trim().parse().ok()).unwrap_or(0)),
        };
        let http = reqwest::Client::builder().build().map_err(|e| ConfigError::Invalid(format!("http client: {e}")))?;
        let inner = Inner {
            data_dir: cfg.data_dir.clone(),
            turn_limit: cfg.slice_budget.saturating_mul(64),
            ask_timeout_ms: cfg.ask_timeout_ms,
            idle: Duration::from_millis(cfg.idle_passivation_ms),
            checkpoint: cfg.checkpoint,
            clock,
            tenants,
            correlations: Mutex::new(correlations),
            dead: DeadLetters::new(cfg.data_dir.join("deadletters")),
            timers: Mutex::new(BTreeSet::new()),
            timer_wake: tokio::sync::Notify::new(),
            advancing: Mutex::new(()),
            hub: StreamHub::default(),
            http,
            rt,
            closing: tokio::sync::watch::channel(false).0,
        };
        let c = Container { inner: Arc::new(inner) };
        c.recover().map_err(|e| ConfigError::Invalid(format!("recovering snapshots: {e}")))?;
        Ok(c)
    }

    fn snapshot_dir(&self, tenant: &str) -> PathBuf {
        self.inner.data_dir.join("snapshots").join(tenant)
    }

    /// Registers every process found on disk as passivated, re-arms its
    /// timers and revives those with outbound calls in flight.
    fn recover(&self) -> Result<(), String> {
        let mut resume = Vec::new();
        for tenant in self.inner.tenants.values() {
            let dir = self.snapshot_dir(&tenant.id);
            let Ok(rd) = fs::read_dir(&dir) else { continue };
            let mut latest: BTreeMap<String, (u64, PathBuf)> = BTreeMap::new();
            let mut stale = Vec::new();
            for e in rd.flatten() {
                let path = e.path();
                let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
                let Some((pid, red)) = parse_snapshot_name(&tenant.id, name) else { continue };
                match latest.get(pid) {
                    Some((r, _)) if *r >= red => stale.push(path),
                    _ => {
                        if let Some((_, old)) = latest.insert(pid.to_string(), (red, path)) {
                            stale.push(old);
                        }
                    }
                }
            }
            for p in stale {
                let _ = fs::remove_file(p);
            }
            let mut procs = tenant.procs.lock().unwrap();
            for (pid, (_, path)) in latest {
                let snap = read_snapshot(&path).map_err(|e| e.to_string())?;
                {
                    let mut timers = self.inner.timers.lock().unwrap();
                    for t in &snap.timers {
                        timers.insert((t.deadline_ms, tenant.id.clone(), pid.clone(), t.var));
                    }
                }
                if let Some(n) = pid_counter(&pid) {
                    tenant.counter.fetch_max(n + 1, Ordering::SeqCst);
                }
                if !snap.calls.is_empty() {
                    resume.push((tenant.clone(), pid.clone()));
                }
                procs.insert(pid.clone(), Arc::new(ProcHandle { id: pid, seq: AtomicU64::new(0), state: Mutex::new(ProcState::Passivated(path)) }));
            }
        }
        for (tenant, pid) in resume {
            self.turn(&tenant, &pid);
        }
        Ok(())
    }

    pub fn clock(&self) -> &Clock {
        &self.inner.clock
    }

    pub fn ask_timeout_ms(&self) -> u64 {
        self.inner.ask_timeout_ms
    }

    pub fn tenant_ids(&self) -> Vec<String> {
        self.inner.tenants.keys().cloned().collect()
    }

    fn tenant(&self, id: &str) -> Result<Arc<Tenant>, RouteError> {
        self.inner.tenants.get(id).cloned().ok_or_else(|| RouteError::UnknownTenant(id.to_string()))
    }

    /// Checks a bearer token against the tenant's configured one.
    pub fn authorize(&self, tenant: &str, token: Option<&str>) -> Result<bool, RouteError> {
        let t = self.tenant(tenant)?;
        Ok(token.is_some_and(|tok| tok.len() == t.token.len() && tok.bytes().zip(t.token.bytes()).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0))
    }

    /// Compiles and registers a program, persisting it under the data directory.
    pub fn register_program(&self, tenant: &str, name: &str, source: &str) -> Result<(), RouteError> {
        let t = self.tenant(tenant)?;
        if !crate::address::valid_token(name) {
            return Err(RouteError::BadRequest(format!("program name `{name}` is not a valid token")));
        }
        let p = load_program(name, source, &format!("{name}.oz"), &t.resolver()).map_err(|e| RouteError::BadRequest(e.to_string()))?;
        let dir = self.inner.data_dir.join("programs").join(tenant);
        let store = |e: std::io::Error| RouteError::Storage(e.to_string());
        fs::create_dir_all(&dir).map_err(store)?;
        let tmp = dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, source).map_err(store)?;
        fs::rename(&tmp, dir.join(format!("{name}.oz"))).map_err(store)?;
        t.programs.write().unwrap().insert(name.to_string(), Arc::new(p));
        Ok(())
    }

    pub fn programs(&self, tenant: &str) -> Result<Vec<String>, RouteError> {
        Ok(self.tenant(tenant)?.programs.read().unwrap().keys().cloned().collect())
    }

    /// Routes an envelope to its process, creating one when the envelope
    /// names a program and nothing else matches.
    pub fn route(&self, env: Envelope) -> Result<Delivery, RouteError> {
        let tenant = self.tenant(&env.tenant)?;
        let keys: Vec<String> = env.correlation.iter().map(|(k, v)| correlation_key(k, v)).collect();
        let found = if env.create {
            None
        } else if let Some(p) = &env.process {
            Some(tenant.handle(p).ok_or_else(|| RouteError::UnknownProcess(p.clone()))?)
        } else {
            let hit = {
                let corr = self.inner.correlations.lock().unwrap();
                keys.iter().find_map(|k| corr.lookup(&tenant.id, k).map(str::to_string))
            };
            match hit {
                Some(pid) => Some(tenant.handle(&pid).ok_or(RouteError::UnknownProcess(pid))?),
                None => None,
            }
        };
        let (handle, created) = match (found, &env.program) {
            (Some(h), _) => (h, false),
            (None, Some(program)) => (self.create(&tenant, program, &keys)?, true),
            (None, None) => return self.undeliverable(&tenant, &env, None, "no process id, correlation match or program"),
        };
        let (reply, failure) = self.deliver(&tenant, &handle, &env);
        match failure {
            Some(f) if env.mode == Mode::Tell => self.undeliverable(&tenant, &env, Some(&handle.id), &f.to_string()).map(|mut d| {
                d.created = created;
                d
            }),
            _ => Ok(Delivery { process: Some(handle.id.clone()), created, reply, dead_letter: None }),
        }
    }

    fn undeliverable(&self, tenant: &Tenant, env: &Envelope, process: Option<&str>, reason: &str) -> Result<Delivery, RouteError> {
        match env.mode {
            Mode::Ask => {
                let failure = Term::tuple("undeliverable", vec![Term::atom(reason)]);
                Ok(Delivery { process: process.map(str::to_string), created: false, reply: Some(ReplySlot::done(AskOutcome::Failure(failure))), dead_letter: None })
            }
            Mode::Tell => {
                let id = self.inner.dead.put(&tenant.id, reason, env.to_json(), self.inner.clock.now_ms()).map_err(|e| RouteError::Storage(e.to_string()))?;
                tracing::warn!(tenant = %tenant.id, dead_letter = %id, "undeliverable tell: {reason}");
                Ok(Delivery { process: process.map(str::to_string), created: false, reply: None, dead_letter: Some(id) })
            }
        }
    }

    /// Routes and, for an Ask, waits for the single reply.
    pub fn ask(&self, env: Envelope) -> Result<(Delivery, AskOutcome), RouteError> {
        let timeout = Duration::from_millis(env.timeout_ms.unwrap_or(self.inner.ask_timeout_ms));
        let d = self.route(Envelope { mode: Mode::Ask, ..env })?;
        let outcome = d.reply.as_ref().expect("ask deliveries carry a reply slot").wait(timeout);
        Ok((d, outcome))
    }

    fn create(&self, tenant: &Arc<Tenant>, program: &str, keys: &[String]) -> Result<Arc<ProcHandle>, RouteError> {
        let prog = tenant.program(program).ok_or_else(|| RouteError::UnknownProgram(program.to_string()))?;
        let n = tenant.counter.fetch_add(1, Ordering::SeqCst);
        let pid = format!("p-{n}-{:06x}", rand::random::<u32>() & 0xff_ffff);
        {
            let mut corr = self.inner.correlations.lock().unwrap();
            if let Some((k, holder)) = keys.iter().find_map(|k| corr.lookup(&tenant.id, k).map(|h| (k.clone(), h.to_string()))) {
                return Err(RouteError::Duplicate(CorrelationError::Duplicate { key: k, holder }.to_string()));
            }
            for k in keys {
                corr.put(&tenant.id, k, &pid).map_err(|e| RouteError::Storage(e.to_string()))?;
            }
        }
        let meta = SnapshotMeta { tenant_id: tenant.id.clone(), process_id: pid.clone(), program_name: prog.name.clone(), program_digest: prog.digest.clone() };
        let live = Live::new(Machine::from_program(&prog, rand::random()), meta);
        let handle = Arc::new(ProcHandle { id: pid.clone(), seq: AtomicU64::new(0), state: Mutex::new(ProcState::Live(Box::new(live))) });
        tenant.procs.lock().unwrap().insert(pid.clone(), handle.clone());
        tracing::info!(tenant = %tenant.id, process = %pid, program, "process created");
        self.turn(tenant, &pid);
        Ok(handle)
    }

    fn lock_live<'a>(&self, tenant: &Tenant, handle: &'a ProcHandle) -> Result<MutexGuard<'a, ProcState>, RouteError> {
        let mut st = handle.state.lock().unwrap();
        if let ProcState::Passivated(path) = &*st {
            let live = self.revive(tenant, &handle.id, path)?;
            tracing::info!(tenant = %tenant.id, process = %handle.id, "process activated from snapshot");
            *st = ProcState::Live(Box::new(live));
        }
        Ok(st)
    }

    fn revive(&self, tenant: &Tenant, pid: &str, path: &Path) -> Result<Live, RouteError> {
        let snap = read_snapshot(path).map_err(|e| RouteError::Storage(e.to_string()))?;
        let expected = tenant.program(&snap.program_name).map(|p| p.digest.clone());
        let restored = restore(&snap, expected.as_deref()).map_err(|e| RouteError::Storage(e.to_string()))?;
        for w in &restored.warnings {
            tracing::warn!(tenant = %tenant.id, process = pid, "{w}");
        }
        let mut machine = restored.machine;
        machine.resume_pending_calls();
        let meta = SnapshotMeta { tenant_id: tenant.id.clone(), process_id: pid.to_string(), program_name: snap.program_name.clone(), program_digest: snap.program_digest.clone() };
        let mut live = Live::new(machine, meta);
        live.subs = live.machine.streams().keys().cloned().collect();
        for s in &live.subs {
            self.inner.hub.open(&tenant.id, pid, s);
        }
        live.saved = Some((snap.reductions, path.to_path_buf()));
        Ok(live)
    }

    fn live_mut(st: &mut ProcState) -> &mut Live {
        match st {
            ProcState::Live(l) => l,
            ProcState::Passivated(_) => unreachable!("process locked live"),
        }
    }

    /// Injects the envelope's statement. Returns the reply slot for an Ask
    /// and the failure, if the envelope could not be applied.
    fn deliver(&self, tenant: &Tenant, handle: &ProcHandle, env: &Envelope) -> (Option<Arc<ReplySlot>>, Option<Term>) {
        let slot = (env.mode == Mode::Ask).then(ReplySlot::new);
        let mut st = match self.lock_live(tenant, handle) {
            Ok(st) => st,
            Err(e) => {
                let f = Term::tuple("activationFailed", vec![Term::atom(&e.to_string())]);
                if let Some(s) = &slot {
                    s.complete(AskOutcome::Failure(f.clone()));
                }
                return (slot, Some(f));
            }
        };
        let live = Self::live_mut(&mut st);
        let seq = handle.seq.fetch_add(1, Ordering::SeqCst) + 1;
        tracing::debug!(tenant = %tenant.id, process = %handle.id, seq, "message");
        live.last_active = Instant::now();
        let mut failure = None;
        match &env.action {
            Action::None => {}
            Action::Call { procedure, args } => {
                let args = match args {
                    Args::Positional(a) => Ok(a.clone()),
                    Args::Named(n) => order_named(&live.machine, procedure, n, slot.is_some()),
                };
                let injected = args.and_then(|a| {
                    let r = slot.as_ref().map(|_| live.machine.store_mut().new_var());
                    live.machine.inject_call(procedure, &a, r).map(|_| r).map_err(|e| machine_error_term(&e))
                });
                match injected {
                    Ok(Some(r)) => live.asks.push((r, slot.clone().expect("ask slot"))),
                    Ok(None) => {}
                    Err(t) => failure = Some(t),
                }
            }
            Action::Bind { external, value } => {
                if let Err(e) = live.machine.inject_external(external, value) {
                    failure = Some(machine_error_term(&e));
                }
            }
        }
        self.pump(tenant, &handle.id, live);
        if let Some(s) = &slot {
            match &failure {
                Some(f) => {
                    s.complete(AskOutcome::Failure(f.clone()));
                }
                None if !matches!(env.action, Action::Call { .. }) => {
                    s.complete(AskOutcome::Value(Term::atom("unit")));
                }
                None => {}
            }
        }
        (slot, failure)
    }

    /// Locks a process, activating it if needed, and runs it.
    fn turn(&self, tenant: &Tenant, pid: &str) {
        self.with_live(tenant, pid, |_, _| true);
    }

    /// Runs `f` on the live process and pumps it if `f` reports a change.
    fn with_live(&self, tenant: &Tenant, pid: &str, f: impl FnOnce(&Container, &mut Live) -> bool) {
        let Some(handle) = tenant.handle(pid) else {
            tracing::warn!(tenant = %tenant.id, process = pid, "no such process; dropping input");
            return;
        };
        let mut st = match self.lock_live(tenant, &handle) {
            Ok(st) => st,
            Err(e) => {
                tracing::error!(tenant = %tenant.id, process = pid, "cannot activate: {e}");
                return;
            }
        };
        let live = Self::live_mut(&mut st);
        if f(self, live) {
            self.pump(tenant, pid, live);
        }
    }

    /// Runs the machine to quiescence, serving effects, then answers asks,
    /// pushes stream events and checkpoints.
    fn pump(&self, tenant: &Tenant, pid: &str, live: &mut Live) {
        let inner = &*self.inner;
        let now = inner.clock.now_ms();
        loop {
            let status = {
                let mut host = ProcHost { inner, tenant, pid, now };
                live.machine.run_to_quiescence(inner.turn_limit, &mut host)
            };
            let mut progressed = false;
            for effect in live.machine.take_effects() {
                match effect {
                    Effect::Invoke { var, call } => match tenant.connectors.get(&call.module) {
                        Some(Connector::Local(l)) => {
                            let r = l.invoke(&call, now);
                            progressed |= live.machine.complete_call(var, r);
                        }
                        Some(Connector::Http(h)) => self.spawn_http(&tenant.id, pid, var, h.clone(), call),
                        None => {
                            let e = connector_error(Term::Int(404), &format!("no connector {}", call.module));
                            progressed |= live.machine.complete_call(var, Err(e));
                        }
                    },
                    Effect::TimerArmed { var, deadline_ms } => {
                        inner.timers.lock().unwrap().insert((deadline_ms, tenant.id.clone(), pid.to_string(), var.0));
                        inner.timer_wake.notify_one();
                    }
                    Effect::Commit { location } => live.commits.push(location),
                }
            }
            for v in live.machine.due_timers(now) {
                progressed |= live.machine.fire_timer(v);
            }
            if progressed {
                continue;
            }
            if status == Status::PartiallyActive && live.machine.runnable_count() > 0 {
                self.schedule_turn(&tenant.id, pid);
            }
            break;
        }
        self.answer_asks(tenant, pid, live);
        self.poll_streams(tenant, pid, live);
        let status = live.machine.status();
        if status != Status::PartiallyActive && !live.commits.is_empty() {
            self.commit(tenant, pid, live);
        } else if inner.checkpoint && matches!(status, Status::PartiallyTerminated | Status::Terminated) {
            if let Err(e) = self.save(tenant, live) {
                tracing::error!(tenant = %tenant.id, process = pid, "checkpoint failed: {e}");
            }
        }
    }

    fn answer_asks(&self, tenant: &Tenant, pid: &str, live: &mut Live) {
        enum Ready {
            Reply(AskOutcome),
            Stream,
            Wait,
        }
        live.drop_closed_asks();
        let crashed = match live.machine.status() {
            Status::Crashed(r) => Some(r),
            _ => None,
        };
        let failure = |store: &ozy_core::store::Store, e: &Value| AskOutcome::Failure(Term::from_value(store, e).unwrap_or_else(|_| Term::atom("failed")));
        let mut open = Vec::new();
        for (r, slot) in std::mem::take(&mut live.asks) {
            let ready = {
                let store = live.machine.store();
                match store.state(store.find(r)) {
                    VarState::Failed(e) => Ready::Reply(failure(store, e)),
                    VarState::Determined(v) => match Term::from_store(store, r) {
                        Ok(t) => Ready::Reply(AskOutcome::Value(t)),
                        Err(TermError::Failed(w)) => match store.state(w) {
                            VarState::Failed(e) => Ready::Reply(failure(store, e)),
                            _ => Ready::Wait,
                        },
                        // A list with an open tail is a stream: reply with a subscription.
                        Err(TermError::Unbound(_)) if matches!(v, Value::Record(rec) if rec.is_cons()) => Ready::Stream,
                        Err(TermError::Unbound(_)) => Ready::Wait,
                        Err(e) => Ready::Reply(AskOutcome::Failure(Term::tuple("notData", vec![Term::atom(&e.to_string())]))),
                    },
                    _ => Ready::Wait,
                }
            };
            let outcome = match ready {
                Ready::Reply(o) => Some(o),
                Ready::Stream => {
                    let sid = format!("s-{:016x}", rand::random::<u64>());
                    live.machine.subscribe(&sid, r);
                    live.subs.insert(sid.clone());
                    self.inner.hub.open(&tenant.id, pid, &sid);
                    Some(AskOutcome::Value(Term::record("stream", [("subscription", Term::atom(&sid))])))
                }
                Ready::Wait => crashed.as_ref().map(|c| AskOutcome::Failure(Term::tuple("crashed", vec![Term::atom(c)]))),
            };
            match outcome {
                Some(o) => {
                    slot.complete(o);
                    live.machine.unpin(r);
                }
                None => open.push((r, slot)),
            }
        }
        live.asks = open;
    }

    fn poll_streams(&self, tenant: &Tenant, pid: &str, live: &mut Live) {
        for sid in live.subs.clone() {
            let events: Vec<HubEvent> = live
                .machine
                .poll_stream(&sid)
                .into_iter()
                .map(|e| match e {
                    StreamEvent::Item(t) => HubEvent::Item(t),
                    StreamEvent::End => HubEvent::End,
                })
                .collect();
            if events.last() == Some(&HubEvent::End) {
                live.subs.remove(&sid);
            }
            self.inner.hub.push(&tenant.id, pid, &sid, events);
        }
    }

    /// Makes the process durable, then notifies each commit location.
    fn commit(&self, tenant: &Tenant, pid: &str, live: &mut Live) {
        if let Err(e) = self.save(tenant, live) {
            tracing::error!(tenant = %tenant.id, process = pid, "commit checkpoint failed: {e}");
            return;
        }
        for loc in std::mem::take(&mut live.commits) {
            let target = match &loc {
                Term::Atom(a) if a.starts_with("http://") || a.starts_with("https://") => Some(a.to_string()),
                _ => None,
            };
            tracing::info!(tenant = %tenant.id, process = pid, location = %loc, "commit");
            if let Some(url) = target {
                let body = serde_json::json!({"tenant": tenant.id, "processId": pid, "event": "commit"}).to_string();
                let client = self.inner.http.clone();
                self.inner.rt.spawn(async move {
                    if let Err(e) = client.post(&url).header("content-type", "application/json").body(body).timeout(Duration::from_secs(5)).send().await {
                        tracing::warn!(%url, "commit notification failed: {e}");
                    }
                });
            }
        }
    }

    /// Writes a snapshot unless an identical one is already on disk.
    fn save(&self, tenant: &Tenant, live: &mut Live) -> Result<PathBuf, String> {
        let reductions = live.machine.reductions();
        if let Some((r, p)) = &live.saved {
            if *r == reductions && p.exists() {
                return Ok(p.clone());
            }
        }
        let snap = snapshot(&live.machine, &live.meta).map_err(|e| e.to_string())?;
        let dir = self.snapshot_dir(&tenant.id);
        let path = write_snapshot(&snap, &dir).map_err(|e| e.to_string())?;
        if let Ok(rd) = fs::read_dir(&dir) {
            for e in rd.flatten() {
                let p = e.path();
                let same_pid = p.file_name().and_then(|n| n.to_str()).and_then(|n| parse_snapshot_name(&tenant.id, n)).is_some_and(|(pid, _)| pid == live.meta.process_id);
                if same_pid && p != path {
                    let _ = fs::remove_file(&p);
                }
            }
        }
        live.saved = Some((reductions, path.clone()));
        Ok(path)
    }

    fn schedule_turn(&self, tenant: &str, pid: &str) {
        let (c, t, p) = (self.clone(), tenant.to_string(), pid.to_string());
        self.inner.rt.spawn_blocking(move || {
            if let Ok(tenant) = c.tenant(&t) {
                c.turn(&tenant, &p);
            }
        });
    }

    fn spawn_http(&self, tenant: &str, pid: &str, var: VarRef, conn: HttpConnector, call: PendingCall) {
        let (c, t, p) = (self.clone(), tenant.to_string(), pid.to_string());
        let client = self.inner.http.clone();
        self.inner.rt.spawn(async move {
            let result = conn.invoke(&client, &call).await;
            let _ = tokio::task::spawn_blocking(move || c.complete_call(&t, &p, var, result)).await;
        });
    }

    /// Delivers an outbound call's outcome through the process's serialized path.
    pub fn complete_call(&self, tenant: &str, pid: &str, var: VarRef, result: Result<Term, Term>) {
        let Ok(tenant) = self.tenant(tenant) else { return };
        self.with_live(&tenant, pid, |_, live| live.machine.complete_call(var, result));
    }

    /// Fires every armed timer whose deadline has passed.
    pub fn fire_due(&self) -> usize {
        let mut fired = 0;
        loop {
            let now = self.inner.clock.now_ms();
            let due: Vec<TimerKey> = {
                let mut timers = self.inner.timers.lock().unwrap();
                let mut due = Vec::new();
                while let Some(first) = timers.first() {
                    if first.0 > now {
                        break;
                    }
                    due.push(timers.pop_first().expect("first exists"));
                }
                due
            };
            if due.is_empty() {
                return fired;
            }
            for (_, t, pid, var) in due {
                let Ok(tenant) = self.tenant(&t) else { continue };
                self.with_live(&tenant, &pid, |_, live| {
                    let hit = live.machine.fire_timer(VarRef(var));
                    if !hit && live.machine.status() == Status::Terminated {
                        tracing::info!(tenant = %t, process = %pid, "timer for terminated process dropped");
                    }
                    fired += hit as usize;
                    hit
                });
            }
        }
    }

    pub fn next_deadline(&self) -> Option<i64> {
        self.inner.timers.lock().unwrap().first().map(|t| t.0)
    }

    /// Moves the virtual clock forward, firing timers at their deadlines in order.
    pub fn advance(&self, ms: i64) -> Result<i64, RouteError> {
        if !self.inner.clock.is_virtual() {
            return Err(RouteError::BadRequest("the container runs on the real clock".into()));
        }
        let _g = self.inner.advancing.lock().unwrap();
        let target = self.inner.clock.now_ms().saturating_add(ms.max(0));
        while let Some(d) = self.next_deadline().filter(|d| *d <= target) {
            self.inner.clock.set(d);
            self.fire_due();
        }
        self.inner.clock.set(target);
        self.fire_due();
        let path = self.inner.data_dir.join(CLOCK_FILE);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, target.to_string()).and_then(|_| fs::rename(&tmp, &path)).map_err(|e| RouteError::Storage(format!("{}: {e}", path.display())))?;
        Ok(target)
    }

    /// Fires timers on the wall clock until the runtime shuts down.
    pub fn spawn_timer_task(&self) -> Option<tokio::task::JoinHandle<()>> {
        if self.inner.clock.is_virtual() {
            return None;
        }
        let c = self.clone();
        Some(self.inner.rt.spawn(async move {
            loop {
                let now = c.inner.clock.now_ms();
                match c.next_deadline() {
                    Some(d) if d <= now => {
                        let c2 = c.clone();
                        let _ = tokio::task::spawn_blocking(move || c2.fire_due()).await;
                    }
                    Some(d) => {
                        tokio::select! {
                            _ = tokio::time::sleep(Duration::from_millis((d - now) as u64)) => {}
                            _ = c.inner.timer_wake.notified() => {}
                        }
                    }
                    None => c.inner.timer_wake.notified().await,
                }
            }
        }))
    }

    /// Passivates idle processes periodically.
    pub fn spawn_passivation_task(&self) -> tokio::task::JoinHandle<()> {
        let c = self.clone();
        let every = (self.inner.idle / 2).clamp(Duration::from_millis(50), Duration::from_secs(30));
        self.inner.rt.spawn(async move {
            loop {
                tokio::time::sleep(every).await;
                let c2 = c.clone();
                let _ = tokio::task::spawn_blocking(move || c2.passivate_idle(None)).await;
            }
        })
    }

    /// Snapshots and evicts quiescent processes idle for at least `idle`
    /// (the configured threshold when `None`). Processes with open asks or
    /// outbound calls in flight stay live.
    pub fn passivate_idle(&self, idle: Option<Duration>) -> usize {
        let idle = idle.unwrap_or(self.inner.idle);
        let mut n = 0;
        for tenant in self.inner.tenants.values() {
            for h in tenant.handles() {
                let mut st = h.state.lock().unwrap();
                let ProcState::Live(live) = &mut *st else { continue };
                live.drop_closed_asks();
                let quiet = matches!(live.machine.status(), Status::PartiallyTerminated | Status::Terminated);
                if !quiet || live.last_active.elapsed() < idle || !live.asks.is_empty() || !live.machine.pending_calls().is_empty() {
                    continue;
                }
                match self.save(tenant, live) {
                    Ok(path) => {
                        tracing::info!(tenant = %tenant.id, process = %h.id, "passivated");
                        *st = ProcState::Passivated(path);
                        n += 1;
                    }
                    Err(e) => tracing::error!(tenant = %tenant.id, process = %h.id, "passivation failed: {e}"),
                }
            }
        }
        n
    }

    /// Passivates everything quiescent, failing asks still open.
    pub fn shutdown(&self) -> usize {
        let mut n = 0;
        for tenant in self.inner.tenants.values() {
            for h in tenant.handles() {
                let mut st = h.state.lock().unwrap();
                let ProcState::Live(live) = &mut *st else { continue };
                if !matches!(live.machine.status(), Status::PartiallyTerminated | Status::Terminated) {
                    continue;
                }
                for (v, s) in std::mem::take(&mut live.asks) {
                    s.complete(AskOutcome::Failure(Term::atom("shuttingDown")));
                    live.machine.unpin(v);
                }
                if let Ok(path) = self.save(tenant, live) {
                    *st = ProcState::Passivated(path);
                    n += 1;
                }
            }
        }
        n
    }

    /// A sink left before the stream ended.
    pub fn sink_lost(&self, tenant: &str, pid: &str, sid: &str) {
        let Ok(t) = self.tenant(tenant) else { return };
        self.with_live(&t, pid, |_, live| {
            live.machine.close_stream(sid);
            live.subs.remove(sid);
            live.machine.externals().contains_key("disconnected") && live.machine.inject_external("disconnected", &Term::Bool(true)).is_ok()
        });
    }

    /// Reports a lost sink from async code; the work runs on the blocking pool.
    pub fn notify_sink_lost(&self, tenant: &str, pid: &str, sid: &str) {
        let (c, t, p, s) = (self.clone(), tenant.to_string(), pid.to_string(), sid.to_string());
        self.inner.rt.spawn_blocking(move || c.sink_lost(&t, &p, &s));
    }

    /// Tells open streams to finish so that a graceful stop can complete.
    pub fn begin_shutdown(&self) {
        self.inner.closing.send_replace(true);
    }

    pub fn closing(&self) -> tokio::sync::watch::Receiver<bool> {
        self.inner.closing.subscribe()
    }

    pub fn feed(&self, tenant: &str, sid: &str) -> Option<Arc<Feed>> {
        self.inner.hub.get(tenant, sid)
    }

    pub fn dead_letters(&self, tenant: &str) -> Result<Vec<DeadLetter>, RouteError> {
        self.tenant(tenant)?;
        self.inner.dead.list(tenant).map_err(|e| RouteError::Storage(e.to_string()))
    }

    pub fn correlations(&self, tenant: &str) -> Result<Vec<(String, String)>, RouteError> {
        self.tenant(tenant)?;
        Ok(self.inner.correlations.lock().unwrap().entries(tenant))
    }

    pub fn is_live(&self, tenant: &str, pid: &str) -> Result<bool, RouteError> {
        let h = self.tenant(tenant)?.handle(pid).ok_or_else(|| RouteError::UnknownProcess(pid.to_string()))?;
        let st = h.state.lock().unwrap();
        Ok(matches!(*st, ProcState::Live(_)))
    }

    pub fn process_info(&self, tenant: &str, pid: &str) -> Result<ProcessInfo, RouteError> {
        let h = self.tenant(tenant)?.handle(pid).ok_or_else(|| RouteError::UnknownProcess(pid.to_string()))?;
        let st = h.state.lock().unwrap();
        let seq = h.seq.load(Ordering::SeqCst);
        Ok(match &*st {
            ProcState::Live(l) => ProcessInfo {
                process_id: pid.into(),
                program: l.meta.program_name.clone(),
                status: l.machine.status().as_str().into(),
                frontier: l.machine.frontier_names(),
                reductions: l.machine.reductions(),
                live: true,
                seq,
            },
            ProcState::Passivated(path) => {
                let snap = read_snapshot(path).map_err(|e| RouteError::Storage(e.to_string()))?;
                let m = restore(&snap, None).map_err(|e| RouteError::Storage(e.to_string()))?.machine;
                ProcessInfo {
                    process_id: pid.into(),
                    program: snap.program_name.clone(),
                    status: snap.status.clone(),
                    frontier: m.frontier_names(),
                    reductions: snap.reductions,
                    live: false,
                    seq,
                }
            }
        })
    }

    pub fn processes(&self, tenant: &str) -> Result<Vec<ProcessInfo>, RouteError> {
        let t = self.tenant(tenant)?;
        let ids: Vec<String> = t.procs.lock().unwrap().keys().cloned().collect();
        ids.iter().map(|p| self.process_info(tenant, p)).collect()
    }

    /// Ground value of a process-level variable, for inspection.
    pub fn global_term(&self, tenant: &str, pid: &str, name: &str) -> Result<Option<Term>, RouteError> {
        let t = self.tenant(tenant)?;
        let h = t.handle(pid).ok_or_else(|| RouteError::UnknownProcess(pid.to_string()))?;
        let st = h.state.lock().unwrap();
        Ok(match &*st {
            ProcState::Live(l) => l.machine.global_term(name),
            ProcState::Passivated(path) => {
                let snap = read_snapshot(path).map_err(|e| RouteError::Storage(e.to_string()))?;
                restore(&snap, None).map_err(|e| RouteError::Storage(e.to_string()))?.machine.global_term(name)
            }
        })
    }
}
