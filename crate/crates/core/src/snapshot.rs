//! Versioned snapshots of quiescent machines.
//!
//! File layout: the magic bytes `OZSS`, a big-endian u32 format version,
//! then a CBOR body. Every table is built in a fixed traversal order so the
//! same machine state always encodes to the same bytes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lang::{Feature, ProcLit, Stmt, Sym};
use crate::machine::{Effect, Frame, Machine, PendingCall, Stack, Status, Timer};
use crate::store::{Closure, Record, Store, Trigger, Unbound, Value, VarRef, VarState, Watcher};
use crate::term::Term;

pub const MAGIC: &[u8; 4] = b"OZSS";
pub const FORMAT_VERSION: u32 = 1;
pub const EXTENSION: &str = "ozss";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format_version: u32,
    pub tenant_id: String,
    pub process_id: String,
    pub program_name: String,
    pub program_digest: String,
    pub status: String,
    pub reductions: u64,
    pub seed: u64,
    pub scheduler: ChaCha8Rng,
    pub next_stack: u64,
    pub next_var: u64,
    pub next_closure: u64,
    pub statements: Vec<Stmt>,
    pub procs: Vec<ProcLit>,
    pub stacks: Vec<SnapStack>,
    pub store: Vec<(u64, SnapVar)>,
    pub globals: Vec<(String, u64)>,
    pub externals: Vec<(String, u64)>,
    pub pinned: Vec<u64>,
    pub timers: Vec<SnapTimer>,
    pub calls: Vec<SnapCall>,
    pub streams: Vec<(String, u64)>,
    pub log: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapStack {
    pub id: u64,
    pub frames: Vec<SnapFrame>,
    pub suspended_on: Option<u64>,
    pub result_var: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SnapFrame {
    Stmt { stmt: u32, env: Vec<(String, u64)> },
    Catch { ident: String, handler: u32, env: Vec<(String, u64)> },
    Await(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SnapVar {
    Unbound { suspensions: Vec<u64>, trigger: Option<(u64, bool)>, watchers: Vec<(u64, i64)> },
    Determined(SnapValue),
    Failed(SnapValue),
    Alias(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SnapValue {
    Int(i64),
    Float(f64),
    Bool(bool),
    Atom(String),
    Record { label: String, features: Vec<(Feature, u64)> },
    Closure { id: u64, proc: u32, env: Vec<(String, u64)> },
    Builtin(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapTimer {
    pub var: u64,
    pub deadline_ms: i64,
    pub virtual_clock: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapCall {
    pub var: u64,
    pub module: String,
    pub op: String,
    pub args: Vec<Term>,
    pub idempotent: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("cannot snapshot a partially active process")]
    Active,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("not a snapshot: bad magic bytes")]
    BadMagic,
    #[error("unsupported snapshot format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupted snapshot: {0}")]
    Decode(String),
    #[error("corrupted snapshot: dangling variable v{0}")]
    Dangling(u64),
    #[error("corrupted snapshot: {0} index {1} out of range")]
    BadIndex(&'static str, u32),
}

/// Identity of the process a snapshot belongs to.
#[derive(Debug, Clone, Default)]
pub struct SnapshotMeta {
    pub tenant_id: String,
    pub process_id: String,
    pub program_name: String,
    pub program_digest: String,
}

struct Tables {
    stmt_index: HashMap<Vec<u8>, u32>,
    statements: Vec<Stmt>,
    proc_index: HashMap<Vec<u8>, u32>,
    procs: Vec<ProcLit>,
}

impl Tables {
    fn stmt(&mut self, s: &Stmt) -> u32 {
        let mut key = Vec::new();
        ciborium::into_writer(s, &mut key).expect("in-memory encoding");
        let next = self.statements.len() as u32;
        *self.stmt_index.entry(key).or_insert_with(|| {
            self.statements.push(s.clone());
            next
        })
    }

    fn proc(&mut self, p: &ProcLit) -> u32 {
        let mut key = Vec::new();
        ciborium::into_writer(p, &mut key).expect("in-memory encoding");
        let next = self.procs.len() as u32;
        *self.proc_index.entry(key).or_insert_with(|| {
            self.procs.push(p.clone());
            next
        })
    }
}

fn env_pairs(env: &BTreeMap<Sym, VarRef>) -> Vec<(String, u64)> {
    env.iter().map(|(k, v)| (k.to_string(), v.0)).collect()
}

fn snap_value(x: &Value, t: &mut Tables) -> SnapValue {
    match x {
        Value::Int(i) => SnapValue::Int(*i),
        Value::Float(f) => SnapValue::Float(*f),
        Value::Bool(b) => SnapValue::Bool(*b),
        Value::Atom(a) => SnapValue::Atom(a.to_string()),
        Value::Record(r) => SnapValue::Record { label: r.label.to_string(), features: r.features.iter().map(|(f, v)| (f.clone(), v.0)).collect() },
        Value::Closure(c) => SnapValue::Closure { id: c.id, proc: t.proc(&c.proc), env: env_pairs(&c.env) },
        Value::Builtin(n) => SnapValue::Builtin(n.to_string()),
    }
}

/// Captures the machine and the store reachable from its roots.
pub fn snapshot(m: &Machine, meta: &SnapshotMeta) -> Result<Snapshot, SnapshotError> {
    let status = m.status();
    if status == Status::PartiallyActive {
        return Err(SnapshotError::Active);
    }
    let mut t = Tables { stmt_index: HashMap::new(), statements: Vec::new(), proc_index: HashMap::new(), procs: Vec::new() };
    let mut roots: Vec<VarRef> = Vec::new();
    let mut stacks = Vec::with_capacity(m.stacks.len());
    for (id, s) in &m.stacks {
        let mut frames = Vec::with_capacity(s.frames.len());
        for f in &s.frames {
            frames.push(match f {
                Frame::Stmt(stmt, env) => {
                    roots.extend(env.values());
                    SnapFrame::Stmt { stmt: t.stmt(stmt), env: env_pairs(env) }
                }
                Frame::Catch(x, handler, env) => {
                    roots.extend(env.values());
                    SnapFrame::Catch { ident: x.to_string(), handler: t.stmt(handler), env: env_pairs(env) }
                }
                Frame::Await(v) => {
                    roots.push(*v);
                    SnapFrame::Await(v.0)
                }
            });
        }
        roots.extend(s.suspended_on);
        roots.extend(s.result_var);
        stacks.push(SnapStack { id: *id, frames, suspended_on: s.suspended_on.map(|v| v.0), result_var: s.result_var.map(|v| v.0) });
    }
    roots.extend(m.globals.values());
    roots.extend(m.externals.values());
    roots.extend(m.pinned.iter());
    roots.extend(m.timers.keys());
    roots.extend(m.calls.keys());
    roots.extend(m.streams.values());
    let reachable = m.store.reachable(roots);
    let mut store = Vec::with_capacity(reachable.len());
    for v in &reachable {
        let Some(state) = m.store.raw_state(*v) else { continue };
        let sv = match state {
            VarState::Unbound(u) => SnapVar::Unbound {
                suspensions: u.suspensions.iter().copied().collect(),
                trigger: u.trigger.as_ref().map(|tr| (tr.proc_var.0, tr.needed)),
                watchers: u.watchers.iter().map(|w| (w.target.0, w.choice)).collect(),
            },
            VarState::Determined(x) => SnapVar::Determined(snap_value(x, &mut t)),
            VarState::Failed(x) => SnapVar::Failed(snap_value(x, &mut t)),
            VarState::Alias(a) => SnapVar::Alias(a.0),
        };
        store.push((v.0, sv));
    }
    Ok(Snapshot {
        format_version: FORMAT_VERSION,
        tenant_id: meta.tenant_id.clone(),
        process_id: meta.process_id.clone(),
        program_name: meta.program_name.clone(),
        program_digest: meta.program_digest.clone(),
        status: status.as_str().to_string(),
        reductions: m.reductions,
        seed: m.seed,
        scheduler: m.rng.clone(),
        next_stack: m.next_stack,
        next_var: m.store.len() as u64,
        next_closure: m.store.next_closure_id(),
        statements: t.statements,
        procs: t.procs,
        stacks,
        store,
        globals: env_pairs(&m.globals),
        externals: env_pairs(&m.externals),
        pinned: m.pinned.iter().map(|v| v.0).collect(),
        timers: m.timers.iter().map(|(v, tm)| SnapTimer { var: v.0, deadline_ms: tm.deadline_ms, virtual_clock: tm.virtual_clock }).collect(),
        calls: m
            .calls
            .iter()
            .map(|(v, c)| SnapCall { var: v.0, module: c.module.clone(), op: c.op.clone(), args: c.args.clone(), idempotent: c.idempotent })
            .collect(),
        streams: m.streams.iter().map(|(k, v)| (k.clone(), v.0)).collect(),
        log: m.log.clone(),
    })
}

/// A restored machine plus non-fatal findings.
#[derive(Debug)]
pub struct Restored {
    pub machine: Machine,
    pub warnings: Vec<String>,
}

/// Rebuilds a machine. `expected_digest`, when given, is compared with the
/// recorded program digest; a mismatch is only a warning.
pub fn restore(s: &Snapshot, expected_digest: Option<&str>) -> Result<Restored, SnapshotError> {
    if s.format_version != FORMAT_VERSION {
        return Err(SnapshotError::UnsupportedVersion(s.format_version));
    }
    let mut warnings = Vec::new();
    if let Some(d) = expected_digest {
        if d != s.program_digest {
            warnings.push(format!("program digest mismatch: snapshot {} loaded {}", s.program_digest, d));
        }
    }
    let present: BTreeSet<u64> = s.store.iter().map(|(v, _)| *v).collect();
    let check = |v: u64| if present.contains(&v) && v < s.next_var { Ok(VarRef(v)) } else { Err(SnapshotError::Dangling(v)) };
    let stmts: Vec<Arc<Stmt>> = s.statements.iter().cloned().map(Arc::new).collect();
    let procs: Vec<Arc<ProcLit>> = s.procs.iter().cloned().map(Arc::new).collect();
    let stmt_at = |i: u32| stmts.get(i as usize).cloned().ok_or(SnapshotError::BadIndex("statement", i));
    let env_of = |pairs: &[(String, u64)]| -> Result<BTreeMap<Sym, VarRef>, SnapshotError> {
        pairs.iter().map(|(k, v)| Ok((Sym::from(k.as_str()), check(*v)?))).collect()
    };
    let value_of = |x: &SnapValue| -> Result<Value, SnapshotError> {
        Ok(match x {
            SnapValue::Int(i) => Value::Int(*i),
            SnapValue::Float(f) => Value::Float(*f),
            SnapValue::Bool(b) => Value::Bool(*b),
            SnapValue::Atom(a) => Value::Atom(a.as_str().into()),
            SnapValue::Record { label, features } => {
                let mut fs = BTreeMap::new();
                for (f, v) in features {
                    fs.insert(f.clone(), check(*v)?);
                }
                Value::Record(Arc::new(Record { label: label.as_str().into(), features: fs }))
            }
            SnapValue::Closure { id, proc, env } => {
                let p = procs.get(*proc as usize).cloned().ok_or(SnapshotError::BadIndex("procedure", *proc))?;
                Value::Closure(Arc::new(Closure { id: *id, proc: p, env: env_of(env)? }))
            }
            SnapValue::Builtin(n) => Value::Builtin(n.as_str().into()),
        })
    };

    let mut cells: Vec<Option<VarState>> = vec![None; s.next_var as usize];
    for (v, sv) in &s.store {
        let state = match sv {
            SnapVar::Unbound { suspensions, trigger, watchers } => {
                let trigger = match trigger {
                    Some((p, needed)) => Some(Trigger { proc_var: check(*p)?, needed: *needed }),
                    None => None,
                };
                let watchers = watchers.iter().map(|(tv, c)| Ok(Watcher { target: check(*tv)?, choice: *c })).collect::<Result<_, SnapshotError>>()?;
                VarState::Unbound(Unbound { suspensions: suspensions.iter().copied().collect(), trigger, watchers })
            }
            SnapVar::Determined(x) => VarState::Determined(value_of(x)?),
            SnapVar::Failed(x) => VarState::Failed(value_of(x)?),
            SnapVar::Alias(a) => VarState::Alias(check(*a)?),
        };
        let slot = cells.get_mut(*v as usize).ok_or(SnapshotError::Dangling(*v))?;
        *slot = Some(state);
    }
    let store = Store::from_cells(cells, s.next_closure);

    let mut stacks = BTreeMap::new();
    let mut runnable = BTreeSet::new();
    for st in &s.stacks {
        let mut frames = Vec::with_capacity(st.frames.len());
        for f in &st.frames {
            frames.push(match f {
                SnapFrame::Stmt { stmt, env } => Frame::Stmt(stmt_at(*stmt)?, Arc::new(env_of(env)?)),
                SnapFrame::Catch { ident, handler, env } => Frame::Catch(ident.as_str().into(), stmt_at(*handler)?, Arc::new(env_of(env)?)),
                SnapFrame::Await(v) => Frame::Await(check(*v)?),
            });
        }
        let suspended_on = st.suspended_on.map(check).transpose()?;
        let result_var = st.result_var.map(check).transpose()?;
        if suspended_on.is_none() {
            runnable.insert(st.id);
        }
        stacks.insert(st.id, Stack { frames, suspended_on, result_var });
    }

    let mut m = Machine::from_parts(store, s.seed, s.scheduler.clone());
    m.stacks = stacks;
    m.runnable = runnable;
    m.next_stack = s.next_stack;
    m.reductions = s.reductions;
    m.globals = env_of(&s.globals)?;
    m.externals = env_of(&s.externals)?;
    m.pinned = s.pinned.iter().map(|v| check(*v)).collect::<Result<_, _>>()?;
    for tm in &s.timers {
        m.timers.insert(check(tm.var)?, Timer { deadline_ms: tm.deadline_ms, virtual_clock: tm.virtual_clock });
    }
    for c in &s.calls {
        m.calls.insert(check(c.var)?, PendingCall { module: c.module.clone(), op: c.op.clone(), args: c.args.clone(), idempotent: c.idempotent });
    }
    for (k, v) in &s.streams {
        m.streams.insert(k.clone(), check(*v)?);
    }
    m.log = s.log.clone();
    Ok(Restored { machine: m, warnings })
}

impl Machine {
    fn from_parts(store: Store, seed: u64, rng: ChaCha8Rng) -> Machine {
        let mut m = Machine::new(Stmt::Skip, BTreeMap::new(), store, seed).expect("empty program");
        m.stacks.clear();
        m.runnable.clear();
        m.rng = rng;
        m
    }

    /// After a restore: re-issues idempotent in-flight calls and fails the
    /// others with `connectorError(interrupted ...)`.
    pub fn resume_pending_calls(&mut self) {
        let calls: Vec<(VarRef, PendingCall)> = self.calls.iter().map(|(v, c)| (*v, c.clone())).collect();
        for (var, call) in calls {
            if call.idempotent {
                self.effects.push(Effect::Invoke { var, call });
            } else {
                let reason = Term::tuple("connectorError", vec![Term::atom("interrupted"), Term::atom(&format!("{}.{}", call.module, call.op))]);
                self.fail_call(var, reason);
            }
        }
    }
}

impl Snapshot {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1024);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_be_bytes());
        ciborium::into_writer(self, &mut out).expect("in-memory encoding");
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Snapshot, SnapshotError> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(SnapshotError::BadMagic);
        }
        let version = u32::from_be_bytes(bytes[4..8].try_into().expect("four bytes"));
        if version != FORMAT_VERSION {
            return Err(SnapshotError::UnsupportedVersion(version));
        }
        let s: Snapshot = ciborium::from_reader(&bytes[8..]).map_err(|e| SnapshotError::Decode(e.to_string()))?;
        if s.format_version != version {
            return Err(SnapshotError::UnsupportedVersion(s.format_version));
        }
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot renders as JSON")
    }

    pub fn file_name(&self) -> String {
        format!("{}.{}.{}.{EXTENSION}", self.tenant_id, self.process_id, self.reductions)
    }

    /// Number of variables in the store graph.
    pub fn var_count(&self) -> usize {
        self.store.len()
    }
}

/// Writes atomically: a temporary file in `dir` is synced, then renamed.
pub fn write_snapshot(s: &Snapshot, dir: &Path) -> Result<PathBuf, SnapshotError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SnapshotError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join(s.file_name());
    let tmp = dir.join(format!(".{}.{}.tmp", s.file_name(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
        f.write_all(&s.encode()).map_err(io(&tmp))?;
        f.sync_all().map_err(io(&tmp))?;
    }
    fs::rename(&tmp, &path).map_err(io(&path))?;
    if let Ok(d) = fs::File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(path)
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, SnapshotError> {
    let bytes = fs::read(path).map_err(|source| SnapshotError::Io { path: path.to_path_buf(), source })?;
    Snapshot::decode(&bytes)
}
