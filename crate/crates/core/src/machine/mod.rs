//! The abstract machine: a multiset of semantic stacks over one store.

mod builtins;
mod host;
mod pattern;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lang::{free_identifiers, kernel::sym, Program, Stmt, Sym, ValueLit};
use crate::store::{Closure, Record, StackId, Store, UnifyOutcome, Value, VarRef, VarState, WaitOutcome};
use crate::term::Term;

pub use builtins::{builtin_arity, correlation_key, is_builtin_procedure};
pub use host::{Host, Member, NullHost};
pub use pattern::{match_pattern, MatchResult};

/// Reductions per slice unless configured otherwise.
pub const DEFAULT_BUDGET: usize = 1000;

pub type Env = Arc<BTreeMap<Sym, VarRef>>;

#[derive(Debug, Clone)]
pub enum Frame {
    Stmt(Arc<Stmt>, Env),
    /// Handler installed by `TryCatch`.
    Catch(Sym, Arc<Stmt>, Env),
    /// Blocks until the variable is determined.
    Await(VarRef),
}

#[derive(Debug, Clone)]
pub struct Stack {
    pub frames: Vec<Frame>,
    pub suspended_on: Option<VarRef>,
    /// Variable failed if this stack dies of an uncaught exception; inherited by spawned threads.
    pub result_var: Option<VarRef>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    PartiallyActive,
    PartiallyTerminated,
    Terminated,
    Crashed(String),
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::PartiallyActive => "partially-active",
            Status::PartiallyTerminated => "partially-terminated",
            Status::Terminated => "terminated",
            Status::Crashed(_) => "crashed",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Crashed(r) => write!(f, "crashed: {r}"),
            s => f.write_str(s.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Progressed,
    StackSuspended(VarRef),
    StackDone,
    ThreadRaised(Term),
}

/// An outbound module invocation awaiting completion.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingCall {
    pub module: String,
    pub op: String,
    pub args: Vec<Term>,
    pub idempotent: bool,
}

/// Requests for the host, drained after each slice.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Invoke { var: VarRef, call: PendingCall },
    TimerArmed { var: VarRef, deadline_ms: i64 },
    Commit { location: Term },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timer {
    pub deadline_ms: i64,
    pub virtual_clock: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamEvent {
    Item(Term),
    End,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MachineError {
    #[error("unbound identifier `{0}`")]
    Unbound(Sym),
    #[error("process has crashed: {0}")]
    Crashed(String),
    #[error("unknown procedure `{0}`")]
    UnknownProcedure(String),
    #[error("unknown external name `{0}`")]
    UnknownExternal(String),
}

#[derive(Debug, Clone)]
pub struct Machine {
    pub(crate) store: Store,
    pub(crate) stacks: BTreeMap<StackId, Stack>,
    pub(crate) runnable: BTreeSet<StackId>,
    pub(crate) next_stack: StackId,
    pub(crate) reductions: u64,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) seed: u64,
    /// Process-level variables of the program.
    pub(crate) globals: BTreeMap<Sym, VarRef>,
    /// External names registered through `Orch.updateCSet`.
    pub(crate) externals: BTreeMap<Sym, VarRef>,
    /// Extra snapshot roots, such as Ask reply variables.
    pub(crate) pinned: BTreeSet<VarRef>,
    pub(crate) timers: BTreeMap<VarRef, Timer>,
    pub(crate) calls: BTreeMap<VarRef, PendingCall>,
    /// Stream subscriptions: id to the current tail variable.
    pub(crate) streams: BTreeMap<String, VarRef>,
    pub(crate) log: Vec<String>,
    pub(crate) crashed: Option<String>,
    pub(crate) trace: Option<Vec<String>>,
    pub(crate) effects: Vec<Effect>,
}

fn env_of(pairs: impl IntoIterator<Item = (Sym, VarRef)>) -> Env {
    Arc::new(pairs.into_iter().collect())
}

impl Machine {
    /// A machine with one stack running `stmt` in `env`.
    pub fn new(stmt: Stmt, env: BTreeMap<Sym, VarRef>, store: Store, seed: u64) -> Result<Machine, MachineError> {
        if let Some(x) = free_identifiers(&stmt).into_iter().find(|x| !env.contains_key(x)) {
            return Err(MachineError::Unbound(x));
        }
        let mut m = Machine::empty(store, seed);
        m.globals = env.clone();
        m.spawn(Frame::Stmt(Arc::new(stmt), Arc::new(env)), None);
        Ok(m)
    }

    fn empty(store: Store, seed: u64) -> Machine {
        Machine {
            store,
            stacks: BTreeMap::new(),
            runnable: BTreeSet::new(),
            next_stack: 0,
            reductions: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            globals: BTreeMap::new(),
            externals: BTreeMap::new(),
            pinned: BTreeSet::new(),
            timers: BTreeMap::new(),
            calls: BTreeMap::new(),
            streams: BTreeMap::new(),
            log: Vec::new(),
            crashed: None,
            trace: None,
            effects: Vec::new(),
        }
    }

    /// Instantiates a program: fresh variables for its globals, values for
    /// its built-ins and modules.
    pub fn from_program(program: &Program, seed: u64) -> Machine {
        let mut store = Store::new();
        let mut env = BTreeMap::new();
        for g in &program.globals {
            env.insert(g.clone(), store.new_var());
        }
        for b in program.builtins.iter().chain(&program.modules) {
            env.insert(b.clone(), store.new_determined(Value::Builtin(b.clone())));
        }
        Machine::new((*program.body).clone(), env, store, seed).expect("program environment covers its free identifiers")
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut Store {
        &mut self.store
    }

    pub fn reductions(&self) -> u64 {
        self.reductions
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn globals(&self) -> &BTreeMap<Sym, VarRef> {
        &self.globals
    }

    pub fn global(&self, name: &str) -> Option<VarRef> {
        self.globals.get(name).copied()
    }

    pub fn externals(&self) -> &BTreeMap<Sym, VarRef> {
        &self.externals
    }

    pub fn timers(&self) -> &BTreeMap<VarRef, Timer> {
        &self.timers
    }

    pub fn pending_calls(&self) -> &BTreeMap<VarRef, PendingCall> {
        &self.calls
    }

    pub fn log(&self) -> &[String] {
        &self.log
    }

    pub fn stacks(&self) -> &BTreeMap<StackId, Stack> {
        &self.stacks
    }

    pub fn stack_count(&self) -> usize {
        self.stacks.len()
    }

    pub fn runnable(&self) -> &BTreeSet<StackId> {
        &self.runnable
    }

    pub fn runnable_count(&self) -> usize {
        self.runnable.len()
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<String> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn take_effects(&mut self) -> Vec<Effect> {
        std::mem::take(&mut self.effects)
    }

    pub fn pin(&mut self, v: VarRef) {
        self.pinned.insert(v);
    }

    pub fn unpin(&mut self, v: VarRef) {
        self.pinned.remove(&v);
    }

    pub fn pinned(&self) -> &BTreeSet<VarRef> {
        &self.pinned
    }

    pub fn status(&self) -> Status {
        if let Some(r) = &self.crashed {
            Status::Crashed(r.clone())
        } else if self.stacks.is_empty() {
            Status::Terminated
        } else if !self.runnable.is_empty() {
            Status::PartiallyActive
        } else {
            Status::PartiallyTerminated
        }
    }

    /// Variables that suspended stacks are waiting on.
    pub fn frontier(&self) -> BTreeSet<VarRef> {
        self.stacks.values().filter_map(|s| s.suspended_on).map(|v| self.store.find(v)).collect()
    }

    /// External names whose variables are on the frontier.
    pub fn frontier_names(&self) -> Vec<String> {
        let f = self.frontier();
        self.externals.iter().filter(|(_, v)| f.contains(&self.store.find(**v))).map(|(k, _)| k.to_string()).collect()
    }

    fn spawn(&mut self, frame: Frame, result_var: Option<VarRef>) -> StackId {
        let id = self.next_stack;
        self.next_stack += 1;
        self.stacks.insert(id, Stack { frames: vec![frame], suspended_on: None, result_var });
        self.runnable.insert(id);
        id
    }

    /// Adds a runnable stack (partial activation).
    pub fn inject(&mut self, stmt: Stmt, env: BTreeMap<Sym, VarRef>) -> Result<StackId, MachineError> {
        self.inject_with_result(stmt, env, None)
    }

    pub fn inject_with_result(&mut self, stmt: Stmt, env: BTreeMap<Sym, VarRef>, result: Option<VarRef>) -> Result<StackId, MachineError> {
        if let Some(r) = &self.crashed {
            return Err(MachineError::Crashed(r.clone()));
        }
        if let Some(x) = free_identifiers(&stmt).into_iter().find(|x| !env.contains_key(x)) {
            return Err(MachineError::Unbound(x));
        }
        Ok(self.spawn(Frame::Stmt(Arc::new(stmt), Arc::new(env)), result))
    }

    /// Injects `{P Args...}` for a global procedure. With `result`, the
    /// procedure receives it as an extra last argument if its arity allows;
    /// otherwise `result` is bound to `unit` once the call returns.
    pub fn inject_call(&mut self, procedure: &str, args: &[Term], result: Option<VarRef>) -> Result<StackId, MachineError> {
        let p = self.global(procedure).ok_or_else(|| MachineError::UnknownProcedure(procedure.to_string()))?;
        let mut env = BTreeMap::new();
        env.insert(sym("_p"), p);
        let mut names = Vec::new();
        for (i, a) in args.iter().enumerate() {
            let n = sym(&format!("_a{}", i + 1));
            let v = a.to_store(&mut self.store);
            env.insert(n.clone(), v);
            names.push(n);
        }
        let stmt = match result {
            Some(r) => {
                self.pin(r);
                env.insert(sym("_r"), r);
                env.insert(sym(builtins::ASK), self.store.new_determined(Value::Builtin(sym(builtins::ASK))));
                let mut all = vec![sym("_p")];
                all.extend(names);
                all.push(sym("_r"));
                Stmt::Apply(sym(builtins::ASK), all)
            }
            None => Stmt::Apply(sym("_p"), names),
        };
        self.inject_with_result(stmt, env, result)
    }

    /// Injects a binding of an external name to a value.
    pub fn inject_external(&mut self, name: &str, value: &Term) -> Result<StackId, MachineError> {
        let x = *self.externals.get(name).ok_or_else(|| MachineError::UnknownExternal(name.to_string()))?;
        let v = value.to_store(&mut self.store);
        let env = BTreeMap::from([(sym("_x"), x), (sym("_v"), v)]);
        self.inject(Stmt::BindVarVar(sym("_x"), sym("_v")), env)
    }

    /// Seeded uniform choice among runnable stacks.
    pub fn select_runnable(&mut self) -> Option<StackId> {
        let n = self.runnable.len();
        if n == 0 {
            return None;
        }
        let k = if n == 1 { 0 } else { self.rng.random_range(0..n) };
        self.runnable.iter().nth(k).copied()
    }

    /// Up to `budget` reductions; stops early when nothing is runnable.
    pub fn run_slice(&mut self, budget: usize, host: &mut dyn Host) -> Status {
        for _ in 0..budget {
            if self.crashed.is_some() {
                break;
            }
            let Some(sid) = self.select_runnable() else { break };
            self.step(sid, host);
        }
        self.status()
    }

    /// Runs until nothing is runnable, `limit` reductions at most.
    pub fn run_to_quiescence(&mut self, limit: usize, host: &mut dyn Host) -> Status {
        let start = self.reductions;
        while self.status() == Status::PartiallyActive && ((self.reductions - start) as usize) < limit {
            self.run_slice(DEFAULT_BUDGET.min(limit - (self.reductions - start) as usize), host);
        }
        self.status()
    }

    fn trace_line(&mut self, sid: StackId, op: &str, detail: impl FnOnce() -> String) {
        if let Some(t) = &mut self.trace {
            let d = detail();
            if d.is_empty() {
                t.push(format!("seq={} stack={} op={}", self.reductions, sid, op));
            } else {
                t.push(format!("seq={} stack={} op={} {}", self.reductions, sid, op, d));
            }
        }
    }

    fn wake(&mut self, out: &UnifyOutcome) {
        for sid in &out.wakes {
            if let Some(s) = self.stacks.get_mut(sid) {
                if s.suspended_on.take().is_some() {
                    self.runnable.insert(*sid);
                }
            }
        }
    }

    fn push(&mut self, sid: StackId, frame: Frame) {
        if let Some(s) = self.stacks.get_mut(&sid) {
            s.frames.push(frame);
        }
    }

    fn suspend(&mut self, sid: StackId, frame: Frame, on: VarRef) -> StepOutcome {
        self.push(sid, frame);
        if let Some(s) = self.stacks.get_mut(&sid) {
            s.suspended_on = Some(on);
        }
        self.runnable.remove(&sid);
        StepOutcome::StackSuspended(on)
    }

    /// Waits on `v` for stack `sid`. On suspension the frame is requeued.
    fn need(&mut self, sid: StackId, v: VarRef) -> Need {
        match self.store.wait(sid, v) {
            WaitOutcome::Ready(x) => Need::Ready(x),
            WaitOutcome::Raised(e) => Need::Raise(e),
            WaitOutcome::Suspended { root, trigger } => {
                if let Some((p, x)) = trigger {
                    self.spawn_trigger(p, x);
                }
                Need::Blocked(root)
            }
        }
    }

    pub(crate) fn spawn_trigger(&mut self, proc_var: VarRef, var: VarRef) {
        let env = env_of([(sym("_p"), proc_var), (sym("_x"), var)]);
        self.spawn(Frame::Stmt(Arc::new(Stmt::Apply(sym("_p"), vec![sym("_x")])), env), None);
    }

    fn lookup(&mut self, env: &Env, x: &Sym) -> Option<VarRef> {
        let v = env.get(x).copied();
        if v.is_none() {
            self.crash(format!("unbound identifier `{x}` at run time"));
        }
        v
    }

    fn crash(&mut self, reason: String) {
        self.log.push(format!("crash: {reason}"));
        self.crashed.get_or_insert(reason);
    }

    /// One reduction on stack `sid`.
    pub fn step(&mut self, sid: StackId, host: &mut dyn Host) -> StepOutcome {
        let Some(frame) = self.stacks.get_mut(&sid).and_then(|s| s.frames.pop()) else {
            self.finish(sid);
            return StepOutcome::StackDone;
        };
        self.reductions += 1;
        let outcome = self.reduce(sid, frame, host);
        match outcome {
            Reduced::Ok => {
                if self.stacks.get(&sid).is_some_and(|s| s.frames.is_empty()) {
                    self.finish(sid);
                    StepOutcome::StackDone
                } else {
                    StepOutcome::Progressed
                }
            }
            Reduced::Suspended(o) => o,
            Reduced::Raise(e) => self.raise(sid, e),
        }
    }

    fn finish(&mut self, sid: StackId) {
        self.stacks.remove(&sid);
        self.runnable.remove(&sid);
    }

    fn raise(&mut self, sid: StackId, exc: Value) -> StepOutcome {
        let term = self.exception_term(&exc);
        loop {
            let frame = self.stacks.get_mut(&sid).and_then(|s| s.frames.pop());
            match frame {
                Some(Frame::Catch(x, handler, env)) => {
                    let v = self.store.new_determined(exc);
                    let mut e = (*env).clone();
                    e.insert(x, v);
                    self.push(sid, Frame::Stmt(handler, Arc::new(e)));
                    return StepOutcome::ThreadRaised(term);
                }
                Some(_) => continue,
                None => break,
            }
        }
        let result = self.stacks.get(&sid).and_then(|s| s.result_var);
        self.finish(sid);
        let shown = {
            let mut s = String::new();
            self.store.show_value(&exc, &mut s);
            s
        };
        self.log.push(format!("uncaught exception in stack {sid}: {shown}"));
        if let Some(r) = result {
            if self.store.is_unbound(r) {
                if let Ok(out) = self.store.set_failed(r, exc) {
                    self.wake(&out);
                }
            }
        }
        StepOutcome::ThreadRaised(term)
    }

    fn exception_term(&self, exc: &Value) -> Term {
        let mut s = self.store.clone();
        let v = s.new_determined(exc.clone());
        Term::from_store(&s, v).unwrap_or_else(|_| Term::atom("nonGroundException"))
    }

    /// `error(Kind(Args...))` built from existing variables.
    pub(crate) fn error_value(&mut self, kind: &str, args: Vec<Value>) -> Value {
        let inner = if args.is_empty() { Value::atom(kind) } else { self.store.make_tuple_values(kind, args) };
        self.store.make_tuple_values("error", vec![inner])
    }

    fn unify_in(&mut self, a: VarRef, b: VarRef) -> Reduced {
        let out = self.store.unify(a, b);
        self.wake(&out);
        match out.failure {
            Some(e) => Reduced::Raise(e),
            None => Reduced::Ok,
        }
    }

    pub(crate) fn bind_in(&mut self, v: VarRef, x: Value) -> Reduced {
        let out = self.store.bind_value(v, x);
        self.wake(&out);
        match out.failure {
            Some(e) => Reduced::Raise(e),
            None => Reduced::Ok,
        }
    }

    fn reduce(&mut self, sid: StackId, frame: Frame, host: &mut dyn Host) -> Reduced {
        let (stmt, env) = match frame {
            Frame::Stmt(s, e) => (s, e),
            Frame::Catch(..) => {
                self.trace_line(sid, "PopCatch", String::new);
                return Reduced::Ok;
            }
            Frame::Await(v) => {
                self.trace_line(sid, "Await", || v.to_string());
                return match self.need(sid, v) {
                    Need::Ready(_) => Reduced::Ok,
                    Need::Raise(e) => Reduced::Raise(e),
                    Need::Blocked(r) => Reduced::Suspended(self.suspend(sid, Frame::Await(v), r)),
                };
            }
        };
        self.trace_line(sid, stmt.variant_name(), || trace_detail(&stmt));
        match &*stmt {
            Stmt::Skip => Reduced::Ok,
            Stmt::Seq(a, b) => {
                self.push(sid, Frame::Stmt(b.clone(), env.clone()));
                self.push(sid, Frame::Stmt(a.clone(), env));
                Reduced::Ok
            }
            Stmt::Local(x, body) => {
                let v = self.store.new_var();
                let mut e = (*env).clone();
                e.insert(x.clone(), v);
                self.push(sid, Frame::Stmt(body.clone(), Arc::new(e)));
                Reduced::Ok
            }
            Stmt::BindVarVar(x, y) => {
                let (Some(a), Some(b)) = (self.lookup(&env, x), self.lookup(&env, y)) else { return Reduced::Ok };
                self.unify_in(a, b)
            }
            Stmt::BindValue(x, lit) => {
                let Some(target) = self.lookup(&env, x) else { return Reduced::Ok };
                let Some(value) = self.construct(lit, &env) else { return Reduced::Ok };
                self.bind_in(target, value)
            }
            Stmt::Conditional(x, then, otherwise) => {
                let Some(v) = self.lookup(&env, x) else { return Reduced::Ok };
                match self.need(sid, v) {
                    Need::Ready(Value::Bool(b)) => {
                        self.push(sid, Frame::Stmt(if b { then.clone() } else { otherwise.clone() }, env));
                        Reduced::Ok
                    }
                    Need::Ready(other) => Reduced::Raise(self.error_value("boolExpected", vec![other])),
                    Need::Raise(e) => Reduced::Raise(e),
                    Need::Blocked(r) => Reduced::Suspended(self.suspend(sid, Frame::Stmt(stmt.clone(), env), r)),
                }
            }
            Stmt::Match(x, clauses, otherwise) => {
                let Some(v) = self.lookup(&env, x) else { return Reduced::Ok };
                for (pat, body) in clauses {
                    match match_pattern(&self.store, v, pat) {
                        MatchResult::Yes(binds) => {
                            let mut e = (*env).clone();
                            e.extend(binds);
                            self.push(sid, Frame::Stmt(body.clone(), Arc::new(e)));
                            return Reduced::Ok;
                        }
                        MatchResult::No => continue,
                        MatchResult::Raise(e) => return Reduced::Raise(e),
                        MatchResult::Wait(w) => {
                            return match self.need(sid, w) {
                                Need::Blocked(r) => Reduced::Suspended(self.suspend(sid, Frame::Stmt(stmt.clone(), env), r)),
                                Need::Raise(e) => Reduced::Raise(e),
                                // Bound meanwhile by a trigger: retry the whole match.
                                Need::Ready(_) => {
                                    self.push(sid, Frame::Stmt(stmt.clone(), env));
                                    Reduced::Ok
                                }
                            };
                        }
                    }
                }
                self.push(sid, Frame::Stmt(otherwise.clone(), env));
                Reduced::Ok
            }
            Stmt::Apply(p, args) => {
                let Some(pv) = self.lookup(&env, p) else { return Reduced::Ok };
                let mut argv = Vec::with_capacity(args.len());
                for a in args {
                    let Some(v) = self.lookup(&env, a) else { return Reduced::Ok };
                    argv.push(v);
                }
                match self.need(sid, pv) {
                    Need::Ready(Value::Closure(c)) => self.apply_closure(sid, &c, &argv),
                    Need::Ready(Value::Builtin(name)) => {
                        self.call_builtin(sid, &name, &argv, host, Frame::Stmt(stmt.clone(), env))
                    }
                    Need::Ready(other) => Reduced::Raise(self.error_value("notProcedure", vec![other])),
                    Need::Raise(e) => Reduced::Raise(e),
                    Need::Blocked(r) => Reduced::Suspended(self.suspend(sid, Frame::Stmt(stmt.clone(), env), r)),
                }
            }
            Stmt::SpawnThread(body) => {
                let result = self.stacks.get(&sid).and_then(|s| s.result_var);
                self.spawn(Frame::Stmt(body.clone(), env), result);
                Reduced::Ok
            }
            Stmt::TryCatch(body, x, handler) => {
                self.push(sid, Frame::Catch(x.clone(), handler.clone(), env.clone()));
                self.push(sid, Frame::Stmt(body.clone(), env));
                Reduced::Ok
            }
            Stmt::Raise(x) => {
                let Some(v) = self.lookup(&env, x) else { return Reduced::Ok };
                match self.need(sid, v) {
                    Need::Ready(e) | Need::Raise(e) => Reduced::Raise(e),
                    Need::Blocked(r) => Reduced::Suspended(self.suspend(sid, Frame::Stmt(stmt.clone(), env), r)),
                }
            }
        }
    }

    pub(crate) fn apply_closure(&mut self, sid: StackId, c: &Arc<Closure>, args: &[VarRef]) -> Reduced {
        if c.proc.params.len() != args.len() {
            let e = self.error_value("arity", vec![Value::Int(c.proc.params.len() as i64), Value::Int(args.len() as i64)]);
            return Reduced::Raise(e);
        }
        let mut e = c.env.clone();
        for (p, a) in c.proc.params.iter().zip(args) {
            e.insert(p.clone(), *a);
        }
        self.push(sid, Frame::Stmt(c.proc.body.clone(), Arc::new(e)));
        Reduced::Ok
    }

    fn construct(&mut self, lit: &ValueLit, env: &Env) -> Option<Value> {
        Some(match lit {
            ValueLit::Int(i) => Value::Int(*i),
            ValueLit::Float(x) => Value::Float(*x),
            ValueLit::Bool(b) => Value::Bool(*b),
            ValueLit::Atom(a) => Value::Atom(a.clone()),
            ValueLit::Record { label, features } => {
                let mut fs = BTreeMap::new();
                for (f, x) in features {
                    fs.insert(f.clone(), self.lookup(env, x)?);
                }
                Value::Record(Arc::new(Record { label: label.clone(), features: fs }))
            }
            ValueLit::Proc(p) => {
                let mut captured = BTreeMap::new();
                for x in &p.free {
                    captured.insert(x.clone(), self.lookup(env, x)?);
                }
                let id = self.store.fresh_closure_id();
                Value::Closure(Arc::new(Closure { id, proc: p.clone(), env: captured }))
            }
        })
    }

    /// Binds a timer variable to `unit`.
    pub fn fire_timer(&mut self, var: VarRef) -> bool {
        if self.timers.remove(&var).is_none() {
            return false;
        }
        let out = self.store.bind_value(var, Value::atom("unit"));
        self.wake(&out);
        true
    }

    /// Timers with deadline at or before `now`.
    pub fn due_timers(&self, now: i64) -> Vec<VarRef> {
        let mut due: Vec<_> = self.timers.iter().filter(|(_, t)| t.deadline_ms <= now).map(|(v, t)| (t.deadline_ms, *v)).collect();
        due.sort();
        due.into_iter().map(|(_, v)| v).collect()
    }

    pub fn next_deadline(&self) -> Option<i64> {
        self.timers.values().map(|t| t.deadline_ms).min()
    }

    /// Delivers the outcome of an outbound call.
    pub fn complete_call(&mut self, var: VarRef, result: Result<Term, Term>) -> bool {
        if self.calls.remove(&var).is_none() {
            return false;
        }
        let out = match result {
            Ok(t) => {
                let v = t.to_value(&mut self.store);
                self.store.bind_value(var, v)
            }
            Err(e) => {
                let x = e.to_value(&mut self.store);
                match self.store.set_failed(var, x) {
                    Ok(out) => out,
                    Err(err) => {
                        self.log.push(format!("call result dropped: {err}"));
                        return true;
                    }
                }
            }
        };
        if out.failure.is_some() {
            self.log.push(format!("call result for {var} conflicts with its binding"));
        }
        self.wake(&out);
        true
    }

    /// Fails a pending call, e.g. a non-idempotent one found on restore.
    pub fn fail_call(&mut self, var: VarRef, reason: Term) -> bool {
        self.complete_call(var, Err(reason))
    }

    /// Opens a stream subscription on `head`.
    pub fn subscribe(&mut self, id: &str, head: VarRef) {
        self.streams.insert(id.to_string(), head);
    }

    pub fn streams(&self) -> &BTreeMap<String, VarRef> {
        &self.streams
    }

    /// Advances a subscription over newly bound cons cells.
    pub fn poll_stream(&mut self, id: &str) -> Vec<StreamEvent> {
        let Some(mut tail) = self.streams.get(id).copied() else { return Vec::new() };
        let mut events = Vec::new();
        loop {
            match self.store.state(tail).clone() {
                VarState::Determined(Value::Record(r)) if r.is_cons() => {
                    let head = r.features[&crate::lang::Feature::Int(1)];
                    match Term::from_store(&self.store, head) {
                        Ok(t) => {
                            events.push(StreamEvent::Item(t));
                            tail = r.features[&crate::lang::Feature::Int(2)];
                        }
                        Err(_) => break,
                    }
                }
                VarState::Unbound(_) => break,
                _ => {
                    events.push(StreamEvent::End);
                    self.streams.remove(id);
                    return events;
                }
            }
        }
        self.streams.insert(id.to_string(), tail);
        events
    }

    pub fn close_stream(&mut self, id: &str) {
        self.streams.remove(id);
    }

    /// Current value of a global as a ground term, if it is one.
    pub fn global_term(&self, name: &str) -> Option<Term> {
        self.global(name).and_then(|v| Term::from_store(&self.store, v).ok())
    }

    /// Rendered bindings of all user-visible globals.
    pub fn bindings(&self) -> Vec<(String, String)> {
        self.globals
            .iter()
            .filter(|(k, _)| !k.starts_with('_') && k.chars().next().is_some_and(|c| c.is_ascii_uppercase()))
            .filter(|(_, v)| !matches!(self.store.value(**v), Some(Value::Builtin(_))))
            .map(|(k, v)| (k.to_string(), self.store.show(*v)))
            .collect()
    }
}

pub(crate) enum Need {
    Ready(Value),
    Blocked(VarRef),
    Raise(Value),
}

pub(crate) enum Reduced {
    Ok,
    Suspended(StepOutcome),
    Raise(Value),
}

fn trace_detail(stmt: &Stmt) -> String {
    match stmt {
        Stmt::Local(x, _) => x.to_string(),
        Stmt::BindVarVar(x, y) => format!("{x}={y}"),
        Stmt::BindValue(x, _) => x.to_string(),
        Stmt::Conditional(x, ..) | Stmt::Match(x, ..) | Stmt::Raise(x) => x.to_string(),
        Stmt::Apply(p, args) => format!("{p}/{}", args.len()),
        _ => String::new(),
    }
}
