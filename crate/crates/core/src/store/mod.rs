//! The single-assignment store of one process.

mod entail;
mod unify;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::lang::pretty::{atom_text, float_text};
use crate::lang::{Feature, ProcLit, Sym};

/// Rendered values are cut off after roughly this many bytes.
const SHOW_LIMIT: usize = 64 * 1024;

pub use entail::Entailment;
pub use unify::UnifyOutcome;

/// Process-unique variable ordinal. Never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarRef(pub u64);

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

pub type StackId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub label: Sym,
    pub features: BTreeMap<Feature, VarRef>,
}

impl Record {
    pub fn is_cons(&self) -> bool {
        &*self.label == "|" && self.features.len() == 2 && self.features.contains_key(&Feature::Int(1)) && self.features.contains_key(&Feature::Int(2))
    }

    pub fn get(&self, f: &Feature) -> Option<VarRef> {
        self.features.get(f).copied()
    }
}

#[derive(Debug, Clone)]
pub struct Closure {
    /// Identity used by unification; closures are equal only to themselves.
    pub id: u64,
    pub proc: Arc<ProcLit>,
    /// Captured environment, restricted to the literal's free identifiers.
    pub env: BTreeMap<Sym, VarRef>,
}

#[derive(Debug, Clone)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Atom(Sym),
    Record(Arc<Record>),
    Closure(Arc<Closure>),
    /// A built-in procedure, module, or module operation (`Mod.op`).
    Builtin(Sym),
}

/// Identity-level equality: records compare feature variables, not their contents.
impl PartialEq for Value {
    fn eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Record(a), Value::Record(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => a.to_bits() == b.to_bits(),
            _ => self.same_shape(other),
        }
    }
}

impl Value {
    pub fn atom(s: &str) -> Value {
        Value::Atom(Sym::from(s))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Bool(_) => "bool",
            Value::Atom(_) => "atom",
            Value::Record(_) => "record",
            Value::Closure(_) => "procedure",
            Value::Builtin(_) => "builtin",
        }
    }

    /// Equality of the top constructor; features are not compared.
    pub fn same_shape(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => !a.is_nan() && a.to_bits() == b.to_bits(),
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Atom(a), Value::Atom(b)) => a == b,
            (Value::Builtin(a), Value::Builtin(b)) => a == b,
            (Value::Closure(a), Value::Closure(b)) => a.id == b.id,
            (Value::Record(a), Value::Record(b)) => {
                a.label == b.label && a.features.len() == b.features.len() && a.features.keys().eq(b.features.keys())
            }
            _ => false,
        }
    }
}

/// A by-need trigger: the procedure to apply once the variable is needed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trigger {
    pub proc_var: VarRef,
    pub needed: bool,
}

/// Binds `target` to `choice` when the watched variable is determined or
/// failed, unless `target` is bound by then. Backs `WaitTwo`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Watcher {
    pub target: VarRef,
    pub choice: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Unbound {
    pub suspensions: BTreeSet<StackId>,
    pub trigger: Option<Trigger>,
    pub watchers: Vec<Watcher>,
}

#[derive(Debug, Clone)]
pub enum VarState {
    Unbound(Unbound),
    Determined(Value),
    Failed(Value),
    Alias(VarRef),
}

/// State class for the history checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Unbound,
    Determined,
    Failed,
    Alias,
}

impl VarState {
    pub fn kind(&self) -> StateKind {
        match self {
            VarState::Unbound(_) => StateKind::Unbound,
            VarState::Determined(_) => StateKind::Determined,
            VarState::Failed(_) => StateKind::Failed,
            VarState::Alias(_) => StateKind::Alias,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("variable {0} is not unbound")]
    NotUnbound(VarRef),
    #[error("variable {0} already has a by-need trigger")]
    TriggerInstalled(VarRef),
    #[error("unknown variable {0}")]
    Unknown(VarRef),
}

/// Result of waiting on a variable.
#[derive(Debug, Clone)]
pub enum WaitOutcome {
    Ready(Value),
    /// The stack is registered as suspended. `trigger` names a by-need
    /// procedure that has just become needed and must now be run.
    Suspended { root: VarRef, trigger: Option<(VarRef, VarRef)> },
    Raised(Value),
}

#[derive(Debug, Clone, Default)]
pub struct Store {
    cells: Vec<Option<VarState>>,
    next_closure: u64,
    history: Option<Vec<(VarRef, StateKind)>>,
}

impl Store {
    pub fn new() -> Self {
        Store::default()
    }

    /// Rebuilds a store from a sparse cell table, preserving ids.
    pub fn from_cells(cells: Vec<Option<VarState>>, next_closure: u64) -> Self {
        Store { cells, next_closure, history: None }
    }

    pub fn cells(&self) -> &[Option<VarState>] {
        &self.cells
    }

    pub fn next_closure_id(&self) -> u64 {
        self.next_closure
    }

    pub fn fresh_closure_id(&mut self) -> u64 {
        let id = self.next_closure;
        self.next_closure += 1;
        id
    }

    /// Number of variable ids ever issued.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn live_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Records every state change from now on, for monotonicity checks.
    pub fn enable_history(&mut self) {
        self.history = Some(Vec::new());
    }

    pub fn history(&self) -> &[(VarRef, StateKind)] {
        self.history.as_deref().unwrap_or(&[])
    }

    pub fn new_var(&mut self) -> VarRef {
        let v = VarRef(self.cells.len() as u64);
        self.cells.push(Some(VarState::Unbound(Unbound::default())));
        if let Some(h) = &mut self.history {
            h.push((v, StateKind::Unbound));
        }
        v
    }

    pub fn new_determined(&mut self, value: Value) -> VarRef {
        let v = self.new_var();
        self.set_state(v, VarState::Determined(value));
        v
    }

    pub fn contains(&self, v: VarRef) -> bool {
        self.cells.get(v.0 as usize).is_some_and(|c| c.is_some())
    }

    fn cell(&self, v: VarRef) -> &VarState {
        self.cells
            .get(v.0 as usize)
            .and_then(|c| c.as_ref())
            .unwrap_or_else(|| panic!("dangling variable {v}"))
    }

    fn cell_mut(&mut self, v: VarRef) -> &mut VarState {
        self.cells
            .get_mut(v.0 as usize)
            .and_then(|c| c.as_mut())
            .unwrap_or_else(|| panic!("dangling variable {v}"))
    }

    pub(crate) fn set_state(&mut self, v: VarRef, state: VarState) {
        if let Some(h) = &mut self.history {
            h.push((v, state.kind()));
        }
        *self.cell_mut(v) = state;
    }

    /// Representative without path compression.
    pub fn find(&self, mut v: VarRef) -> VarRef {
        while let VarState::Alias(t) = self.cell(v) {
            v = *t;
        }
        v
    }

    /// Representative of `v`; compresses the alias path.
    pub fn deref(&mut self, v: VarRef) -> VarRef {
        self.deref_counting(v).0
    }

    /// Like `deref`, also reporting the number of alias links followed.
    pub fn deref_counting(&mut self, v: VarRef) -> (VarRef, usize) {
        let root = self.find(v);
        let mut hops = 0;
        let mut cur = v;
        while cur != root {
            let VarState::Alias(next) = *self.cell(cur) else { unreachable!() };
            hops += 1;
            if next != root {
                // Compression rewrites an alias to a shorter alias; not a state change.
                *self.cell_mut(cur) = VarState::Alias(root);
            }
            cur = next;
        }
        (root, hops)
    }

    /// State of the representative of `v`; never `Alias`.
    pub fn state(&self, v: VarRef) -> &VarState {
        self.cell(self.find(v))
    }

    /// Raw state of `v` itself, possibly `Alias`.
    pub fn raw_state(&self, v: VarRef) -> Option<&VarState> {
        self.cells.get(v.0 as usize).and_then(|c| c.as_ref())
    }

    pub fn value(&self, v: VarRef) -> Option<&Value> {
        match self.state(v) {
            VarState::Determined(x) => Some(x),
            _ => None,
        }
    }

    pub fn is_determined(&self, v: VarRef) -> bool {
        matches!(self.state(v), VarState::Determined(_))
    }

    pub fn is_unbound(&self, v: VarRef) -> bool {
        matches!(self.state(v), VarState::Unbound(_))
    }

    pub fn suspensions(&self, v: VarRef) -> BTreeSet<StackId> {
        match self.state(v) {
            VarState::Unbound(u) => u.suspensions.clone(),
            _ => BTreeSet::new(),
        }
    }

    /// The waiting rule: determined variables are ready, failed ones raise,
    /// unbound ones suspend `stack` (and fire a pending by-need trigger).
    pub fn wait(&mut self, stack: StackId, v: VarRef) -> WaitOutcome {
        let root = self.deref(v);
        match self.cell_mut(root) {
            VarState::Determined(x) => WaitOutcome::Ready(x.clone()),
            VarState::Failed(e) => WaitOutcome::Raised(e.clone()),
            VarState::Unbound(u) => {
                u.suspensions.insert(stack);
                let trigger = match &mut u.trigger {
                    Some(t) if !t.needed => {
                        t.needed = true;
                        Some((t.proc_var, root))
                    }
                    _ => None,
                };
                WaitOutcome::Suspended { root, trigger }
            }
            VarState::Alias(_) => unreachable!("deref returned an alias"),
        }
    }

    /// Removes `stack` from the suspension set of `v`, if present.
    pub fn unsuspend(&mut self, stack: StackId, v: VarRef) {
        let root = self.deref(v);
        if let VarState::Unbound(u) = self.cell_mut(root) {
            u.suspensions.remove(&stack);
        }
    }

    /// Marks a by-need trigger as needed without suspending anything.
    /// Returns the trigger to run, if it was pending.
    pub fn need(&mut self, v: VarRef) -> Option<(VarRef, VarRef)> {
        let root = self.deref(v);
        if let VarState::Unbound(Unbound { trigger: Some(t), .. }) = self.cell_mut(root) {
            if !t.needed {
                t.needed = true;
                return Some((t.proc_var, root));
            }
        }
        None
    }

    pub fn install_by_need(&mut self, v: VarRef, proc_var: VarRef) -> Result<(), StoreError> {
        let root = self.deref(v);
        match self.cell_mut(root) {
            VarState::Unbound(u) if u.trigger.is_some() => Err(StoreError::TriggerInstalled(root)),
            VarState::Unbound(u) => {
                u.trigger = Some(Trigger { proc_var, needed: false });
                Ok(())
            }
            _ => Err(StoreError::NotUnbound(root)),
        }
    }

    /// Whether the by-need trigger on `v` exists and has been demanded.
    pub fn trigger(&self, v: VarRef) -> Option<&Trigger> {
        match self.state(v) {
            VarState::Unbound(u) => u.trigger.as_ref(),
            _ => None,
        }
    }

    /// Registers a `WaitTwo` watcher on `v`.
    pub fn add_watcher(&mut self, v: VarRef, w: Watcher) {
        let root = self.deref(v);
        if let VarState::Unbound(u) = self.cell_mut(root) {
            u.watchers.push(w);
        }
    }

    /// Stores a failed value in an unbound variable and wakes its waiters.
    pub fn set_failed(&mut self, v: VarRef, exception: Value) -> Result<UnifyOutcome, StoreError> {
        let root = self.deref(v);
        let VarState::Unbound(u) = self.cell(root).clone() else {
            return Err(StoreError::NotUnbound(root));
        };
        self.set_state(root, VarState::Failed(exception));
        let mut out = UnifyOutcome::default();
        out.wakes.extend(u.suspensions);
        self.fire_watchers(u.watchers, &mut out);
        Ok(out)
    }

    /// Builds `label(1:a 2:b ...)` from existing variables.
    pub fn make_tuple(&mut self, label: &str, args: &[VarRef]) -> Value {
        let features = args.iter().enumerate().map(|(i, v)| (Feature::Int(i as i64 + 1), *v)).collect();
        Value::Record(Arc::new(Record { label: Sym::from(label), features }))
    }

    /// Builds `label(1:x 2:y ...)` allocating a determined variable per field.
    pub fn make_tuple_values(&mut self, label: &str, args: Vec<Value>) -> Value {
        let vars: Vec<VarRef> = args.into_iter().map(|a| self.new_determined(a)).collect();
        self.make_tuple(label, &vars)
    }

    /// Renders the current value of `v` in surface syntax; unbound parts print
    /// as `_` and a reference back to an enclosing value prints as `<cycle>`.
    pub fn show(&self, v: VarRef) -> String {
        let mut out = String::new();
        self.show_into(v, &mut out, &mut Vec::new());
        out
    }

    pub fn show_value(&self, x: &Value, out: &mut String) {
        self.show_value_in(x, out, &mut Vec::new());
    }

    fn show_into(&self, v: VarRef, out: &mut String, path: &mut Vec<VarRef>) {
        if out.len() > SHOW_LIMIT {
            out.push_str("...");
            return;
        }
        let root = self.find(v);
        if path.contains(&root) {
            out.push_str("<cycle>");
            return;
        }
        path.push(root);
        match self.state(root) {
            VarState::Unbound(_) => out.push('_'),
            VarState::Failed(e) => {
                out.push_str("<failed ");
                self.show_value_in(e, out, path);
                out.push('>');
            }
            VarState::Determined(x) => self.show_value_in(x, out, path),
            VarState::Alias(_) => unreachable!(),
        }
        path.pop();
    }

    fn show_value_in(&self, x: &Value, out: &mut String, path: &mut Vec<VarRef>) {
        match x {
            Value::Int(i) => {
                let _ = write!(out, "{i}");
            }
            Value::Float(f) => out.push_str(&float_text(*f)),
            Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Value::Atom(a) => out.push_str(&atom_text(a)),
            Value::Builtin(n) => {
                let _ = write!(out, "<builtin {n}>");
            }
            Value::Closure(c) => {
                let _ = write!(out, "<procedure/{}>", c.proc.params.len());
            }
            Value::Record(r) => {
                if let Some(items) = self.list_items(x) {
                    out.push('[');
                    for (i, item) in items.iter().enumerate() {
                        if i > 0 {
                            out.push(' ');
                        }
                        self.show_into(*item, out, path);
                    }
                    out.push(']');
                    return;
                }
                out.push_str(&atom_text(&r.label));
                out.push('(');
                for (i, (f, fv)) in r.features.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "{f}:");
                    self.show_into(*fv, out, path);
                }
                out.push(')');
            }
        }
    }

    /// Elements of a proper list ending in `nil`, if `x` is one.
    pub fn list_items(&self, x: &Value) -> Option<Vec<VarRef>> {
        let mut items = Vec::new();
        let mut seen = BTreeSet::new();
        let mut cur = x.clone();
        loop {
            match &cur {
                Value::Atom(a) if &**a == "nil" => return Some(items),
                Value::Record(r) if r.is_cons() => {
                    if items.len() > 100_000 {
                        return None;
                    }
                    items.push(r.features[&Feature::Int(1)]);
                    let tail = self.find(r.features[&Feature::Int(2)]);
                    if !seen.insert(tail) {
                        return None;
                    }
                    cur = self.value(tail)?.clone();
                }
                _ => return None,
            }
        }
    }

    /// Variables reachable from `roots` through values, closures, aliases,
    /// triggers and watchers.
    pub fn reachable(&self, roots: impl IntoIterator<Item = VarRef>) -> BTreeSet<VarRef> {
        let mut seen = BTreeSet::new();
        let mut todo: Vec<VarRef> = roots.into_iter().collect();
        while let Some(v) = todo.pop() {
            if !seen.insert(v) {
                continue;
            }
            let Some(state) = self.raw_state(v) else { continue };
            match state {
                VarState::Alias(t) => todo.push(*t),
                VarState::Determined(x) | VarState::Failed(x) => value_refs(x, &mut todo),
                VarState::Unbound(u) => {
                    if let Some(t) = &u.trigger {
                        todo.push(t.proc_var);
                    }
                    todo.extend(u.watchers.iter().map(|w| w.target));
                }
            }
        }
        seen
    }
}

/// Variables referenced directly by a value.
pub fn value_refs(x: &Value, out: &mut Vec<VarRef>) {
    match x {
        Value::Record(r) => out.extend(r.features.values().copied()),
        Value::Closure(c) => out.extend(c.env.values().copied()),
        _ => {}
    }
}
