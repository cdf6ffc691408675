//! Unification over rational trees.

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use super::{Record, StackId, Store, Unbound, Value, VarRef, VarState, Watcher};
use crate::lang::Feature;

/// Effects of a unification step.
#[derive(Debug, Clone, Default)]
pub struct UnifyOutcome {
    /// Stacks to make runnable; each appears once.
    pub wakes: BTreeSet<StackId>,
    /// The exception to raise if unification failed.
    pub failure: Option<Value>,
}

enum Work {
    Pair(VarRef, VarRef),
    /// Bind if still unbound; otherwise ignore.
    Offer(VarRef, Value),
}

impl Store {
    /// Unifies `a` and `b`. Bindings made before a conflict is found remain.
    pub fn unify(&mut self, a: VarRef, b: VarRef) -> UnifyOutcome {
        let mut out = UnifyOutcome::default();
        let mut work = vec![Work::Pair(a, b)];
        let mut memo: HashSet<(VarRef, VarRef)> = HashSet::new();
        while let Some(item) = work.pop() {
            match item {
                Work::Offer(v, x) => {
                    let r = self.deref(v);
                    if let VarState::Unbound(u) = self.cell(r).clone() {
                        self.bind_root(r, u, x, &mut out, &mut work);
                    }
                }
                Work::Pair(x, y) => {
                    let (rx, ry) = (self.deref(x), self.deref(y));
                    if rx == ry || !memo.insert((rx.min(ry), rx.max(ry))) {
                        continue;
                    }
                    match (self.cell(rx).clone(), self.cell(ry).clone()) {
                        (VarState::Failed(e), _) | (_, VarState::Failed(e)) => {
                            out.failure = Some(e);
                            return out;
                        }
                        (VarState::Unbound(ux), VarState::Unbound(uy)) => {
                            let (keep, drop, mut uk, ud) = if rx < ry { (rx, ry, ux, uy) } else { (ry, rx, uy, ux) };
                            uk.suspensions.extend(ud.suspensions);
                            if uk.trigger.is_none() {
                                uk.trigger = ud.trigger;
                            } else if let (Some(k), Some(d)) = (&mut uk.trigger, &ud.trigger) {
                                k.needed |= d.needed;
                            }
                            uk.watchers.extend(ud.watchers);
                            self.set_state(keep, VarState::Unbound(uk));
                            self.set_state(drop, VarState::Alias(keep));
                        }
                        (VarState::Unbound(u), VarState::Determined(v)) => self.bind_root(rx, u, v, &mut out, &mut work),
                        (VarState::Determined(v), VarState::Unbound(u)) => self.bind_root(ry, u, v, &mut out, &mut work),
                        (VarState::Determined(vx), VarState::Determined(vy)) => {
                            if !vx.same_shape(&vy) {
                                out.failure = Some(self.unify_failure(a, b));
                                return out;
                            }
                            if let (Value::Record(p), Value::Record(q)) = (&vx, &vy) {
                                for (f, fx) in p.features.iter() {
                                    work.push(Work::Pair(*fx, q.features[f]));
                                }
                            }
                        }
                        (VarState::Alias(_), _) | (_, VarState::Alias(_)) => unreachable!("deref returned an alias"),
                    }
                }
            }
        }
        out
    }

    fn bind_root(&mut self, root: VarRef, u: Unbound, value: Value, out: &mut UnifyOutcome, work: &mut Vec<Work>) {
        self.set_state(root, VarState::Determined(value));
        out.wakes.extend(u.suspensions);
        for w in u.watchers {
            work.push(Work::Offer(w.target, Value::Int(w.choice)));
        }
    }

    pub(super) fn fire_watchers(&mut self, watchers: Vec<Watcher>, out: &mut UnifyOutcome) {
        for w in watchers {
            let r = self.deref(w.target);
            if let VarState::Unbound(_) = self.cell(r) {
                let more = self.bind_value(r, Value::Int(w.choice));
                out.wakes.extend(more.wakes);
            }
        }
    }

    /// The exception value `failure(unify(A B))`.
    pub fn unify_failure(&mut self, a: VarRef, b: VarRef) -> Value {
        let inner = self.make_tuple("unify", &[a, b]);
        self.make_tuple_values("failure", vec![inner])
    }

    /// Unifies `v` with a fresh value. Binds in place when `v` is unbound.
    pub fn bind_value(&mut self, v: VarRef, value: Value) -> UnifyOutcome {
        let root = self.deref(v);
        if let VarState::Unbound(u) = self.cell(root).clone() {
            let mut out = UnifyOutcome::default();
            let mut work = Vec::new();
            self.bind_root(root, u, value, &mut out, &mut work);
            if !work.is_empty() {
                let rest = self.drain(work);
                out.wakes.extend(rest.wakes);
            }
            return out;
        }
        let t = self.new_determined(value);
        self.unify(v, t)
    }

    fn drain(&mut self, work: Vec<Work>) -> UnifyOutcome {
        let mut out = UnifyOutcome::default();
        let mut work = work;
        while let Some(item) = work.pop() {
            if let Work::Offer(v, x) = item {
                let r = self.deref(v);
                if let VarState::Unbound(u) = self.cell(r).clone() {
                    self.bind_root(r, u, x, &mut out, &mut work);
                }
            }
        }
        out
    }

    /// Allocates a record whose features are fresh determined variables.
    pub fn record_of(&mut self, label: &str, fields: Vec<(Feature, Value)>) -> Value {
        let features = fields.into_iter().map(|(f, x)| (f, self.new_determined(x))).collect();
        Value::Record(Arc::new(Record { label: label.into(), features }))
    }
}
