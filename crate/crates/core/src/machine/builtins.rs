//! Built-in procedures and module dispatch.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::Arc;

use super::{Effect, Frame, Host, Machine, Member, Need, PendingCall, Reduced, Timer};
use crate::lang::desugar::ORCH_MODULE;
use crate::lang::{kernel::sym, Feature};
use crate::store::{Entailment, StackId, Value, VarRef, VarState, Watcher};
use crate::term::{Term, TermError};

/// Internal procedure used to deliver Asks; not writable in source.
pub(crate) const ASK: &str = "$ask";

/// Accepted arities of a built-in procedure.
pub fn builtin_arity(name: &str) -> Option<&'static [usize]> {
    Some(match name {
        "+" | "-" | "*" | "/" | "<" | ">" | "=<" | ">=" | "==" | "\\=" | "." | "WaitTwo" => &[3],
        "Wait" => &[1],
        "Sleep" => &[1, 2, 3],
        "ByNeed" | "IsDet" | "Abs" | "Label" | "Width" | "Fail" => &[2],
        "Orch.updateCSet" | "Orch.commit" => &[2],
        _ => return None,
    })
}

/// Argument positions a built-in waits on before it runs.
fn waits_on(name: &str, arity: usize) -> &'static [usize] {
    match name {
        "+" | "-" | "*" | "/" | "<" | ">" | "=<" | ">=" | "." => &[0, 1],
        "Wait" | "Abs" | "Label" | "Width" | "Orch.updateCSet" | "Orch.commit" => &[0],
        "Fail" => &[1],
        "Sleep" if arity == 1 => &[0],
        "Sleep" => &[0, 1],
        ASK => &[0],
        _ => &[],
    }
}

pub fn is_builtin_procedure(name: &str) -> bool {
    builtin_arity(name).is_some()
}

const UNITS: &[(&str, i64)] = &[
    ("millis", 1),
    ("milli", 1),
    ("seconds", 1000),
    ("second", 1000),
    ("minutes", 60_000),
    ("minute", 60_000),
    ("hours", 3_600_000),
    ("hour", 3_600_000),
    ("days", 86_400_000),
    ("day", 86_400_000),
];

pub fn unit_millis(unit: &str) -> Option<i64> {
    UNITS.iter().find(|(u, _)| *u == unit).map(|(_, m)| *m)
}

enum Num {
    I(i64),
    F(f64),
}

fn num(v: &Value) -> Option<Num> {
    match v {
        Value::Int(i) => Some(Num::I(*i)),
        Value::Float(x) => Some(Num::F(*x)),
        _ => None,
    }
}

impl Machine {
    pub(super) fn call_builtin(&mut self, sid: StackId, name: &str, args: &[VarRef], host: &mut dyn Host, frame: Frame) -> Reduced {
        if name == ASK {
            return self.ask_apply(sid, args, frame);
        }
        let is_module_op = name.contains('.') && name.len() > 1;
        if !is_module_op && builtin_arity(name).is_none() {
            return Reduced::Raise(self.error_value("notProcedure", vec![Value::Builtin(sym(name))]));
        }
        if let Some(ar) = builtin_arity(name) {
            if !ar.contains(&args.len()) {
                let e = self.error_value("arity", vec![Value::atom(name), Value::Int(args.len() as i64)]);
                return Reduced::Raise(e);
            }
        }
        let mut vals = Vec::with_capacity(args.len());
        for &i in waits_on(name, args.len()) {
            match self.need(sid, args[i]) {
                Need::Ready(v) => vals.push(v),
                Need::Raise(e) => return Reduced::Raise(e),
                Need::Blocked(r) => return Reduced::Suspended(self.suspend(sid, frame, r)),
            }
        }
        match name {
            "+" | "-" | "*" | "/" => self.arith(name, &vals[0], &vals[1], args[2]),
            "<" | ">" | "=<" | ">=" => match compare(&vals[0], &vals[1]) {
                Some(o) => {
                    let r = match name {
                        "<" => o == Ordering::Less,
                        ">" => o == Ordering::Greater,
                        "=<" => o != Ordering::Greater,
                        _ => o != Ordering::Less,
                    };
                    self.bind_in(args[2], Value::Bool(r))
                }
                None => Reduced::Raise(self.error_value("typeError", vec![Value::atom(name)])),
            },
            "==" | "\\=" => match self.store.entailed(args[0], args[1]) {
                Entailment::True => self.bind_in(args[2], Value::Bool(name == "==")),
                Entailment::False => self.bind_in(args[2], Value::Bool(name != "==")),
                Entailment::Raised(e) => Reduced::Raise(e),
                Entailment::Unknown { wait_on } => match self.need(sid, wait_on) {
                    Need::Blocked(r) => Reduced::Suspended(self.suspend(sid, frame, r)),
                    Need::Raise(e) => Reduced::Raise(e),
                    Need::Ready(_) => {
                        self.push(sid, frame);
                        Reduced::Ok
                    }
                },
            },
            "." => self.select(&vals[0], &vals[1], args[2], host),
            "Wait" => Reduced::Ok,
            "WaitTwo" => self.wait_two(args[0], args[1], args[2]),
            "Sleep" => self.sleep(sid, &vals, args, host),
            "ByNeed" => match self.store.install_by_need(args[1], args[0]) {
                Ok(()) => {
                    // A waiter may already be suspended on the variable.
                    if !self.store.suspensions(args[1]).is_empty() {
                        if let Some((p, x)) = self.store.need(args[1]) {
                            self.spawn_trigger(p, x);
                        }
                    }
                    Reduced::Ok
                }
                Err(e) => Reduced::Raise(self.error_value("byNeed", vec![Value::atom(&e.to_string())])),
            },
            "IsDet" => {
                let det = self.store.is_determined(args[0]);
                self.bind_in(args[1], Value::Bool(det))
            }
            "Abs" => match &vals[0] {
                Value::Int(i) => match i.checked_abs() {
                    Some(a) => self.bind_in(args[1], Value::Int(a)),
                    None => Reduced::Raise(self.error_value("overflow", vec![Value::atom("Abs")])),
                },
                Value::Float(x) => self.bind_in(args[1], Value::Float(x.abs())),
                _ => Reduced::Raise(self.error_value("typeError", vec![Value::atom("Abs")])),
            },
            "Label" => match &vals[0] {
                Value::Record(r) => self.bind_in(args[1], Value::Atom(r.label.clone())),
                Value::Atom(a) => self.bind_in(args[1], Value::Atom(a.clone())),
                _ => Reduced::Raise(self.error_value("typeError", vec![Value::atom("Label")])),
            },
            "Width" => match &vals[0] {
                Value::Record(r) => self.bind_in(args[1], Value::Int(r.features.len() as i64)),
                Value::Atom(_) => self.bind_in(args[1], Value::Int(0)),
                _ => Reduced::Raise(self.error_value("typeError", vec![Value::atom("Width")])),
            },
            "Fail" => match self.store.set_failed(args[0], vals[0].clone()) {
                Ok(out) => {
                    self.wake(&out);
                    Reduced::Ok
                }
                Err(_) => Reduced::Raise(vals[0].clone()),
            },
            "Orch.updateCSet" => self.update_cset(sid, &vals[0], args[1], host, frame),
            "Orch.commit" => match self.ground(sid, args[0], frame) {
                Ok(location) => {
                    self.effects.push(Effect::Commit { location });
                    self.bind_in(args[1], Value::atom("unit"))
                }
                Err(r) => r,
            },
            _ => self.module_op(sid, name, args, host, frame),
        }
    }

    fn arith(&mut self, op: &str, a: &Value, b: &Value, out: VarRef) -> Reduced {
        let r = match (num(a), num(b)) {
            (Some(Num::I(x)), Some(Num::I(y))) => {
                let r = match op {
                    "+" => x.checked_add(y),
                    "-" => x.checked_sub(y),
                    "*" => x.checked_mul(y),
                    _ => {
                        if y == 0 {
                            return Reduced::Raise(self.error_value("divideByZero", vec![]));
                        }
                        x.checked_div(y)
                    }
                };
                match r {
                    Some(v) => Value::Int(v),
                    None => return Reduced::Raise(self.error_value("overflow", vec![Value::atom(op)])),
                }
            }
            (Some(x), Some(y)) => {
                let f = |n: Num| match n {
                    Num::I(i) => i as f64,
                    Num::F(x) => x,
                };
                let (x, y) = (f(x), f(y));
                Value::Float(match op {
                    "+" => x + y,
                    "-" => x - y,
                    "*" => x * y,
                    _ => x / y,
                })
            }
            _ => return Reduced::Raise(self.error_value("typeError", vec![Value::atom(op)])),
        };
        self.bind_in(out, r)
    }

    fn select(&mut self, base: &Value, feature: &Value, out: VarRef, host: &mut dyn Host) -> Reduced {
        let feat = match feature {
            Value::Atom(a) => Feature::Atom(a.clone()),
            Value::Int(i) => Feature::Int(*i),
            _ => return Reduced::Raise(self.error_value("typeError", vec![Value::atom(".")])),
        };
        match base {
            Value::Record(r) => match r.get(&feat) {
                Some(v) => {
                    let out_ = self.store.unify(out, v);
                    self.wake(&out_);
                    match out_.failure {
                        Some(e) => Reduced::Raise(e),
                        None => Reduced::Ok,
                    }
                }
                None => Reduced::Raise(self.error_value("noFeature", vec![Value::Atom(r.label.clone()), feature.clone()])),
            },
            Value::Builtin(m) if !m.contains('.') && !is_builtin_procedure(m) => {
                let Feature::Atom(member) = feat else {
                    return Reduced::Raise(self.error_value("typeError", vec![Value::atom(".")]));
                };
                let full = format!("{m}.{member}");
                if &**m == ORCH_MODULE {
                    if is_builtin_procedure(&full) {
                        return self.bind_in(out, Value::Builtin(sym(&full)));
                    }
                    return Reduced::Raise(self.error_value("unknownMember", vec![Value::Atom(m.clone()), Value::Atom(member)]));
                }
                match host.member(m, &member) {
                    Some(Member::Constant(t)) => {
                        let v = t.to_value(&mut self.store);
                        self.bind_in(out, v)
                    }
                    Some(Member::Operation { .. }) => self.bind_in(out, Value::Builtin(sym(&full))),
                    None => Reduced::Raise(self.error_value("unknownMember", vec![Value::Atom(m.clone()), Value::Atom(member)])),
                }
            }
            _ => Reduced::Raise(self.error_value("typeError", vec![Value::atom(".")])),
        }
    }

    fn wait_two(&mut self, a: VarRef, b: VarRef, r: VarRef) -> Reduced {
        let bound = |m: &Machine, v: VarRef| !matches!(m.store.state(v), VarState::Unbound(_));
        if bound(self, a) {
            return self.bind_in(r, Value::Int(1));
        }
        if bound(self, b) {
            return self.bind_in(r, Value::Int(2));
        }
        for v in [a, b] {
            if let Some((p, x)) = self.store.need(v) {
                self.spawn_trigger(p, x);
            }
        }
        self.store.add_watcher(a, Watcher { target: r, choice: 1 });
        self.store.add_watcher(b, Watcher { target: r, choice: 2 });
        Reduced::Ok
    }

    fn sleep(&mut self, sid: StackId, vals: &[Value], args: &[VarRef], host: &mut dyn Host) -> Reduced {
        let amount = match &vals[0] {
            Value::Int(i) => *i as f64,
            Value::Float(x) => *x,
            _ => return Reduced::Raise(self.error_value("typeError", vec![Value::atom("Sleep")])),
        };
        let unit = if args.len() == 1 {
            1
        } else {
            match &vals[1] {
                Value::Atom(u) => match unit_millis(u) {
                    Some(m) => m,
                    None => return Reduced::Raise(self.error_value("unknownTimeUnit", vec![vals[1].clone()])),
                },
                _ => return Reduced::Raise(self.error_value("typeError", vec![Value::atom("Sleep")])),
            }
        };
        let duration = (amount * unit as f64).max(0.0).round() as i64;
        let deadline_ms = host.now_ms().saturating_add(duration);
        let done = if args.len() == 3 {
            let d = self.store.new_var();
            let out = self.store.unify(args[2], d);
            self.wake(&out);
            d
        } else {
            self.store.new_var()
        };
        self.timers.insert(done, Timer { deadline_ms, virtual_clock: host.is_virtual_clock() });
        self.effects.push(Effect::TimerArmed { var: done, deadline_ms });
        if args.len() < 3 {
            self.push(sid, Frame::Await(done));
        }
        Reduced::Ok
    }

    /// The ground term at `v`, or the reduction to return while it is not.
    fn ground(&mut self, sid: StackId, v: VarRef, frame: Frame) -> Result<Term, Reduced> {
        match Term::from_store(&self.store, v) {
            Ok(t) => Ok(t),
            Err(TermError::Unbound(w)) => Err(match self.need(sid, w) {
                Need::Blocked(r) => Reduced::Suspended(self.suspend(sid, frame, r)),
                Need::Raise(e) => Reduced::Raise(e),
                Need::Ready(_) => {
                    self.push(sid, frame);
                    Reduced::Ok
                }
            }),
            Err(TermError::Failed(w)) => Err(match self.store.state(w).clone() {
                VarState::Failed(e) => Reduced::Raise(e),
                _ => Reduced::Ok,
            }),
            Err(e) => Err(Reduced::Raise(self.error_value("notData", vec![Value::atom(&e.to_string())]))),
        }
    }

    fn update_cset(&mut self, _sid: StackId, rec: &Value, out: VarRef, host: &mut dyn Host, _frame: Frame) -> Reduced {
        let Value::Record(r) = rec else {
            return Reduced::Raise(self.error_value("typeError", vec![Value::atom("Orch.updateCSet")]));
        };
        for (f, v) in r.features.iter() {
            let Feature::Atom(name) = f else { continue };
            self.externals.insert(name.clone(), *v);
        }
        for (f, v) in r.features.iter() {
            let Ok(t) = Term::from_store(&self.store, *v) else { continue };
            let key = correlation_key(&f.to_string_raw(), &t);
            if let Err(msg) = host.register_correlation(&key) {
                return Reduced::Raise(self.error_value("duplicateCorrelation", vec![Value::atom(&key), Value::atom(&msg)]));
            }
        }
        self.bind_in(out, Value::atom("unit"))
    }

    fn module_op(&mut self, sid: StackId, name: &str, args: &[VarRef], host: &mut dyn Host, frame: Frame) -> Reduced {
        let Some((module, op)) = name.split_once('.') else {
            return Reduced::Raise(self.error_value("notProcedure", vec![Value::Builtin(sym(name))]));
        };
        let Some((result, inputs)) = args.split_last() else {
            return Reduced::Raise(self.error_value("arity", vec![Value::atom(name), Value::Int(0)]));
        };
        let idempotent = match host.member(module, op) {
            Some(Member::Operation { idempotent }) => idempotent,
            _ => return Reduced::Raise(self.error_value("unknownMember", vec![Value::atom(module), Value::atom(op)])),
        };
        let mut terms = Vec::with_capacity(inputs.len());
        for &a in inputs {
            match self.ground(sid, a, frame.clone()) {
                Ok(t) => terms.push(t),
                Err(r) => return r,
            }
        }
        let var = self.store.new_var();
        let call = PendingCall { module: module.to_string(), op: op.to_string(), args: terms, idempotent };
        self.calls.insert(var, call.clone());
        self.effects.push(Effect::Invoke { var, call });
        let out = self.store.unify(*result, var);
        self.wake(&out);
        match out.failure {
            Some(e) => Reduced::Raise(e),
            None => Reduced::Ok,
        }
    }

    /// `{$ask P Args... R}`: passes R as the last argument when the procedure
    /// takes one more parameter than supplied, otherwise binds R to `unit`
    /// after the call returns.
    fn ask_apply(&mut self, sid: StackId, args: &[VarRef], frame: Frame) -> Reduced {
        let (p, rest) = args.split_first().expect("ask has a procedure argument");
        let (r, call_args) = rest.split_last().expect("ask has a result argument");
        match self.need(sid, *p) {
            Need::Ready(Value::Closure(c)) => {
                let n = c.proc.params.len();
                if n == rest.len() {
                    self.apply_closure(sid, &c, rest)
                } else if n == call_args.len() {
                    let env = Arc::new(BTreeMap::from([(sym("_r"), *r)]));
                    let done = Arc::new(crate::lang::Stmt::BindValue(sym("_r"), crate::lang::ValueLit::Atom(sym("unit"))));
                    self.push(sid, Frame::Stmt(done, env));
                    self.apply_closure(sid, &c, call_args)
                } else {
                    Reduced::Raise(self.error_value("arity", vec![Value::Int(n as i64), Value::Int(call_args.len() as i64)]))
                }
            }
            Need::Ready(other) => Reduced::Raise(self.error_value("notProcedure", vec![other])),
            Need::Raise(e) => Reduced::Raise(e),
            Need::Blocked(root) => Reduced::Suspended(self.suspend(sid, frame, root)),
        }
    }
}

/// Canonical correlation key for one `name: value` pair.
pub fn correlation_key(name: &str, value: &Term) -> String {
    let mut m = serde_json::Map::new();
    m.insert(name.to_string(), value.to_json());
    crate::term::float_preserving(&serde_json::Value::Object(m))
}

fn compare(a: &Value, b: &Value) -> Option<Ordering> {
    match (num(a), num(b)) {
        (Some(Num::I(x)), Some(Num::I(y))) => Some(x.cmp(&y)),
        (Some(x), Some(y)) => {
            let f = |n: Num| match n {
                Num::I(i) => i as f64,
                Num::F(x) => x,
            };
            f(x).partial_cmp(&f(y))
        }
        _ => match (a, b) {
            (Value::Atom(x), Value::Atom(y)) => Some(x.cmp(y)),
            _ => None,
        },
    }
}
