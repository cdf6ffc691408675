//! Three-valued equality entailment.
//!
//! Simulates unification over a local overlay without touching the store:
//! a conflict means `False`, success without any binding means `True`, and
//! success that needed bindings means `Unknown`.

use std::collections::{HashMap, HashSet};

use super::{Store, Value, VarRef, VarState};

#[derive(Debug, Clone, PartialEq)]
pub enum Entailment {
    True,
    False,
    /// Not yet decided; `wait_on` is an unbound variable whose binding may decide it.
    Unknown { wait_on: VarRef },
    /// A failed value was reached.
    Raised(Value),
}

enum Slot {
    Alias(VarRef),
    Bound(Value),
}

struct Overlay<'s> {
    store: &'s Store,
    slots: HashMap<VarRef, Slot>,
}

enum Resolved {
    Unbound(VarRef),
    Value(VarRef, Value),
    Failed(Value),
}

impl Overlay<'_> {
    fn resolve(&self, mut v: VarRef) -> Resolved {
        loop {
            let r = self.store.find(v);
            match self.slots.get(&r) {
                Some(Slot::Alias(t)) => v = *t,
                Some(Slot::Bound(x)) => return Resolved::Value(r, x.clone()),
                None => {
                    return match self.store.state(r) {
                        VarState::Determined(x) => Resolved::Value(r, x.clone()),
                        VarState::Failed(e) => Resolved::Failed(e.clone()),
                        _ => Resolved::Unbound(r),
                    }
                }
            }
        }
    }
}

impl Store {
    pub fn entailed(&self, a: VarRef, b: VarRef) -> Entailment {
        let mut ov = Overlay { store: self, slots: HashMap::new() };
        let mut memo = HashSet::new();
        let mut work = vec![(a, b)];
        let mut first_needed: Option<VarRef> = None;
        while let Some((x, y)) = work.pop() {
            let (rx, ry) = (ov.resolve(x), ov.resolve(y));
            match (rx, ry) {
                (Resolved::Failed(e), _) | (_, Resolved::Failed(e)) => return Entailment::Raised(e),
                (Resolved::Unbound(p), Resolved::Unbound(q)) => {
                    if p != q {
                        first_needed.get_or_insert(p.min(q));
                        ov.slots.insert(p.max(q), Slot::Alias(p.min(q)));
                    }
                }
                (Resolved::Unbound(p), Resolved::Value(_, v)) | (Resolved::Value(_, v), Resolved::Unbound(p)) => {
                    first_needed.get_or_insert(p);
                    ov.slots.insert(p, Slot::Bound(v));
                }
                (Resolved::Value(p, vx), Resolved::Value(q, vy)) => {
                    if p == q || !memo.insert((p.min(q), p.max(q))) {
                        continue;
                    }
                    if !vx.same_shape(&vy) {
                        return Entailment::False;
                    }
                    if let (Value::Record(r1), Value::Record(r2)) = (&vx, &vy) {
                        for (f, fx) in r1.features.iter() {
                            work.push((*fx, r2.features[f]));
                        }
                    }
                }
            }
        }
        match first_needed {
            None => Entailment::True,
            Some(v) => Entailment::Unknown { wait_on: v },
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use super::*;
    use crate::lang::Feature;
    use crate::store::Record;

    fn rec(s: &mut Store, label: &str, vars: &[VarRef]) -> VarRef {
        let features: BTreeMap<_, _> = vars.iter().enumerate().map(|(i, v)| (Feature::Int(i as i64 + 1), *v)).collect();
        s.new_determined(Value::Record(Arc::new(Record { label: label.into(), features })))
    }

    #[test]
    fn basic_cases() {
        let mut s = Store::new();
        let v = s.new_var();
        assert_eq!(s.entailed(v, v), Entailment::True);
        let one = s.new_determined(Value::Int(1));
        let two = s.new_determined(Value::Int(2));
        assert_eq!(s.entailed(one, two), Entailment::False);
        let (a, b) = (s.new_var(), s.new_var());
        let pa = rec(&mut s, "person", &[a]);
        let pb = rec(&mut s, "person", &[b]);
        assert!(matches!(s.entailed(pa, pb), Entailment::Unknown { .. }));
    }

    #[test]
    fn shared_variable_forces_conflict() {
        // f(X X) vs f(1 2) can never hold.
        let mut s = Store::new();
        let x = s.new_var();
        let one = s.new_determined(Value::Int(1));
        let two = s.new_determined(Value::Int(2));
        let l = rec(&mut s, "f", &[x, x]);
        let r = rec(&mut s, "f", &[one, two]);
        assert_eq!(s.entailed(l, r), Entailment::False);
    }
}
