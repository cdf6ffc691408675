//! Matching store values against kernel patterns.

use crate::lang::{Pattern, Sym};
use crate::store::{Store, Value, VarRef, VarState};

#[derive(Debug, Clone)]
pub enum MatchResult {
    Yes(Vec<(Sym, VarRef)>),
    No,
    /// Undecided until this variable is bound.
    Wait(VarRef),
    Raise(Value),
}

pub fn match_pattern(store: &Store, v: VarRef, pat: &Pattern) -> MatchResult {
    let mut binds = Vec::new();
    match go(store, v, pat, &mut binds) {
        Partial::Yes => MatchResult::Yes(binds),
        Partial::No => MatchResult::No,
        Partial::Wait(w) => MatchResult::Wait(w),
        Partial::Raise(e) => MatchResult::Raise(e),
    }
}

enum Partial {
    Yes,
    No,
    Wait(VarRef),
    Raise(Value),
}

fn go(store: &Store, v: VarRef, pat: &Pattern, binds: &mut Vec<(Sym, VarRef)>) -> Partial {
    match pat {
        Pattern::Wildcard => return Partial::Yes,
        Pattern::Capture(x) => {
            binds.push((x.clone(), v));
            return Partial::Yes;
        }
        _ => {}
    }
    let root = store.find(v);
    let val = match store.state(root) {
        VarState::Unbound(_) => return Partial::Wait(root),
        VarState::Failed(e) => return Partial::Raise(e.clone()),
        VarState::Determined(x) => x,
        VarState::Alias(_) => unreachable!(),
    };
    let ok = match (pat, val) {
        (Pattern::Int(a), Value::Int(b)) => a == b,
        (Pattern::Float(a), Value::Float(b)) => !a.is_nan() && a.to_bits() == b.to_bits(),
        (Pattern::Bool(a), Value::Bool(b)) => a == b,
        (Pattern::Atom(a), Value::Atom(b)) => a == b,
        (Pattern::Record { label, features }, Value::Record(r)) => {
            if *label != r.label || features.len() != r.features.len() || !features.iter().all(|(f, _)| r.features.contains_key(f)) {
                return Partial::No;
            }
            let mut wait = None;
            for (f, sub) in features {
                match go(store, r.features[f], sub, binds) {
                    Partial::Yes => {}
                    Partial::No => return Partial::No,
                    Partial::Raise(e) => return Partial::Raise(e),
                    Partial::Wait(w) => {
                        wait.get_or_insert(w);
                    }
                }
            }
            return match wait {
                Some(w) => Partial::Wait(w),
                None => Partial::Yes,
            };
        }
        _ => false,
    };
    if ok {
        Partial::Yes
    } else {
        Partial::No
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{kernel::sym, Feature};

    #[test]
    fn record_pattern_captures_features() {
        let mut s = Store::new();
        let id = s.new_determined(Value::atom("acme"));
        let avg = s.new_var();
        let r = {
            let mut fields = std::collections::BTreeMap::new();
            fields.insert(Feature::Atom("key".into()), id);
            fields.insert(Feature::Atom("averageSale".into()), avg);
            Value::Record(std::sync::Arc::new(crate::store::Record { label: "customer".into(), features: fields }))
        };
        let v = s.new_determined(r);
        let pat = Pattern::Record {
            label: sym("customer"),
            features: vec![(Feature::Atom("averageSale".into()), Pattern::Capture(sym("AS"))), (Feature::Atom("key".into()), Pattern::Capture(sym("Id")))],
        };
        let MatchResult::Yes(b) = match_pattern(&s, v, &pat) else { panic!() };
        assert_eq!(b.len(), 2);
        let lit = Pattern::Record { label: sym("customer"), features: vec![(Feature::Atom("averageSale".into()), Pattern::Int(1)), (Feature::Atom("key".into()), Pattern::Atom(sym("zzz")))] };
        assert!(matches!(match_pattern(&s, v, &lit), MatchResult::No));
        let lit = Pattern::Record { label: sym("customer"), features: vec![(Feature::Atom("averageSale".into()), Pattern::Int(1)), (Feature::Atom("key".into()), Pattern::Wildcard)] };
        assert!(matches!(match_pattern(&s, v, &lit), MatchResult::Wait(w) if w == avg));
    }
}
