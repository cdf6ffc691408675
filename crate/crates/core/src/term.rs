//! Ground values detached from a store, and their JSON encoding.
//!
//! JSON mapping: integers are integral numbers, floats always carry a
//! fraction or exponent, atoms are strings, proper lists are arrays (`nil`
//! is `[]`), and other records are objects with the label under `$label`
//! (omitted for label `r`). Integer features become decimal string keys.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::de::{self, Deserializer, MapAccess, SeqAccess, Visitor};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value as Json};

use crate::lang::{Feature, Sym};
use crate::store::{Record, Store, Value, VarRef, VarState};

pub const LABEL_KEY: &str = "$label";
pub const DEFAULT_LABEL: &str = "r";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Term {
    Int(i64),
    Float(f64),
    Bool(bool),
    Atom(Sym),
    Record { label: Sym, features: BTreeMap<Feature, Term> },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TermError {
    #[error("value is not ground: variable {0} is unbound")]
    Unbound(VarRef),
    #[error("value is cyclic")]
    Cyclic,
    #[error("value contains a failed variable")]
    Failed(VarRef),
    #[error("{0} values have no data encoding")]
    NotData(&'static str),
    #[error("invalid JSON: {0}")]
    Json(String),
}

impl Term {
    pub fn atom(s: &str) -> Term {
        Term::Atom(Sym::from(s))
    }

    pub fn nil() -> Term {
        Term::atom("nil")
    }

    pub fn tuple(label: &str, items: Vec<Term>) -> Term {
        Term::Record {
            label: label.into(),
            features: items.into_iter().enumerate().map(|(i, t)| (Feature::Int(i as i64 + 1), t)).collect(),
        }
    }

    pub fn record<I: IntoIterator<Item = (S, Term)>, S: AsRef<str>>(label: &str, fields: I) -> Term {
        Term::Record { label: label.into(), features: fields.into_iter().map(|(k, v)| (Feature::Atom(k.as_ref().into()), v)).collect() }
    }

    pub fn list(items: Vec<Term>) -> Term {
        items.into_iter().rev().fold(Term::nil(), |tail, h| Term::tuple("|", vec![h, tail]))
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            Term::Atom(a) => Some(a),
            Term::Record { label, .. } => Some(label),
            _ => None,
        }
    }

    pub fn get(&self, f: &str) -> Option<&Term> {
        match self {
            Term::Record { features, .. } => features.get(&Feature::Atom(f.into())),
            _ => None,
        }
    }

    pub fn arg(&self, i: i64) -> Option<&Term> {
        match self {
            Term::Record { features, .. } => features.get(&Feature::Int(i)),
            _ => None,
        }
    }

    /// Elements if this is a proper list.
    pub fn as_list(&self) -> Option<Vec<&Term>> {
        let mut out = Vec::new();
        let mut cur = self;
        loop {
            match cur {
                Term::Atom(a) if &**a == "nil" => return Some(out),
                Term::Record { label, features } if &**label == "|" && features.len() == 2 => {
                    out.push(features.get(&Feature::Int(1))?);
                    cur = features.get(&Feature::Int(2))?;
                }
                _ => return None,
            }
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Term::Int(i) => Some(*i as f64),
            Term::Float(x) => Some(*x),
            _ => None,
        }
    }

    /// Extracts the ground value at `v`.
    pub fn from_store(store: &Store, v: VarRef) -> Result<Term, TermError> {
        let mut on_path = HashSet::new();
        read(store, v, &mut on_path)
    }

    /// Ground term for a value not held in a variable, e.g. an exception.
    pub fn from_value(store: &Store, x: &Value) -> Result<Term, TermError> {
        read_value(store, x, &mut HashSet::new())
    }

    /// Allocates variables holding this term.
    pub fn to_store(&self, store: &mut Store) -> VarRef {
        let v = self.to_value(store);
        store.new_determined(v)
    }

    pub fn to_value(&self, store: &mut Store) -> Value {
        match self {
            Term::Int(i) => Value::Int(*i),
            Term::Float(x) => Value::Float(*x),
            Term::Bool(b) => Value::Bool(*b),
            Term::Atom(a) => Value::Atom(a.clone()),
            Term::Record { label, features } => {
                let features = features.iter().map(|(f, t)| (f.clone(), t.to_store(store))).collect();
                Value::Record(Arc::new(Record { label: label.clone(), features }))
            }
        }
    }

    pub fn to_json(&self) -> Json {
        match self {
            Term::Int(i) => Json::from(*i),
            Term::Float(x) => Number::from_f64(*x).map(Json::Number).unwrap_or(Json::Null),
            Term::Bool(b) => Json::Bool(*b),
            Term::Atom(a) if &**a == "nil" => Json::Array(Vec::new()),
            Term::Atom(a) => Json::String(a.to_string()),
            Term::Record { label, features } => {
                if let Some(items) = self.as_list() {
                    return Json::Array(items.into_iter().map(Term::to_json).collect());
                }
                let mut m = Map::new();
                if &**label != DEFAULT_LABEL {
                    m.insert(LABEL_KEY.into(), Json::String(label.to_string()));
                }
                for (f, t) in features {
                    m.insert(f.to_string_raw(), t.to_json());
                }
                Json::Object(m)
            }
        }
    }

    pub fn to_json_text(&self) -> String {
        float_preserving(&self.to_json())
    }

    pub fn from_json(j: &Json) -> Result<Term, TermError> {
        Ok(match j {
            Json::Null => return Err(TermError::Json("null has no value encoding".into())),
            Json::Bool(b) => Term::Bool(*b),
            Json::Number(n) => {
                if let Some(i) = n.as_i64() {
                    if n.is_f64() {
                        Term::Float(i as f64)
                    } else {
                        Term::Int(i)
                    }
                } else if n.is_u64() {
                    return Err(TermError::Json(format!("integer {n} out of range")));
                } else {
                    Term::Float(n.as_f64().unwrap_or(f64::NAN))
                }
            }
            Json::String(s) => Term::Atom(s.as_str().into()),
            Json::Array(items) => Term::list(items.iter().map(Term::from_json).collect::<Result<_, _>>()?),
            Json::Object(m) => {
                let label = match m.get(LABEL_KEY) {
                    Some(Json::String(s)) => s.clone(),
                    Some(_) => return Err(TermError::Json(format!("`{LABEL_KEY}` must be a string"))),
                    None => DEFAULT_LABEL.to_string(),
                };
                let mut features = BTreeMap::new();
                for (k, v) in m.iter().filter(|(k, _)| k.as_str() != LABEL_KEY) {
                    features.insert(Feature::parse_key(k), Term::from_json(v)?);
                }
                if features.is_empty() {
                    Term::Atom(label.into())
                } else {
                    Term::Record { label: label.into(), features }
                }
            }
        })
    }

    /// Parses JSON text, rejecting duplicate object keys.
    pub fn from_json_text(text: &str) -> Result<Term, TermError> {
        let j = parse_json_strict(text)?;
        Term::from_json(&j)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = Store::new();
        let v = self.to_store(&mut s);
        f.write_str(&s.show(v))
    }
}

impl Feature {
    /// The key text used in JSON objects.
    pub fn to_string_raw(&self) -> String {
        match self {
            Feature::Int(i) => i.to_string(),
            Feature::Atom(a) => a.to_string(),
        }
    }

    pub fn parse_key(k: &str) -> Feature {
        match k.parse::<i64>() {
            Ok(i) if i.to_string() == k => Feature::Int(i),
            _ => Feature::Atom(k.into()),
        }
    }
}

fn read(store: &Store, v: VarRef, on_path: &mut HashSet<VarRef>) -> Result<Term, TermError> {
    let r = store.find(v);
    match store.state(r) {
        VarState::Unbound(_) => Err(TermError::Unbound(r)),
        VarState::Failed(_) => Err(TermError::Failed(r)),
        VarState::Determined(x) => {
            if matches!(x, Value::Record(_)) && !on_path.insert(r) {
                return Err(TermError::Cyclic);
            }
            let t = read_value(store, x, on_path)?;
            on_path.remove(&r);
            Ok(t)
        }
        VarState::Alias(_) => unreachable!(),
    }
}

fn read_value(store: &Store, x: &Value, on_path: &mut HashSet<VarRef>) -> Result<Term, TermError> {
    match x {
        Value::Int(i) => Ok(Term::Int(*i)),
        Value::Float(f) => Ok(Term::Float(*f)),
        Value::Bool(b) => Ok(Term::Bool(*b)),
        Value::Atom(a) => Ok(Term::Atom(a.clone())),
        Value::Closure(_) | Value::Builtin(_) => Err(TermError::NotData(x.kind())),
        Value::Record(rec) => {
            let mut features = BTreeMap::new();
            for (f, fv) in rec.features.iter() {
                features.insert(f.clone(), read(store, *fv, on_path)?);
            }
            Ok(Term::Record { label: rec.label.clone(), features })
        }
    }
}

/// Serializes JSON so that floats with integral values keep a `.0`.
pub fn float_preserving(j: &Json) -> String {
    let mut out = String::new();
    write_json(j, &mut out);
    out
}

fn write_json(j: &Json, out: &mut String) {
    match j {
        Json::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(0.0);
            let s = n.to_string();
            if x.is_finite() && !s.contains(['.', 'e', 'E']) {
                out.push_str(&s);
                out.push_str(".0");
            } else {
                out.push_str(&s);
            }
        }
        Json::Array(items) => {
            out.push('[');
            for (i, x) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_json(x, out);
            }
            out.push(']');
        }
        Json::Object(m) => {
            out.push('{');
            for (i, (k, v)) in m.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Json::String(k.clone()).to_string());
                out.push(':');
                write_json(v, out);
            }
            out.push('}');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// JSON value parsed with duplicate-key detection.
struct Strict(Json);

impl<'de> Deserialize<'de> for Strict {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(StrictVisitor)
    }
}

struct StrictVisitor;

impl<'de> Visitor<'de> for StrictVisitor {
    type Value = Strict;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a JSON value")
    }

    fn visit_bool<E: de::Error>(self, v: bool) -> Result<Strict, E> {
        Ok(Strict(Json::Bool(v)))
    }
    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Strict, E> {
        Ok(Strict(Json::from(v)))
    }
    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Strict, E> {
        Ok(Strict(Json::from(v)))
    }
    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Strict, E> {
        Ok(Strict(Number::from_f64(v).map(Json::Number).unwrap_or(Json::Null)))
    }
    fn visit_str<E: de::Error>(self, v: &str) -> Result<Strict, E> {
        Ok(Strict(Json::String(v.to_string())))
    }
    fn visit_string<E: de::Error>(self, v: String) -> Result<Strict, E> {
        Ok(Strict(Json::String(v)))
    }
    fn visit_unit<E: de::Error>(self) -> Result<Strict, E> {
        Ok(Strict(Json::Null))
    }
    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Strict, A::Error> {
        let mut items = Vec::new();
        while let Some(Strict(x)) = seq.next_element()? {
            items.push(x);
        }
        Ok(Strict(Json::Array(items)))
    }
    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Strict, A::Error> {
        let mut m = Map::new();
        while let Some(k) = map.next_key::<String>()? {
            if m.contains_key(&k) {
                return Err(de::Error::custom(format!("duplicate key `{k}`")));
            }
            let Strict(v) = map.next_value()?;
            m.insert(k, v);
        }
        Ok(Strict(Json::Object(m)))
    }
}

/// Parses JSON text, rejecting duplicate object keys.
pub fn parse_json_strict(text: &str) -> Result<Json, TermError> {
    serde_json::from_str::<Strict>(text).map(|s| s.0).map_err(|e| TermError::Json(e.to_string()))
}
