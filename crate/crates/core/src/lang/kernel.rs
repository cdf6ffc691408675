//! Kernel statements executed by the abstract machine.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Interned-by-sharing identifier or atom name.
pub type Sym = Arc<str>;

pub fn sym(s: &str) -> Sym {
    Arc::from(s)
}

/// A record feature. Integer features order before atom features.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Feature {
    Int(i64),
    Atom(Sym),
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::Int(i) => write!(f, "{i}"),
            Feature::Atom(a) => f.write_str(&super::pretty::atom_text(a)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Stmt {
    Skip,
    Seq(Arc<Stmt>, Arc<Stmt>),
    Local(Sym, Arc<Stmt>),
    BindVarVar(Sym, Sym),
    BindValue(Sym, ValueLit),
    Conditional(Sym, Arc<Stmt>, Arc<Stmt>),
    Match(Sym, Vec<(Pattern, Arc<Stmt>)>, Arc<Stmt>),
    Apply(Sym, Vec<Sym>),
    SpawnThread(Arc<Stmt>),
    TryCatch(Arc<Stmt>, Sym, Arc<Stmt>),
    Raise(Sym),
}

impl Stmt {
    pub fn variant_name(&self) -> &'static str {
        match self {
            Stmt::Skip => "Skip",
            Stmt::Seq(..) => "Seq",
            Stmt::Local(..) => "Local",
            Stmt::BindVarVar(..) => "BindVarVar",
            Stmt::BindValue(..) => "BindValue",
            Stmt::Conditional(..) => "Conditional",
            Stmt::Match(..) => "Match",
            Stmt::Apply(..) => "Apply",
            Stmt::SpawnThread(_) => "SpawnThread",
            Stmt::TryCatch(..) => "TryCatch",
            Stmt::Raise(_) => "Raise",
        }
    }

    /// Builds a right-nested sequence; an empty list is `Skip`.
    pub fn seq(mut stmts: Vec<Stmt>) -> Stmt {
        let Some(mut acc) = stmts.pop() else { return Stmt::Skip };
        while let Some(s) = stmts.pop() {
            acc = Stmt::Seq(Arc::new(s), Arc::new(acc));
        }
        acc
    }

    pub fn locals(names: &[Sym], body: Stmt) -> Stmt {
        names.iter().rev().fold(body, |acc, n| Stmt::Local(n.clone(), Arc::new(acc)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ValueLit {
    Int(i64),
    Float(f64),
    Bool(bool),
    Atom(Sym),
    /// Record construction; features are in canonical order.
    Record { label: Sym, features: Vec<(Feature, Sym)> },
    Proc(Arc<ProcLit>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcLit {
    pub params: Vec<Sym>,
    pub body: Arc<Stmt>,
    /// Identifiers free in `body` minus `params`, sorted.
    pub free: Vec<Sym>,
}

impl ProcLit {
    pub fn new(params: Vec<Sym>, body: Stmt) -> ProcLit {
        let mut free = free_identifiers(&body);
        for p in &params {
            free.remove(p);
        }
        ProcLit { params, body: Arc::new(body), free: free.into_iter().collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Pattern {
    Int(i64),
    Float(f64),
    Bool(bool),
    Atom(Sym),
    Capture(Sym),
    Wildcard,
    Record { label: Sym, features: Vec<(Feature, Pattern)> },
}

impl Pattern {
    pub fn captures(&self, out: &mut Vec<Sym>) {
        match self {
            Pattern::Capture(x) => out.push(x.clone()),
            Pattern::Record { features, .. } => features.iter().for_each(|(_, p)| p.captures(out)),
            _ => {}
        }
    }
}

/// Identifiers referenced but not bound within `stmt`.
pub fn free_identifiers(stmt: &Stmt) -> BTreeSet<Sym> {
    let mut out = BTreeSet::new();
    collect_free(stmt, &mut out);
    out
}

fn collect_free(stmt: &Stmt, out: &mut BTreeSet<Sym>) {
    match stmt {
        Stmt::Skip => {}
        Stmt::Seq(a, b) => {
            collect_free(a, out);
            collect_free(b, out);
        }
        Stmt::Local(x, body) => {
            let mut inner = free_identifiers(body);
            inner.remove(x);
            out.extend(inner);
        }
        Stmt::BindVarVar(x, y) => {
            out.insert(x.clone());
            out.insert(y.clone());
        }
        Stmt::BindValue(x, lit) => {
            out.insert(x.clone());
            match lit {
                ValueLit::Record { features, .. } => out.extend(features.iter().map(|(_, v)| v.clone())),
                ValueLit::Proc(p) => out.extend(p.free.iter().filter(|f| !p.params.contains(f)).cloned()),
                _ => {}
            }
        }
        Stmt::Conditional(x, a, b) => {
            out.insert(x.clone());
            collect_free(a, out);
            collect_free(b, out);
        }
        Stmt::Match(x, clauses, otherwise) => {
            out.insert(x.clone());
            for (pat, body) in clauses {
                let mut inner = free_identifiers(body);
                let mut caps = Vec::new();
                pat.captures(&mut caps);
                for c in &caps {
                    inner.remove(c);
                }
                out.extend(inner);
            }
            collect_free(otherwise, out);
        }
        Stmt::Apply(p, args) => {
            out.insert(p.clone());
            out.extend(args.iter().cloned());
        }
        Stmt::SpawnThread(b) => collect_free(b, out),
        Stmt::TryCatch(body, x, handler) => {
            collect_free(body, out);
            let mut inner = free_identifiers(handler);
            inner.remove(x);
            out.extend(inner);
        }
        Stmt::Raise(x) => {
            out.insert(x.clone());
        }
    }
}
