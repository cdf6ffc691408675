//! Translation of surface trees into kernel statements.
//!
//! Expressions are flattened into statements that bind a target identifier,
//! introducing fresh temporaries for nested subexpressions. Temporaries are
//! named `_<n>`, which the tokenizer can never produce as a variable.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::ast::{self, Block, Clause, FeatureName, Node};
use super::kernel::{free_identifiers, sym, Feature, Pattern, ProcLit, Stmt, Sym, ValueLit};
use super::token::Span;
use super::LangError;

/// Names that resolve without a declaration.
#[derive(Debug, Clone)]
pub struct Resolver {
    pub builtins: BTreeSet<String>,
    /// Module names known up front; `X.op` with an undeclared `X` is also a module.
    pub modules: BTreeSet<String>,
}

pub const BUILTIN_NAMES: &[&str] = &[
    "+", "-", "*", "/", "<", ">", "=<", ">=", "==", "\\=", ".", "Wait", "WaitTwo", "Sleep", "ByNeed", "IsDet", "Abs",
    "Label", "Width", "Fail",
];

/// The container's own module.
pub const ORCH_MODULE: &str = "Orch";

impl Default for Resolver {
    fn default() -> Self {
        Resolver {
            builtins: BUILTIN_NAMES.iter().map(|s| s.to_string()).collect(),
            modules: [ORCH_MODULE.to_string()].into_iter().collect(),
        }
    }
}

impl Resolver {
    pub fn with_modules<I: IntoIterator<Item = S>, S: Into<String>>(mut self, modules: I) -> Self {
        self.modules.extend(modules.into_iter().map(Into::into));
        self
    }
}

/// A desugared program ready to instantiate as processes.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub name: String,
    pub body: Arc<Stmt>,
    /// Process-level variables: identifiers declared at top level, explicitly
    /// or implicitly.
    pub globals: Vec<Sym>,
    /// Modules the program refers to.
    pub modules: Vec<Sym>,
    /// Built-in names the program refers to.
    pub builtins: Vec<Sym>,
    /// Hex SHA-256 of the canonical encoding of `body`.
    pub digest: String,
}

pub fn stmt_digest(stmt: &Stmt) -> String {
    let mut bytes = Vec::new();
    ciborium::into_writer(stmt, &mut bytes).expect("in-memory encoding");
    hex::encode(Sha256::digest(&bytes))
}

struct Desugarer<'r> {
    resolver: &'r Resolver,
    modules: BTreeSet<String>,
    scope: Vec<Sym>,
    strict: bool,
    counter: usize,
}

type DResult<T> = Result<T, LangError>;

fn unbound(id: &ast::Ident) -> LangError {
    LangError::at(id.span.start, format!("unbound identifier `{}`", id.name))
}

fn error_at(span: Span, msg: impl Into<String>) -> LangError {
    LangError::at(span.start, msg)
}

impl<'r> Desugarer<'r> {
    fn fresh(&mut self) -> Sym {
        self.counter += 1;
        sym(&format!("_{}", self.counter))
    }

    fn with_scope<T>(&mut self, names: &[Sym], f: impl FnOnce(&mut Self) -> DResult<T>) -> DResult<T> {
        let depth = self.scope.len();
        self.scope.extend(names.iter().cloned());
        let r = f(self);
        self.scope.truncate(depth);
        r
    }

    fn is_module(&self, name: &str) -> bool {
        self.resolver.modules.contains(name) || self.modules.contains(name)
    }

    fn resolve(&self, id: &ast::Ident) -> DResult<Sym> {
        if self.scope.iter().rev().any(|s| &**s == id.name.as_str())
            || self.resolver.builtins.contains(&id.name)
            || self.is_module(&id.name)
            || !self.strict
        {
            Ok(sym(&id.name))
        } else {
            Err(unbound(id))
        }
    }

    fn builtin(&self, name: &str) -> Sym {
        sym(name)
    }

    fn decl_syms(decls: &[ast::Ident]) -> Vec<Sym> {
        decls.iter().map(|d| sym(&d.name)).collect()
    }

    fn stmts(&mut self, b: &Block) -> DResult<Stmt> {
        let decls = Self::decl_syms(&b.decls);
        let body = self.with_scope(&decls, |d| {
            let mut out = Vec::with_capacity(b.items.len());
            for item in &b.items {
                out.push(d.stmt(&item.node, item.span)?);
            }
            Ok(Stmt::seq(out))
        })?;
        Ok(Stmt::locals(&decls, body))
    }

    fn expr_block_into(&mut self, b: &Block, target: &Sym) -> DResult<Stmt> {
        let decls = Self::decl_syms(&b.decls);
        let body = self.with_scope(&decls, |d| {
            let Some((last, init)) = b.items.split_last() else {
                return Err(LangError::at(Default::default(), "syntax error: empty expression block"));
            };
            let mut out = Vec::with_capacity(b.items.len());
            for item in init {
                out.push(d.stmt(&item.node, item.span)?);
            }
            out.push(d.expr_into(&last.node, target, last.span)?);
            Ok(Stmt::seq(out))
        })?;
        Ok(Stmt::locals(&decls, body))
    }

    /// Returns an identifier holding the value of `n`, plus the temporaries
    /// and statements needed to compute it.
    fn atomize(&mut self, n: &Node, span: Span, temps: &mut Vec<Sym>, pre: &mut Vec<Stmt>) -> DResult<Sym> {
        if let Node::Var(id) = n {
            return self.resolve(id);
        }
        let t = self.fresh();
        temps.push(t.clone());
        let s = self.expr_into(n, &t, span)?;
        if s != Stmt::Skip {
            pre.push(s);
        }
        Ok(t)
    }

    fn wrap(temps: Vec<Sym>, mut pre: Vec<Stmt>, last: Stmt) -> Stmt {
        pre.push(last);
        Stmt::locals(&temps, Stmt::seq(pre))
    }

    fn proc_lit(&mut self, params: &[ast::Param], body: &Block) -> DResult<ProcLit> {
        let ps: Vec<Sym> = params.iter().map(|p| sym(&p.name.name)).collect();
        let body = self.with_scope(&ps, |d| d.stmts(body))?;
        Ok(ProcLit::new(ps, body))
    }

    fn fun_lit(&mut self, params: &[ast::Param], lazy: bool, body: &Block) -> DResult<ProcLit> {
        let mut ps: Vec<Sym> = params.iter().map(|p| sym(&p.name.name)).collect();
        let result = self.fresh();
        ps.push(result.clone());
        let inner = self.with_scope(&ps, |d| {
            if lazy {
                let arg = d.fresh();
                let compute = d.with_scope(std::slice::from_ref(&arg), |d| d.expr_block_into(body, &arg))?;
                let trigger = d.fresh();
                Ok(Stmt::Local(
                    trigger.clone(),
                    Arc::new(Stmt::seq(vec![
                        Stmt::BindValue(trigger.clone(), ValueLit::Proc(Arc::new(ProcLit::new(vec![arg], compute)))),
                        Stmt::Apply(d.builtin("ByNeed"), vec![trigger, result.clone()]),
                    ])),
                ))
            } else {
                d.expr_block_into(body, &result)
            }
        })?;
        Ok(ProcLit::new(ps, inner))
    }

    fn features<T>(
        &mut self,
        fields: &[(Option<FeatureName>, T)],
        span: Span,
    ) -> DResult<Vec<Feature>> {
        let mut next = 1;
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(fields.len());
        for (f, _) in fields {
            let feat = match f {
                Some(FeatureName::Int(i)) => Feature::Int(*i),
                Some(FeatureName::Atom(a)) => Feature::Atom(sym(a)),
                None => {
                    let f = Feature::Int(next);
                    next += 1;
                    f
                }
            };
            if !seen.insert(feat.clone()) {
                return Err(error_at(span, format!("duplicate feature `{feat}` in record")));
            }
            out.push(feat);
        }
        Ok(out)
    }

    fn record_into(&mut self, label: &str, fields: &[(Option<FeatureName>, Node)], target: &Sym, span: Span) -> DResult<Stmt> {
        if fields.is_empty() {
            return Ok(Stmt::BindValue(target.clone(), ValueLit::Atom(sym(label))));
        }
        let feats = self.features(fields, span)?;
        let (mut temps, mut pre) = (Vec::new(), Vec::new());
        let mut pairs = Vec::with_capacity(fields.len());
        for (feat, (_, v)) in feats.into_iter().zip(fields) {
            let x = self.atomize(v, span, &mut temps, &mut pre)?;
            pairs.push((feat, x));
        }
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self::wrap(temps, pre, Stmt::BindValue(target.clone(), ValueLit::Record { label: sym(label), features: pairs })))
    }

    fn positional(label: &str, xs: &[Node]) -> Node {
        Node::Record { label: label.to_string(), fields: xs.iter().map(|x| (None, x.clone())).collect() }
    }

    fn call(&mut self, callee: &Node, args: &[Node], result: Option<&Sym>, span: Span) -> DResult<Stmt> {
        let (mut temps, mut pre) = (Vec::new(), Vec::new());
        let c = self.atomize(callee, span, &mut temps, &mut pre)?;
        let mut xs = Vec::with_capacity(args.len() + 1);
        for a in args {
            xs.push(self.atomize(a, span, &mut temps, &mut pre)?);
        }
        match result {
            Some(r) => xs.push(r.clone()),
            None if matches!(callee, Node::Select { .. }) => {
                // Module operations always deliver a result; discard it.
                let t = self.fresh();
                temps.push(t.clone());
                xs.push(t);
            }
            None => {}
        }
        Ok(Self::wrap(temps, pre, Stmt::Apply(c, xs)))
    }

    fn no_match(&mut self, subject: &Sym) -> Stmt {
        let (reason, exc) = (self.fresh(), self.fresh());
        Stmt::locals(
            &[reason.clone(), exc.clone()],
            Stmt::seq(vec![
                Stmt::BindValue(reason.clone(), ValueLit::Record { label: sym("noMatch"), features: vec![(Feature::Int(1), subject.clone())] }),
                Stmt::BindValue(exc.clone(), ValueLit::Record { label: sym("error"), features: vec![(Feature::Int(1), reason)] }),
                Stmt::Raise(exc),
            ]),
        )
    }

    fn pattern(&mut self, p: &ast::Pattern, span: Span) -> DResult<Pattern> {
        Ok(match p {
            ast::Pattern::Int(i) => Pattern::Int(*i),
            ast::Pattern::Float(x) => Pattern::Float(*x),
            ast::Pattern::Bool(b) => Pattern::Bool(*b),
            ast::Pattern::Atom(a) => Pattern::Atom(sym(a)),
            ast::Pattern::Capture(id) => Pattern::Capture(sym(&id.name)),
            ast::Pattern::Wildcard => Pattern::Wildcard,
            ast::Pattern::Record { label, fields } => {
                if fields.is_empty() {
                    return Ok(Pattern::Atom(sym(label)));
                }
                let feats = self.features(fields, span)?;
                let mut pairs = Vec::with_capacity(fields.len());
                for (feat, (_, sub)) in feats.into_iter().zip(fields) {
                    pairs.push((feat, self.pattern(sub, span)?));
                }
                pairs.sort_by(|a, b| a.0.cmp(&b.0));
                Pattern::Record { label: sym(label), features: pairs }
            }
            ast::Pattern::Cons(h, t) => Pattern::Record {
                label: sym("|"),
                features: vec![(Feature::Int(1), self.pattern(h, span)?), (Feature::Int(2), self.pattern(t, span)?)],
            },
            ast::Pattern::Tuple(xs) => {
                let mut feats = Vec::with_capacity(xs.len());
                for (i, x) in xs.iter().enumerate() {
                    feats.push((Feature::Int(i as i64 + 1), self.pattern(x, span)?));
                }
                Pattern::Record { label: sym("#"), features: feats }
            }
        })
    }

    fn clauses(&mut self, cs: &[Clause], target: Option<&Sym>, span: Span) -> DResult<Vec<(Pattern, Arc<Stmt>)>> {
        let mut out = Vec::with_capacity(cs.len());
        for c in cs {
            let pat = self.pattern(&c.pattern, span)?;
            let mut caps = Vec::new();
            pat.captures(&mut caps);
            let body = self.with_scope(&caps, |d| match target {
                Some(t) => d.expr_block_into(&c.body, t),
                None => d.stmts(&c.body),
            })?;
            out.push((pat, Arc::new(body)));
        }
        Ok(out)
    }

    fn case(&mut self, subject: &Node, clauses: &[Clause], otherwise: Option<&Block>, target: Option<&Sym>, span: Span) -> DResult<Stmt> {
        let (mut temps, mut pre) = (Vec::new(), Vec::new());
        let s = self.atomize(subject, span, &mut temps, &mut pre)?;
        let cs = self.clauses(clauses, target, span)?;
        let otherwise = match (otherwise, target) {
            (Some(b), Some(t)) => self.expr_block_into(b, t)?,
            (Some(b), None) => self.stmts(b)?,
            (None, _) => self.no_match(&s),
        };
        Ok(Self::wrap(temps, pre, Stmt::Match(s, cs, Arc::new(otherwise))))
    }

    fn stmt(&mut self, n: &Node, span: Span) -> DResult<Stmt> {
        match n {
            Node::Skip(_) => Ok(Stmt::Skip),
            Node::Bind(a, b) => match (&**a, &**b) {
                (Node::Var(x), rhs) => {
                    let x = self.resolve(x)?;
                    self.expr_into(rhs, &x, span)
                }
                (lhs, Node::Var(y)) => {
                    let y = self.resolve(y)?;
                    self.expr_into(lhs, &y, span)
                }
                (lhs, rhs) => {
                    let t = self.fresh();
                    let l = self.expr_into(lhs, &t, span)?;
                    let r = self.expr_into(rhs, &t, span)?;
                    Ok(Stmt::Local(t, Arc::new(Stmt::seq(vec![l, r]))))
                }
            },
            Node::Thread(b) => Ok(Stmt::SpawnThread(Arc::new(self.stmts(b)?))),
            Node::Raise(e) => {
                let (mut temps, mut pre) = (Vec::new(), Vec::new());
                let x = self.atomize(e, span, &mut temps, &mut pre)?;
                Ok(Self::wrap(temps, pre, Stmt::Raise(x)))
            }
            Node::Try { body, catches } => {
                let body = self.stmts(body)?;
                let exc = self.fresh();
                let cs = self.clauses(catches, None, span)?;
                let handler = Stmt::Match(exc.clone(), cs, Arc::new(Stmt::Raise(exc.clone())));
                Ok(Stmt::TryCatch(Arc::new(body), exc, Arc::new(handler)))
            }
            Node::Proc { name: Some(name), params, body } => {
                let target = self.resolve(name)?;
                let lit = self.proc_lit(params, body)?;
                Ok(Stmt::BindValue(target, ValueLit::Proc(Arc::new(lit))))
            }
            Node::Fun { name: Some(name), lazy, params, body } => {
                let target = self.resolve(name)?;
                let lit = self.fun_lit(params, *lazy, body)?;
                Ok(Stmt::BindValue(target, ValueLit::Proc(Arc::new(lit))))
            }
            Node::Local(b) => self.stmts(b),
            Node::If { cond, then, otherwise } => {
                let (mut temps, mut pre) = (Vec::new(), Vec::new());
                let c = self.atomize(cond, span, &mut temps, &mut pre)?;
                let t = self.stmts(then)?;
                let e = match otherwise {
                    Some(b) => self.stmts(b)?,
                    None => Stmt::Skip,
                };
                Ok(Self::wrap(temps, pre, Stmt::Conditional(c, Arc::new(t), Arc::new(e))))
            }
            Node::Case { subject, clauses, otherwise } => self.case(subject, clauses, otherwise.as_ref(), None, span),
            Node::Call { callee, args, span } => self.call(callee, args, None, *span),
            _ => Err(error_at(span, "syntax error: expression used as a statement")),
        }
    }

    fn expr_into(&mut self, n: &Node, target: &Sym, span: Span) -> DResult<Stmt> {
        match n {
            Node::Var(y) => Ok(Stmt::BindVarVar(target.clone(), self.resolve(y)?)),
            Node::Wildcard(_) => Ok(Stmt::Skip),
            Node::Int(i) => Ok(Stmt::BindValue(target.clone(), ValueLit::Int(*i))),
            Node::Float(x) => Ok(Stmt::BindValue(target.clone(), ValueLit::Float(*x))),
            Node::Bool(b) => Ok(Stmt::BindValue(target.clone(), ValueLit::Bool(*b))),
            Node::Atom(a) => Ok(Stmt::BindValue(target.clone(), ValueLit::Atom(sym(a)))),
            Node::Record { label, fields } => self.record_into(label, fields, target, span),
            Node::Cons(h, t) => self.expr_into(&Self::positional("|", &[(**h).clone(), (**t).clone()]), target, span),
            Node::Tuple(xs) => self.expr_into(&Self::positional("#", xs), target, span),
            Node::List(xs) => {
                let list = xs.iter().rev().fold(Node::Atom("nil".into()), |tail, h| Node::Cons(Box::new(h.clone()), Box::new(tail)));
                self.expr_into(&list, target, span)
            }
            Node::Call { callee, args, span } => self.call(callee, args, Some(target), *span),
            Node::BinOp(op, a, b) => {
                let (mut temps, mut pre) = (Vec::new(), Vec::new());
                let x = self.atomize(a, span, &mut temps, &mut pre)?;
                let y = self.atomize(b, span, &mut temps, &mut pre)?;
                Ok(Self::wrap(temps, pre, Stmt::Apply(self.builtin(op.symbol()), vec![x, y, target.clone()])))
            }
            Node::Neg(e) => {
                let (mut temps, mut pre) = (Vec::new(), Vec::new());
                let zero = self.fresh();
                temps.push(zero.clone());
                pre.push(Stmt::BindValue(zero.clone(), ValueLit::Int(0)));
                let x = self.atomize(e, span, &mut temps, &mut pre)?;
                Ok(Self::wrap(temps, pre, Stmt::Apply(self.builtin("-"), vec![zero, x, target.clone()])))
            }
            Node::Select { base, member, span } => {
                let (mut temps, mut pre) = (Vec::new(), Vec::new());
                let b = self.atomize(base, *span, &mut temps, &mut pre)?;
                let m = self.fresh();
                temps.push(m.clone());
                pre.push(Stmt::BindValue(m.clone(), ValueLit::Atom(sym(member))));
                Ok(Self::wrap(temps, pre, Stmt::Apply(self.builtin("."), vec![b, m, target.clone()])))
            }
            Node::Proc { name: None, params, body } => {
                let lit = self.proc_lit(params, body)?;
                Ok(Stmt::BindValue(target.clone(), ValueLit::Proc(Arc::new(lit))))
            }
            Node::Fun { name: None, lazy, params, body } => {
                let lit = self.fun_lit(params, *lazy, body)?;
                Ok(Stmt::BindValue(target.clone(), ValueLit::Proc(Arc::new(lit))))
            }
            Node::Local(b) => self.expr_block_into(b, target),
            Node::If { cond, then, otherwise } => {
                let Some(otherwise) = otherwise else {
                    return Err(error_at(span, "syntax error: `if` used as an expression needs an `else` branch"));
                };
                let (mut temps, mut pre) = (Vec::new(), Vec::new());
                let c = self.atomize(cond, span, &mut temps, &mut pre)?;
                let t = self.expr_block_into(then, target)?;
                let e = self.expr_block_into(otherwise, target)?;
                Ok(Self::wrap(temps, pre, Stmt::Conditional(c, Arc::new(t), Arc::new(e))))
            }
            Node::Case { subject, clauses, otherwise } => self.case(subject, clauses, otherwise.as_ref(), Some(target), span),
            _ => Err(error_at(span, "syntax error: statement used as an expression")),
        }
    }
}

/// Collects variable names by position: as the base of a `.` selection, or anywhere else.
fn scan_names(b: &Block, select: &mut BTreeSet<String>, other: &mut BTreeSet<String>) {
    other.extend(b.decls.iter().map(|d| d.name.clone()));
    for item in &b.items {
        scan_node(&item.node, select, other);
    }
}

fn scan_pattern(p: &ast::Pattern, other: &mut BTreeSet<String>) {
    let mut caps = Vec::new();
    p.captures(&mut caps);
    other.extend(caps.into_iter().map(|c| c.name));
}

fn scan_node(n: &Node, select: &mut BTreeSet<String>, other: &mut BTreeSet<String>) {
    match n {
        Node::Var(id) => {
            other.insert(id.name.clone());
        }
        Node::Select { base, .. } => match &**base {
            Node::Var(id) => {
                select.insert(id.name.clone());
            }
            b => scan_node(b, select, other),
        },
        Node::Bind(a, b) | Node::Cons(a, b) | Node::BinOp(_, a, b) => {
            scan_node(a, select, other);
            scan_node(b, select, other);
        }
        Node::Thread(b) | Node::Local(b) => scan_names(b, select, other),
        Node::Raise(e) | Node::Neg(e) => scan_node(e, select, other),
        Node::Try { body, catches } => {
            scan_names(body, select, other);
            for c in catches {
                scan_pattern(&c.pattern, other);
                scan_names(&c.body, select, other);
            }
        }
        Node::Proc { name, params, body } | Node::Fun { name, params, body, .. } => {
            other.extend(name.iter().map(|n| n.name.clone()));
            other.extend(params.iter().map(|p| p.name.name.clone()));
            scan_names(body, select, other);
        }
        Node::If { cond, then, otherwise } => {
            scan_node(cond, select, other);
            scan_names(then, select, other);
            if let Some(b) = otherwise {
                scan_names(b, select, other);
            }
        }
        Node::Case { subject, clauses, otherwise } => {
            scan_node(subject, select, other);
            for c in clauses {
                scan_pattern(&c.pattern, other);
                scan_names(&c.body, select, other);
            }
            if let Some(b) = otherwise {
                scan_names(b, select, other);
            }
        }
        Node::Call { callee, args, .. } => {
            scan_node(callee, select, other);
            args.iter().for_each(|a| scan_node(a, select, other));
        }
        Node::Record { fields, .. } => fields.iter().for_each(|(_, v)| scan_node(v, select, other)),
        Node::Tuple(xs) | Node::List(xs) => xs.iter().for_each(|x| scan_node(x, select, other)),
        Node::Skip(_) | Node::Wildcard(_) | Node::Int(_) | Node::Float(_) | Node::Bool(_) | Node::Atom(_) => {}
    }
}

fn detect_modules(b: &Block) -> BTreeSet<String> {
    let (mut select, mut other) = (BTreeSet::new(), BTreeSet::new());
    scan_names(b, &mut select, &mut other);
    select.difference(&other).cloned().collect()
}

/// Inlines top-level `local` blocks whose declared names are mentioned nowhere
/// else at top level, so that their variables become process-level.
fn hoist_top_level(body: &Block) -> Block {
    let mut mentions: BTreeMap<String, usize> = BTreeMap::new();
    let mut hoistable = vec![false; body.items.len()];
    let mut per_item = Vec::with_capacity(body.items.len());
    for item in &body.items {
        let (mut select, mut other) = (BTreeSet::new(), BTreeSet::new());
        scan_node(&item.node, &mut select, &mut other);
        other.extend(select);
        for n in &other {
            *mentions.entry(n.clone()).or_default() += 1;
        }
        per_item.push(other);
    }
    for n in &body.decls {
        *mentions.entry(n.name.clone()).or_default() += 1;
    }
    for (k, item) in body.items.iter().enumerate() {
        if let Node::Local(b) = &item.node {
            hoistable[k] = b.decls.iter().all(|d| mentions.get(&d.name).copied().unwrap_or(0) == 1);
        }
    }
    let mut items = Vec::with_capacity(body.items.len());
    for (k, item) in body.items.iter().enumerate() {
        match &item.node {
            Node::Local(b) if hoistable[k] => items.extend(b.items.iter().cloned()),
            _ => items.push(item.clone()),
        }
    }
    Block { decls: Vec::new(), items }
}

/// Desugars a whole program. Identifiers that are free at top level become
/// process-level variables.
pub fn desugar_program(name: &str, tree: &ast::SurfaceProgram, resolver: &Resolver) -> Result<Program, LangError> {
    let body = hoist_top_level(&tree.body);
    let mut d = Desugarer { resolver, modules: detect_modules(&tree.body), scope: Vec::new(), strict: false, counter: 0 };
    let kernel = d.stmts(&body)?;
    let mut globals = Vec::new();
    let mut modules = Vec::new();
    let mut builtins = Vec::new();
    for f in free_identifiers(&kernel) {
        if d.is_module(&f) {
            modules.push(f);
        } else if resolver.builtins.contains(&*f) {
            builtins.push(f);
        } else {
            globals.push(f);
        }
    }
    let digest = stmt_digest(&kernel);
    Ok(Program { name: name.to_string(), body: Arc::new(kernel), globals, modules, builtins, digest })
}

/// Desugars a statement block in a fixed scope; any other identifier that is
/// neither a built-in nor a module is an error.
pub fn desugar_statement(block: &Block, scope: &[Sym], resolver: &Resolver) -> Result<Stmt, LangError> {
    let mut d = Desugarer { resolver, modules: detect_modules(block), scope: scope.to_vec(), strict: true, counter: 0 };
    d.stmts(block)
}
