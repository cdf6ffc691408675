//! Recursive-descent parser for the surface language.

use super::ast::*;
use super::token::{Keyword, Op, Span, Token, TokenKind};
use super::LangError;

struct Parser<'t> {
    toks: &'t [Token],
    i: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum Ctx {
    Stmt,
    Expr,
}

type PResult<T> = Result<T, LangError>;

impl<'t> Parser<'t> {
    fn peek(&self) -> Option<&'t TokenKind> {
        self.toks.get(self.i).map(|t| &t.kind)
    }

    fn peek_at(&self, n: usize) -> Option<&'t TokenKind> {
        self.toks.get(self.i + n).map(|t| &t.kind)
    }

    fn span(&self) -> Span {
        match self.toks.get(self.i) {
            Some(t) => t.span,
            None => self.toks.last().map(|t| Span::new(t.span.end, t.span.end)).unwrap_or_default(),
        }
    }

    fn prev_span(&self) -> Span {
        self.i.checked_sub(1).and_then(|j| self.toks.get(j)).map(|t| t.span).unwrap_or_default()
    }

    fn bump(&mut self) -> Option<&'t Token> {
        let t = self.toks.get(self.i);
        if t.is_some() {
            self.i += 1;
        }
        t
    }

    fn at_kw(&self, k: Keyword) -> bool {
        self.peek() == Some(&TokenKind::Kw(k))
    }

    fn at_op(&self, o: Op) -> bool {
        self.peek() == Some(&TokenKind::Op(o))
    }

    fn unexpected(&self, expected: &[&str]) -> LangError {
        let found = match self.peek() {
            Some(k) => format!("`{}`", describe(k)),
            None => "end of input".to_string(),
        };
        LangError::at(self.span().start, format!("syntax error: expected one of {{{}}}, found {found}", expected.join(", ")))
            .with_expected(expected)
    }

    fn expect_kw(&mut self, k: Keyword) -> PResult<()> {
        if self.at_kw(k) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&[k.as_str()]))
        }
    }

    fn expect_op(&mut self, o: Op) -> PResult<()> {
        if self.at_op(o) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&[o.as_str()]))
        }
    }

    fn at_block_end(&self) -> bool {
        matches!(
            self.peek(),
            None | Some(TokenKind::Kw(Keyword::End | Keyword::Else | Keyword::Catch | Keyword::Then | Keyword::Of | Keyword::In))
                | Some(TokenKind::ClauseSep)
        )
    }

    fn block(&mut self) -> PResult<Block> {
        let mut decls = Vec::new();
        let mut n = 0;
        while let Some(TokenKind::Var(_)) = self.peek_at(n) {
            n += 1;
        }
        if n > 0 && self.peek_at(n) == Some(&TokenKind::Kw(Keyword::In)) {
            for _ in 0..n {
                let t = self.bump().expect("lookahead");
                if let TokenKind::Var(v) = &t.kind {
                    decls.push(Ident { name: v.clone(), span: t.span });
                }
            }
            self.bump();
        }
        let mut items = Vec::new();
        while !self.at_block_end() {
            let start = self.span();
            let node = self.item()?;
            items.push(Item { node, span: start.to(self.prev_span()) });
        }
        Ok(Block { decls, items })
    }

    fn item(&mut self) -> PResult<Node> {
        match self.peek() {
            Some(TokenKind::Kw(Keyword::Skip)) => {
                let s = self.span();
                self.bump();
                Ok(Node::Skip(s))
            }
            Some(TokenKind::Kw(Keyword::Thread)) => {
                self.bump();
                let b = self.block()?;
                self.expect_kw(Keyword::End)?;
                Ok(Node::Thread(b))
            }
            Some(TokenKind::Kw(Keyword::Raise)) => {
                self.bump();
                let e = self.expr()?;
                self.expect_kw(Keyword::End)?;
                Ok(Node::Raise(Box::new(e)))
            }
            Some(TokenKind::Kw(Keyword::Try)) => {
                self.bump();
                let body = self.block()?;
                self.expect_kw(Keyword::Catch)?;
                let catches = self.clauses()?;
                self.expect_kw(Keyword::End)?;
                Ok(Node::Try { body, catches })
            }
            _ => {
                let lhs = self.expr()?;
                if self.at_op(Op::Eq) {
                    self.bump();
                    let rhs = self.expr()?;
                    Ok(Node::Bind(Box::new(lhs), Box::new(rhs)))
                } else {
                    Ok(lhs)
                }
            }
        }
    }

    fn clauses(&mut self) -> PResult<Vec<Clause>> {
        let mut out = Vec::new();
        loop {
            let pattern = self.pattern()?;
            self.expect_kw(Keyword::Then)?;
            let body = self.block()?;
            out.push(Clause { pattern, body });
            if matches!(self.peek(), Some(TokenKind::ClauseSep)) {
                self.bump();
            } else {
                return Ok(out);
            }
        }
    }

    fn expr(&mut self) -> PResult<Node> {
        let lhs = self.cons_expr()?;
        let op = match self.peek() {
            Some(TokenKind::Op(Op::EqEq)) => BinOp::Eq,
            Some(TokenKind::Op(Op::Ne)) => BinOp::Ne,
            Some(TokenKind::Op(Op::Lt)) => BinOp::Lt,
            Some(TokenKind::Op(Op::Gt)) => BinOp::Gt,
            Some(TokenKind::Op(Op::Le)) => BinOp::Le,
            Some(TokenKind::Op(Op::Ge)) => BinOp::Ge,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.cons_expr()?;
        Ok(Node::BinOp(op, Box::new(lhs), Box::new(rhs)))
    }

    fn cons_expr(&mut self) -> PResult<Node> {
        let head = self.hash_expr()?;
        if self.at_op(Op::Bar) {
            self.bump();
            let tail = self.cons_expr()?;
            return Ok(Node::Cons(Box::new(head), Box::new(tail)));
        }
        Ok(head)
    }

    fn hash_expr(&mut self) -> PResult<Node> {
        let first = self.add_expr()?;
        if !self.at_op(Op::Hash) {
            return Ok(first);
        }
        let mut parts = vec![first];
        while self.at_op(Op::Hash) {
            self.bump();
            parts.push(self.add_expr()?);
        }
        Ok(Node::Tuple(parts))
    }

    fn add_expr(&mut self) -> PResult<Node> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Some(TokenKind::Op(Op::Plus)) => BinOp::Add,
                Some(TokenKind::Op(Op::Minus)) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = Node::BinOp(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn mul_expr(&mut self) -> PResult<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(TokenKind::Op(Op::Star)) => BinOp::Mul,
                Some(TokenKind::Op(Op::Slash)) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Node::BinOp(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> PResult<Node> {
        if self.at_op(Op::Minus) {
            self.bump();
            return match self.peek() {
                Some(TokenKind::Int(i)) => {
                    let i = *i;
                    self.bump();
                    Ok(Node::Int(-i))
                }
                Some(TokenKind::Float(x)) => {
                    let x = *x;
                    self.bump();
                    Ok(Node::Float(-x))
                }
                _ => Ok(Node::Neg(Box::new(self.unary()?))),
            };
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<Node> {
        let mut base = self.primary()?;
        while self.at_op(Op::Dot) {
            let start = self.span();
            self.bump();
            match self.peek() {
                Some(TokenKind::Atom { name, .. }) => {
                    let member = name.clone();
                    self.bump();
                    base = Node::Select { base: Box::new(base), member, span: start.to(self.prev_span()) };
                }
                _ => return Err(self.unexpected(&["member name"])),
            }
        }
        Ok(base)
    }

    /// True when the token at `i` starts right where the previous one ends.
    fn adjacent(&self, i: usize) -> bool {
        match (i.checked_sub(1).and_then(|j| self.toks.get(j)), self.toks.get(i)) {
            (Some(a), Some(b)) => a.span.end.offset == b.span.start.offset,
            _ => false,
        }
    }

    fn primary(&mut self) -> PResult<Node> {
        let span = self.span();
        let Some(kind) = self.peek() else {
            return Err(self.unexpected(&["expression"]));
        };
        match kind {
            TokenKind::Int(i) => {
                let i = *i;
                self.bump();
                Ok(Node::Int(i))
            }
            TokenKind::Float(x) => {
                let x = *x;
                self.bump();
                Ok(Node::Float(x))
            }
            TokenKind::Var(v) => {
                let id = Ident { name: v.clone(), span };
                self.bump();
                Ok(Node::Var(id))
            }
            TokenKind::Underscore => {
                self.bump();
                Ok(Node::Wildcard(span))
            }
            TokenKind::Atom { name, quoted } => {
                let (name, quoted) = (name.clone(), *quoted);
                self.bump();
                if self.at_op(Op::LParen) && self.adjacent(self.i) {
                    self.bump();
                    let fields = self.record_fields()?;
                    return Ok(Node::Record { label: name, fields });
                }
                Ok(match (name.as_str(), quoted) {
                    ("true", false) => Node::Bool(true),
                    ("false", false) => Node::Bool(false),
                    _ => Node::Atom(name),
                })
            }
            TokenKind::Op(Op::LParen) => {
                self.bump();
                let mut parts = vec![self.expr()?];
                while !self.at_op(Op::RParen) {
                    if self.peek().is_none() {
                        return Err(self.unexpected(&[")"]));
                    }
                    parts.push(self.expr()?);
                }
                self.bump();
                Ok(if parts.len() == 1 { parts.pop().expect("one") } else { Node::Tuple(parts) })
            }
            TokenKind::Op(Op::LBracket) => {
                self.bump();
                let mut elems = Vec::new();
                while !self.at_op(Op::RBracket) {
                    if self.peek().is_none() {
                        return Err(self.unexpected(&["]"]));
                    }
                    elems.push(self.expr()?);
                }
                self.bump();
                Ok(Node::List(elems))
            }
            TokenKind::Op(Op::LBrace) => {
                self.bump();
                let callee = self.expr()?;
                let mut args = Vec::new();
                while !self.at_op(Op::RBrace) {
                    if self.peek().is_none() {
                        return Err(self.unexpected(&["}"]));
                    }
                    args.push(self.expr()?);
                }
                self.bump();
                Ok(Node::Call { callee: Box::new(callee), args, span: span.to(self.prev_span()) })
            }
            TokenKind::Kw(Keyword::Proc) => {
                self.bump();
                let (name, params) = self.head()?;
                let body = self.block()?;
                self.expect_kw(Keyword::End)?;
                Ok(Node::Proc { name, params, body })
            }
            TokenKind::Kw(Keyword::Lazy) => {
                self.bump();
                if !self.at_kw(Keyword::Fun) {
                    return Err(self.unexpected(&["fun"]));
                }
                self.fun(true)
            }
            TokenKind::Kw(Keyword::Fun) => self.fun(false),
            TokenKind::Kw(Keyword::Local) => {
                self.bump();
                let b = self.block()?;
                self.expect_kw(Keyword::End)?;
                Ok(Node::Local(b))
            }
            TokenKind::Kw(Keyword::If) => {
                self.bump();
                let cond = self.expr()?;
                self.expect_kw(Keyword::Then)?;
                let then = self.block()?;
                let otherwise = if self.at_kw(Keyword::Else) {
                    self.bump();
                    Some(self.block()?)
                } else {
                    None
                };
                self.expect_kw(Keyword::End)?;
                Ok(Node::If { cond: Box::new(cond), then, otherwise })
            }
            TokenKind::Kw(Keyword::Case) => {
                self.bump();
                let subject = self.expr()?;
                self.expect_kw(Keyword::Of)?;
                let clauses = self.clauses()?;
                let otherwise = if self.at_kw(Keyword::Else) {
                    self.bump();
                    Some(self.block()?)
                } else {
                    None
                };
                self.expect_kw(Keyword::End)?;
                Ok(Node::Case { subject: Box::new(subject), clauses, otherwise })
            }
            _ => Err(self.unexpected(&["expression"])),
        }
    }

    fn fun(&mut self, mut lazy: bool) -> PResult<Node> {
        self.expect_kw(Keyword::Fun)?;
        if self.at_kw(Keyword::Lazy) {
            self.bump();
            lazy = true;
        }
        let (name, params) = self.head()?;
        let body = self.block()?;
        self.expect_kw(Keyword::End)?;
        Ok(Node::Fun { name, lazy, params, body })
    }

    /// `{Name P1 ?P2 ...}` or `{$ ...}`.
    fn head(&mut self) -> PResult<(Option<Ident>, Vec<Param>)> {
        self.expect_op(Op::LBrace)?;
        let name = match self.peek() {
            Some(TokenKind::Var(v)) => {
                let id = Ident { name: v.clone(), span: self.span() };
                self.bump();
                Some(id)
            }
            Some(TokenKind::Op(Op::Dollar)) => {
                self.bump();
                None
            }
            _ => return Err(self.unexpected(&["variable", "$"])),
        };
        let mut params = Vec::new();
        loop {
            let output = if self.at_op(Op::Question) {
                self.bump();
                true
            } else {
                false
            };
            match self.peek() {
                Some(TokenKind::Var(v)) => {
                    params.push(Param { name: Ident { name: v.clone(), span: self.span() }, output });
                    self.bump();
                }
                Some(TokenKind::Op(Op::RBrace)) if !output => {
                    self.bump();
                    return Ok((name, params));
                }
                _ => return Err(self.unexpected(&["variable", "}"])),
            }
        }
    }

    fn feature_label(&self) -> Option<FeatureName> {
        if self.peek_at(1) != Some(&TokenKind::Op(Op::Colon)) {
            return None;
        }
        match self.peek() {
            Some(TokenKind::Atom { name, .. }) => Some(FeatureName::Atom(name.clone())),
            Some(TokenKind::Int(i)) if *i > 0 => Some(FeatureName::Int(*i)),
            _ => None,
        }
    }

    fn record_fields(&mut self) -> PResult<Vec<(Option<FeatureName>, Node)>> {
        let mut fields = Vec::new();
        while !self.at_op(Op::RParen) {
            if self.peek().is_none() {
                return Err(self.unexpected(&[")"]));
            }
            let feat = self.feature_label();
            if feat.is_some() {
                self.bump();
                self.bump();
            }
            fields.push((feat, self.expr()?));
        }
        self.bump();
        Ok(fields)
    }

    fn pattern(&mut self) -> PResult<Pattern> {
        let head = self.hash_pattern()?;
        if self.at_op(Op::Bar) {
            self.bump();
            let tail = self.pattern()?;
            return Ok(Pattern::Cons(Box::new(head), Box::new(tail)));
        }
        Ok(head)
    }

    fn hash_pattern(&mut self) -> PResult<Pattern> {
        let first = self.pattern_primary()?;
        if !self.at_op(Op::Hash) {
            return Ok(first);
        }
        let mut parts = vec![first];
        while self.at_op(Op::Hash) {
            self.bump();
            parts.push(self.pattern_primary()?);
        }
        Ok(Pattern::Tuple(parts))
    }

    fn pattern_primary(&mut self) -> PResult<Pattern> {
        let span = self.span();
        let Some(kind) = self.peek() else {
            return Err(self.unexpected(&["pattern"]));
        };
        match kind {
            TokenKind::Int(i) => {
                let i = *i;
                self.bump();
                Ok(Pattern::Int(i))
            }
            TokenKind::Float(x) => {
                let x = *x;
                self.bump();
                Ok(Pattern::Float(x))
            }
            TokenKind::Op(Op::Minus) => {
                self.bump();
                match self.peek() {
                    Some(TokenKind::Int(i)) => {
                        let i = *i;
                        self.bump();
                        Ok(Pattern::Int(-i))
                    }
                    Some(TokenKind::Float(x)) => {
                        let x = *x;
                        self.bump();
                        Ok(Pattern::Float(-x))
                    }
                    _ => Err(self.unexpected(&["number"])),
                }
            }
            TokenKind::Var(v) => {
                let id = Ident { name: v.clone(), span };
                self.bump();
                Ok(Pattern::Capture(id))
            }
            TokenKind::Underscore => {
                self.bump();
                Ok(Pattern::Wildcard)
            }
            TokenKind::Atom { name, quoted } => {
                let (name, quoted) = (name.clone(), *quoted);
                self.bump();
                if self.at_op(Op::LParen) && self.adjacent(self.i) {
                    self.bump();
                    let mut fields = Vec::new();
                    while !self.at_op(Op::RParen) {
                        if self.peek().is_none() {
                            return Err(self.unexpected(&[")"]));
                        }
                        let feat = self.feature_label();
                        if feat.is_some() {
                            self.bump();
                            self.bump();
                        }
                        fields.push((feat, self.pattern()?));
                    }
                    self.bump();
                    return Ok(Pattern::Record { label: name, fields });
                }
                Ok(match (name.as_str(), quoted) {
                    ("true", false) => Pattern::Bool(true),
                    ("false", false) => Pattern::Bool(false),
                    _ => Pattern::Atom(name),
                })
            }
            TokenKind::Op(Op::LParen) => {
                self.bump();
                let mut parts = vec![self.pattern()?];
                while !self.at_op(Op::RParen) {
                    if self.peek().is_none() {
                        return Err(self.unexpected(&[")"]));
                    }
                    parts.push(self.pattern()?);
                }
                self.bump();
                Ok(if parts.len() == 1 { parts.pop().expect("one") } else { Pattern::Tuple(parts) })
            }
            TokenKind::Op(Op::LBracket) => {
                self.bump();
                let mut elems = Vec::new();
                while !self.at_op(Op::RBracket) {
                    if self.peek().is_none() {
                        return Err(self.unexpected(&["]"]));
                    }
                    elems.push(self.pattern()?);
                }
                self.bump();
                Ok(elems.into_iter().rev().fold(Pattern::Atom("nil".into()), |tail, h| Pattern::Cons(Box::new(h), Box::new(tail))))
            }
            _ => Err(self.unexpected(&["pattern"])),
        }
    }
}

fn describe(k: &TokenKind) -> String {
    match k {
        TokenKind::Kw(k) => k.as_str().to_string(),
        TokenKind::Atom { name, .. } => name.clone(),
        TokenKind::Var(v) => v.clone(),
        TokenKind::Int(i) => i.to_string(),
        TokenKind::Float(x) => x.to_string(),
        TokenKind::Op(o) => o.as_str().to_string(),
        TokenKind::ClauseSep => "[]".to_string(),
        TokenKind::Underscore => "_".to_string(),
    }
}

fn misuse(span: Span, msg: &str) -> LangError {
    LangError::at(span.start, format!("syntax error: {msg}"))
}

/// Checks that every node sits in a position that supports it.
fn check_block(b: &Block, ctx: Ctx, whole: Span) -> PResult<()> {
    let n = b.items.len();
    if ctx == Ctx::Expr && n == 0 {
        return Err(misuse(whole, "expected an expression at the end of this block"));
    }
    for (k, item) in b.items.iter().enumerate() {
        let last = k + 1 == n;
        if ctx == Ctx::Expr && last {
            if item.node.is_statement_only() {
                return Err(misuse(item.span, "expected an expression at the end of this block, found a statement"));
            }
            check_expr(&item.node, item.span)?;
        } else {
            if !item.node.can_be_statement() {
                return Err(misuse(item.span, "expression used as a statement"));
            }
            check_stmt(&item.node, item.span)?;
        }
    }
    Ok(())
}

fn check_clauses(cs: &[Clause], ctx: Ctx, span: Span) -> PResult<()> {
    for c in cs {
        let mut caps = Vec::new();
        c.pattern.captures(&mut caps);
        for (i, a) in caps.iter().enumerate() {
            if caps[..i].iter().any(|b| b.name == a.name) {
                return Err(LangError::at(a.span.start, format!("duplicate capture `{}` in pattern", a.name)));
            }
        }
        check_block(&c.body, ctx, span)?;
    }
    Ok(())
}

fn check_stmt(n: &Node, span: Span) -> PResult<()> {
    match n {
        Node::Skip(_) => Ok(()),
        Node::Bind(a, b) => {
            check_expr(a, span)?;
            check_expr(b, span)
        }
        Node::Thread(b) => check_block(b, Ctx::Stmt, span),
        Node::Raise(e) => check_expr(e, span),
        Node::Try { body, catches } => {
            check_block(body, Ctx::Stmt, span)?;
            check_clauses(catches, Ctx::Stmt, span)
        }
        Node::Proc { body, .. } => check_block(body, Ctx::Stmt, span),
        Node::Fun { body, .. } => check_block(body, Ctx::Expr, span),
        Node::Local(b) => check_block(b, Ctx::Stmt, span),
        Node::If { cond, then, otherwise } => {
            check_expr(cond, span)?;
            check_block(then, Ctx::Stmt, span)?;
            otherwise.as_ref().map_or(Ok(()), |b| check_block(b, Ctx::Stmt, span))
        }
        Node::Case { subject, clauses, otherwise } => {
            check_expr(subject, span)?;
            check_clauses(clauses, Ctx::Stmt, span)?;
            otherwise.as_ref().map_or(Ok(()), |b| check_block(b, Ctx::Stmt, span))
        }
        Node::Call { callee, args, .. } => {
            check_expr(callee, span)?;
            args.iter().try_for_each(|a| check_expr(a, span))
        }
        _ => Err(misuse(span, "expression used as a statement")),
    }
}

fn check_expr(n: &Node, span: Span) -> PResult<()> {
    match n {
        Node::Proc { name: None, body, .. } => check_block(body, Ctx::Stmt, span),
        Node::Fun { name: None, body, .. } => check_block(body, Ctx::Expr, span),
        Node::Local(b) => check_block(b, Ctx::Expr, span),
        Node::If { cond, then, otherwise } => {
            check_expr(cond, span)?;
            check_block(then, Ctx::Expr, span)?;
            match otherwise {
                Some(b) => check_block(b, Ctx::Expr, span),
                None => Err(misuse(span, "`if` used as an expression needs an `else` branch")),
            }
        }
        Node::Case { subject, clauses, otherwise } => {
            check_expr(subject, span)?;
            check_clauses(clauses, Ctx::Expr, span)?;
            otherwise.as_ref().map_or(Ok(()), |b| check_block(b, Ctx::Expr, span))
        }
        Node::Call { callee, args, .. } => {
            check_expr(callee, span)?;
            args.iter().try_for_each(|a| check_expr(a, span))
        }
        Node::Record { fields, .. } => fields.iter().try_for_each(|(_, v)| check_expr(v, span)),
        Node::Cons(a, b) | Node::BinOp(_, a, b) => {
            check_expr(a, span)?;
            check_expr(b, span)
        }
        Node::Tuple(xs) | Node::List(xs) => xs.iter().try_for_each(|x| check_expr(x, span)),
        Node::Neg(e) => check_expr(e, span),
        Node::Select { base, .. } => check_expr(base, span),
        Node::Var(_) | Node::Wildcard(_) | Node::Int(_) | Node::Float(_) | Node::Bool(_) | Node::Atom(_) => Ok(()),
        other => Err(misuse(span, &format!("{} cannot be used as an expression", node_kind(other)))),
    }
}

fn node_kind(n: &Node) -> &'static str {
    match n {
        Node::Skip(_) => "`skip`",
        Node::Bind(..) => "a binding",
        Node::Thread(_) => "`thread`",
        Node::Raise(_) => "`raise`",
        Node::Try { .. } => "`try`",
        Node::Proc { .. } => "a named `proc` definition",
        Node::Fun { .. } => "a named `fun` definition",
        _ => "this form",
    }
}

/// Parses a token sequence into a surface program.
pub fn parse(tokens: &[Token], origin: &str) -> Result<SurfaceProgram, LangError> {
    let mut p = Parser { toks: tokens, i: 0 };
    let body = p.block()?;
    if p.peek().is_some() {
        return Err(p.unexpected(&["statement", "end of input"]));
    }
    check_block(&body, Ctx::Stmt, Span::default())?;
    Ok(SurfaceProgram { origin: origin.to_string(), body })
}
