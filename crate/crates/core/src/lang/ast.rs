//! Surface syntax tree.
//!
//! Statement and expression forms share one node type because `if`, `case`,
//! `local` and applications appear in both positions; the parser checks that
//! each node is used in a position it supports.

use super::token::Span;

#[derive(Debug, Clone, PartialEq)]
pub struct Ident {
    pub name: String,
    pub span: Span,
}

impl Ident {
    pub fn new(name: impl Into<String>) -> Self {
        Ident { name: name.into(), span: Span::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureName {
    Int(i64),
    Atom(String),
}

/// A parsed source file.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceProgram {
    pub origin: String,
    pub body: Block,
}

/// A sequence of items, optionally preceded by `X Y in` declarations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Block {
    pub decls: Vec<Ident>,
    pub items: Vec<Item>,
}

impl Block {
    pub fn of(items: Vec<Node>) -> Block {
        Block { decls: Vec::new(), items: items.into_iter().map(Item::new).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub node: Node,
    pub span: Span,
}

impl Item {
    pub fn new(node: Node) -> Item {
        Item { node, span: Span::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Lt => "<",
            BinOp::Gt => ">",
            BinOp::Le => "=<",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "\\=",
        }
    }

    pub fn is_comparison(self) -> bool {
        !matches!(self, BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: Ident,
    /// `?` output marker; documentation only.
    pub output: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub pattern: Pattern,
    pub body: Block,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Skip(Span),
    Bind(Box<Node>, Box<Node>),
    Thread(Block),
    Raise(Box<Node>),
    Try { body: Block, catches: Vec<Clause> },
    /// `proc {P X} ... end`; `name` is `None` for the anonymous `{$ ...}` form.
    Proc { name: Option<Ident>, params: Vec<Param>, body: Block },
    Fun { name: Option<Ident>, lazy: bool, params: Vec<Param>, body: Block },
    Local(Block),
    If { cond: Box<Node>, then: Block, otherwise: Option<Block> },
    Case { subject: Box<Node>, clauses: Vec<Clause>, otherwise: Option<Block> },
    Call { callee: Box<Node>, args: Vec<Node>, span: Span },
    Var(Ident),
    Wildcard(Span),
    Int(i64),
    Float(f64),
    Bool(bool),
    Atom(String),
    Record { label: String, fields: Vec<(Option<FeatureName>, Node)> },
    Cons(Box<Node>, Box<Node>),
    Tuple(Vec<Node>),
    List(Vec<Node>),
    BinOp(BinOp, Box<Node>, Box<Node>),
    Neg(Box<Node>),
    Select { base: Box<Node>, member: String, span: Span },
}

impl Node {
    /// Forms that can only be statements.
    pub fn is_statement_only(&self) -> bool {
        matches!(self, Node::Skip(_) | Node::Bind(..) | Node::Thread(_) | Node::Raise(_) | Node::Try { .. })
            || matches!(self, Node::Proc { name: Some(_), .. } | Node::Fun { name: Some(_), .. })
    }

    /// Forms that may stand in statement position.
    pub fn can_be_statement(&self) -> bool {
        self.is_statement_only() || matches!(self, Node::Local(_) | Node::If { .. } | Node::Case { .. } | Node::Call { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    Int(i64),
    Float(f64),
    Bool(bool),
    Atom(String),
    Capture(Ident),
    Wildcard,
    Record { label: String, fields: Vec<(Option<FeatureName>, Pattern)> },
    Cons(Box<Pattern>, Box<Pattern>),
    Tuple(Vec<Pattern>),
}

impl Pattern {
    pub fn captures(&self, out: &mut Vec<Ident>) {
        match self {
            Pattern::Capture(i) => out.push(i.clone()),
            Pattern::Record { fields, .. } => fields.iter().for_each(|(_, p)| p.captures(out)),
            Pattern::Cons(h, t) => {
                h.captures(out);
                t.captures(out);
            }
            Pattern::Tuple(ps) => ps.iter().for_each(|p| p.captures(out)),
            _ => {}
        }
    }
}
