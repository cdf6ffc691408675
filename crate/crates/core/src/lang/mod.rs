//! Surface language: tokenizer, parser, pretty printer and desugaring into
//! kernel statements.

pub mod ast;
pub mod desugar;
pub mod kernel;
pub mod parser;
pub mod pretty;
pub mod token;

use std::fmt;

pub use desugar::{desugar_program, desugar_statement, Program, Resolver};
pub use kernel::{free_identifiers, Feature, Pattern, ProcLit, Stmt, Sym, ValueLit};
pub use parser::parse;
pub use token::{tokenize, Pos, Span, Token, TokenKind};

/// A lexical, syntax or scoping error with its source position.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct LangError {
    pub origin: Option<String>,
    pub line: u32,
    pub col: u32,
    pub message: String,
    /// Token descriptions the parser would have accepted, for syntax errors.
    pub expected: Vec<String>,
}

impl LangError {
    pub fn at(pos: Pos, message: impl Into<String>) -> Self {
        LangError { origin: None, line: pos.line, col: pos.col, message: message.into(), expected: Vec::new() }
    }

    pub fn with_expected(mut self, expected: &[&str]) -> Self {
        self.expected = expected.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_origin(mut self, origin: &str) -> Self {
        self.origin = Some(origin.to_string());
        self
    }
}

impl fmt::Display for LangError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let origin = self.origin.as_deref().unwrap_or("<input>");
        write!(f, "{origin}:{}:{}: {}", self.line, self.col, self.message)
    }
}

/// Tokenizes and parses `source`, tagging errors with `origin`.
pub fn parse_source(source: &str, origin: &str) -> Result<ast::SurfaceProgram, LangError> {
    let toks = tokenize(source).map_err(|e| e.with_origin(origin))?;
    parse(&toks, origin).map_err(|e| e.with_origin(origin))
}

/// Parses and desugars a program file.
pub fn load_program(name: &str, source: &str, origin: &str, resolver: &Resolver) -> Result<Program, LangError> {
    let tree = parse_source(source, origin)?;
    desugar_program(name, &tree, resolver).map_err(|e| e.with_origin(origin))
}
