//! Tokenizer for the surface language.

use std::fmt;

use super::LangError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
    pub offset: usize,
}

/// Source span. Spans never take part in equality so that trees parsed from
/// different texts compare structurally.
#[derive(Debug, Clone, Copy, Default)]
pub struct Span {
    pub start: Pos,
    pub end: Pos,
}

impl PartialEq for Span {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for Span {}

impl Span {
    pub fn new(start: Pos, end: Pos) -> Self {
        Span { start, end }
    }

    pub fn to(self, other: Span) -> Span {
        Span { start: self.start, end: other.end }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Keyword {
    Proc,
    Fun,
    Thread,
    Local,
    In,
    End,
    If,
    Then,
    Else,
    Case,
    Of,
    Skip,
    Try,
    Catch,
    Raise,
    Lazy,
}

impl Keyword {
    pub fn from_word(w: &str) -> Option<Keyword> {
        use Keyword::*;
        Some(match w {
            "proc" => Proc,
            "fun" => Fun,
            "thread" => Thread,
            "local" => Local,
            "in" => In,
            "end" => End,
            "if" => If,
            "then" => Then,
            "else" => Else,
            "case" => Case,
            "of" => Of,
            "skip" => Skip,
            "try" => Try,
            "catch" => Catch,
            "raise" => Raise,
            "lazy" => Lazy,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        use Keyword::*;
        match self {
            Proc => "proc",
            Fun => "fun",
            Thread => "thread",
            Local => "local",
            In => "in",
            End => "end",
            If => "if",
            Then => "then",
            Else => "else",
            Case => "case",
            Of => "of",
            Skip => "skip",
            Try => "try",
            Catch => "catch",
            Raise => "raise",
            Lazy => "lazy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Eq,
    Plus,
    Minus,
    Star,
    Slash,
    Gt,
    Lt,
    Ge,
    Le,
    EqEq,
    Ne,
    Bar,
    Hash,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Colon,
    Dot,
    Question,
    Dollar,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        use Op::*;
        match self {
            Eq => "=",
            Plus => "+",
            Minus => "-",
            Star => "*",
            Slash => "/",
            Gt => ">",
            Lt => "<",
            Ge => ">=",
            Le => "=<",
            EqEq => "==",
            Ne => "\\=",
            Bar => "|",
            Hash => "#",
            LParen => "(",
            RParen => ")",
            LBrace => "{",
            RBrace => "}",
            LBracket => "[",
            RBracket => "]",
            Colon => ":",
            Dot => ".",
            Question => "?",
            Dollar => "$",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Kw(Keyword),
    /// An atom; `quoted` records whether it was written between single quotes.
    Atom { name: String, quoted: bool },
    Var(String),
    Int(i64),
    Float(f64),
    Op(Op),
    /// The `[]` clause separator.
    ClauseSep,
    Underscore,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Kw(k) => write!(f, "kw:{}", k.as_str()),
            TokenKind::Atom { name, .. } => write!(f, "atom:{name}"),
            TokenKind::Var(v) => write!(f, "var:{v}"),
            TokenKind::Int(i) => write!(f, "int:{i}"),
            TokenKind::Float(x) => write!(f, "float:{x}"),
            TokenKind::Op(o) => write!(f, "op:{}", o.as_str()),
            TokenKind::ClauseSep => write!(f, "sep:[]"),
            TokenKind::Underscore => write!(f, "_"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

struct Lexer<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    i: usize,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn pos(&self) -> Pos {
        let offset = self.chars.get(self.i).map(|c| c.0).unwrap_or(self.src.len());
        Pos { line: self.line, col: self.col, offset }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.i).map(|c| c.1)
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.chars.get(self.i + n).map(|c| c.1)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.i += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, at: Pos, msg: impl Into<String>) -> LangError {
        LangError::at(at, msg)
    }

    fn skip_trivia(&mut self) -> Result<(), LangError> {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('%') => {
                    while let Some(c) = self.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                Some('/') if self.peek_at(1) == Some('*') => {
                    let start = self.pos();
                    self.bump();
                    self.bump();
                    loop {
                        match self.bump() {
                            Some('*') if self.peek() == Some('/') => {
                                self.bump();
                                break;
                            }
                            Some(_) => {}
                            None => return Err(self.err(start, "unterminated comment")),
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn word(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn number(&mut self, start: Pos) -> Result<TokenKind, LangError> {
        let mut text = String::new();
        while let Some(c) = self.peek().filter(|c| c.is_ascii_digit()) {
            text.push(c);
            self.bump();
        }
        let is_float = self.peek() == Some('.') && self.peek_at(1).is_some_and(|c| c.is_ascii_digit());
        if is_float {
            text.push('.');
            self.bump();
            while let Some(c) = self.peek().filter(|c| c.is_ascii_digit()) {
                text.push(c);
                self.bump();
            }
            text.parse::<f64>()
                .map(TokenKind::Float)
                .map_err(|_| self.err(start, format!("malformed number `{text}`")))
        } else {
            text.parse::<i64>()
                .map(TokenKind::Int)
                .map_err(|_| self.err(start, format!("integer literal `{text}` out of range")))
        }
    }

    fn quoted_atom(&mut self, start: Pos) -> Result<TokenKind, LangError> {
        self.bump();
        let mut name = String::new();
        loop {
            match self.bump() {
                Some('\'') => break,
                Some('\\') => match self.bump() {
                    Some('n') => name.push('\n'),
                    Some('t') => name.push('\t'),
                    Some(c @ ('\\' | '\'')) => name.push(c),
                    Some(c) => return Err(self.err(start, format!("unknown escape `\\{c}` in quoted atom"))),
                    None => return Err(self.err(start, "unterminated quoted atom")),
                },
                Some('\n') | None => return Err(self.err(start, "unterminated quoted atom")),
                Some(c) => name.push(c),
            }
        }
        Ok(TokenKind::Atom { name, quoted: true })
    }

    fn next_token(&mut self) -> Result<Option<Token>, LangError> {
        self.skip_trivia()?;
        let start = self.pos();
        let Some(c) = self.peek() else { return Ok(None) };
        let kind = if c.is_ascii_digit() {
            self.number(start)?
        } else if c.is_ascii_uppercase() {
            TokenKind::Var(self.word())
        } else if c.is_ascii_lowercase() {
            let w = self.word();
            match Keyword::from_word(&w) {
                Some(k) => TokenKind::Kw(k),
                None => TokenKind::Atom { name: w, quoted: false },
            }
        } else if c == '\'' {
            self.quoted_atom(start)?
        } else if c == '_' {
            self.bump();
            TokenKind::Underscore
        } else {
            self.bump();
            let two = |l: &mut Self, next: char, yes: Op, no: Op| {
                if l.peek() == Some(next) {
                    l.bump();
                    yes
                } else {
                    no
                }
            };
            let op = match c {
                '=' => match self.peek() {
                    Some('=') => {
                        self.bump();
                        Op::EqEq
                    }
                    Some('<') => {
                        self.bump();
                        Op::Le
                    }
                    _ => Op::Eq,
                },
                '+' => Op::Plus,
                '-' => Op::Minus,
                '*' => Op::Star,
                '/' => Op::Slash,
                '>' => two(self, '=', Op::Ge, Op::Gt),
                '<' => Op::Lt,
                '\\' => {
                    if self.peek() == Some('=') {
                        self.bump();
                        Op::Ne
                    } else {
                        return Err(self.err(start, "illegal character `\\`"));
                    }
                }
                '|' => Op::Bar,
                '#' => Op::Hash,
                '(' => Op::LParen,
                ')' => Op::RParen,
                '{' => Op::LBrace,
                '}' => Op::RBrace,
                '[' => {
                    if self.peek() == Some(']') {
                        self.bump();
                        return Ok(Some(Token { kind: TokenKind::ClauseSep, span: Span::new(start, self.pos()) }));
                    }
                    Op::LBracket
                }
                ']' => Op::RBracket,
                ':' => Op::Colon,
                '.' => Op::Dot,
                '?' => Op::Question,
                '$' => Op::Dollar,
                other => return Err(self.err(start, format!("illegal character `{other}`"))),
            };
            TokenKind::Op(op)
        };
        Ok(Some(Token { kind, span: Span::new(start, self.pos()) }))
    }
}

/// Splits source text into tokens carrying line/column spans.
pub fn tokenize(source: &str) -> Result<Vec<Token>, LangError> {
    let mut lx = Lexer { src: source, chars: source.char_indices().collect(), i: 0, line: 1, col: 1 };
    let mut out = Vec::new();
    while let Some(t) = lx.next_token()? {
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<String> {
        tokenize(src).unwrap().iter().map(|t| t.kind.to_string()).collect()
    }

    #[test]
    fn thread_binding() {
        assert_eq!(kinds("thread X = 5 end"), ["kw:thread", "var:X", "op:=", "int:5", "kw:end"]);
    }

    #[test]
    fn empty_source() {
        assert!(tokenize("").unwrap().is_empty());
        assert!(tokenize("  % just a comment\n").unwrap().is_empty());
    }

    #[test]
    fn quoted_atom() {
        assert_eq!(kinds("'acme'"), ["atom:acme"]);
        assert_eq!(kinds("'it\\'s'"), ["atom:it's"]);
    }

    #[test]
    fn operators_and_separator() {
        assert_eq!(
            kinds("== \\= =< >= > < [] [ ] | # : . ? $"),
            [
                "op:==", "op:\\=", "op:=<", "op:>=", "op:>", "op:<", "sep:[]", "op:[", "op:]", "op:|", "op:#", "op::",
                "op:.", "op:?", "op:$"
            ]
        );
    }

    #[test]
    fn numbers() {
        assert_eq!(kinds("12345.67 3000 1."), ["float:12345.67", "int:3000", "int:1", "op:."]);
    }

    #[test]
    fn spans_track_lines() {
        let toks = tokenize("local X in\n  X = 1\nend").unwrap();
        let x = &toks[3];
        assert_eq!(x.kind, TokenKind::Var("X".into()));
        assert_eq!((x.span.start.line, x.span.start.col), (2, 3));
    }

    #[test]
    fn lexical_errors() {
        let e = tokenize("X = 'abc").unwrap_err();
        assert!(e.message.contains("unterminated"));
        assert_eq!((e.line, e.col), (1, 5));
        let e = tokenize("X = @").unwrap_err();
        assert!(e.message.contains("illegal character"));
        assert!(tokenize("99999999999999999999").is_err());
    }
}
