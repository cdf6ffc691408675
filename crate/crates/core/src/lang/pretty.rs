//! Pretty printer for surface programs. The output re-parses to a
//! structurally identical tree.

use std::fmt::Write;

use super::ast::*;
use super::token::Keyword;

pub fn print_program(p: &SurfaceProgram) -> String {
    let mut out = String::new();
    block(&mut out, &p.body, 0);
    out
}

pub fn atom_text(name: &str) -> String {
    let plain = name.chars().next().is_some_and(|c| c.is_ascii_lowercase())
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && Keyword::from_word(name).is_none()
        && name != "true"
        && name != "false";
    if plain {
        name.to_string()
    } else {
        let mut s = String::from("'");
        for c in name.chars() {
            match c {
                '\'' => s.push_str("\\'"),
                '\\' => s.push_str("\\\\"),
                '\n' => s.push_str("\\n"),
                '\t' => s.push_str("\\t"),
                c => s.push(c),
            }
        }
        s.push('\'');
        s
    }
}

pub fn float_text(x: f64) -> String {
    let s = format!("{x}");
    if s.contains('.') || !x.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn block(out: &mut String, b: &Block, level: usize) {
    if !b.decls.is_empty() {
        indent(out, level);
        let names: Vec<&str> = b.decls.iter().map(|d| d.name.as_str()).collect();
        let _ = writeln!(out, "{} in", names.join(" "));
    }
    for item in &b.items {
        indent(out, level);
        stmt(out, &item.node, level);
        out.push('\n');
    }
}

fn feature(f: &FeatureName) -> String {
    match f {
        FeatureName::Int(i) => i.to_string(),
        FeatureName::Atom(a) => atom_text(a),
    }
}

fn params(ps: &[Param]) -> String {
    ps.iter().map(|p| if p.output { format!(" ?{}", p.name.name) } else { format!(" {}", p.name.name) }).collect()
}

fn clauses(out: &mut String, cs: &[Clause], level: usize) {
    for (i, c) in cs.iter().enumerate() {
        if i > 0 {
            indent(out, level);
            out.push_str("[] ");
        }
        pattern(out, &c.pattern);
        out.push_str(" then\n");
        block(out, &c.body, level + 1);
    }
}

fn stmt(out: &mut String, n: &Node, level: usize) {
    match n {
        Node::Bind(a, b) => {
            guarded(out, a, level);
            out.push_str(" = ");
            expr(out, b, level);
        }
        other if is_compound(other) => guarded(out, other, level),
        other => expr(out, other, level),
    }
}

fn is_compound(n: &Node) -> bool {
    match n {
        Node::BinOp(..) | Node::Cons(..) | Node::Tuple(_) | Node::Neg(_) => true,
        Node::Int(i) => *i < 0,
        Node::Float(x) => x.is_sign_negative(),
        _ => false,
    }
}

fn guarded(out: &mut String, n: &Node, level: usize) {
    if is_compound(n) {
        out.push('(');
        expr(out, n, level);
        out.push(')');
    } else {
        expr(out, n, level);
    }
}

fn expr(out: &mut String, n: &Node, level: usize) {
    match n {
        Node::Skip(_) => out.push_str("skip"),
        Node::Bind(..) => stmt(out, n, level),
        Node::Thread(b) => {
            out.push_str("thread\n");
            block(out, b, level + 1);
            indent(out, level);
            out.push_str("end");
        }
        Node::Raise(e) => {
            out.push_str("raise ");
            expr(out, e, level);
            out.push_str(" end");
        }
        Node::Try { body, catches } => {
            out.push_str("try\n");
            block(out, body, level + 1);
            indent(out, level);
            out.push_str("catch ");
            clauses(out, catches, level);
            indent(out, level);
            out.push_str("end");
        }
        Node::Proc { name, params: ps, body } => {
            let name = name.as_ref().map_or("$", |n| n.name.as_str());
            let _ = writeln!(out, "proc {{{name}{}}}", params(ps));
            block(out, body, level + 1);
            indent(out, level);
            out.push_str("end");
        }
        Node::Fun { name, lazy, params: ps, body } => {
            let name = name.as_ref().map_or("$", |n| n.name.as_str());
            let lazy = if *lazy { "lazy " } else { "" };
            let _ = writeln!(out, "fun {lazy}{{{name}{}}}", params(ps));
            block(out, body, level + 1);
            indent(out, level);
            out.push_str("end");
        }
        Node::Local(b) => {
            out.push_str("local\n");
            block(out, b, level + 1);
            indent(out, level);
            out.push_str("end");
        }
        Node::If { cond, then, otherwise } => {
            out.push_str("if ");
            expr(out, cond, level);
            out.push_str(" then\n");
            block(out, then, level + 1);
            if let Some(e) = otherwise {
                indent(out, level);
                out.push_str("else\n");
                block(out, e, level + 1);
            }
            indent(out, level);
            out.push_str("end");
        }
        Node::Case { subject, clauses: cs, otherwise } => {
            out.push_str("case ");
            expr(out, subject, level);
            out.push_str(" of ");
            clauses(out, cs, level);
            if let Some(e) = otherwise {
                indent(out, level);
                out.push_str("else\n");
                block(out, e, level + 1);
            }
            indent(out, level);
            out.push_str("end");
        }
        Node::Call { callee, args, .. } => {
            out.push('{');
            guarded(out, callee, level);
            for a in args {
                out.push(' ');
                guarded(out, a, level);
            }
            out.push('}');
        }
        Node::Var(id) => out.push_str(&id.name),
        Node::Wildcard(_) => out.push('_'),
        Node::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Node::Float(x) => out.push_str(&float_text(*x)),
        Node::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Node::Atom(a) => out.push_str(&atom_text(a)),
        Node::Record { label, fields } => {
            out.push_str(&atom_text(label));
            out.push('(');
            for (i, (f, v)) in fields.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                if let Some(f) = f {
                    out.push_str(&feature(f));
                    out.push(':');
                }
                guarded(out, v, level);
            }
            out.push(')');
        }
        Node::Cons(h, t) => {
            guarded(out, h, level);
            out.push('|');
            match **t {
                Node::Cons(..) => expr(out, t, level),
                _ => guarded(out, t, level),
            }
        }
        Node::Tuple(xs) => {
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    out.push('#');
                }
                guarded(out, x, level);
            }
        }
        Node::List(xs) => {
            out.push('[');
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                guarded(out, x, level);
            }
            out.push(']');
        }
        Node::BinOp(op, a, b) => {
            guarded(out, a, level);
            let _ = write!(out, " {} ", op.symbol());
            guarded(out, b, level);
        }
        Node::Neg(e) => {
            out.push_str("-(");
            expr(out, e, level);
            out.push(')');
        }
        Node::Select { base, member, .. } => {
            guarded(out, base, level);
            out.push('.');
            out.push_str(&atom_text(member));
        }
    }
}

fn pattern_compound(p: &Pattern) -> bool {
    matches!(p, Pattern::Cons(..) | Pattern::Tuple(_))
}

fn pattern_guarded(out: &mut String, p: &Pattern) {
    if pattern_compound(p) {
        out.push('(');
        pattern(out, p);
        out.push(')');
    } else {
        pattern(out, p);
    }
}

fn pattern(out: &mut String, p: &Pattern) {
    match p {
        Pattern::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Pattern::Float(x) => out.push_str(&float_text(*x)),
        Pattern::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Pattern::Atom(a) => out.push_str(&atom_text(a)),
        Pattern::Capture(id) => out.push_str(&id.name),
        Pattern::Wildcard => out.push('_'),
        Pattern::Record { label, fields } => {
            out.push_str(&atom_text(label));
            out.push('(');
            for (i, (f, v)) in fields.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                if let Some(f) = f {
                    out.push_str(&feature(f));
                    out.push(':');
                }
                pattern(out, v);
            }
            out.push(')');
        }
        Pattern::Cons(h, t) => {
            pattern_guarded(out, h);
            out.push('|');
            match **t {
                Pattern::Cons(..) => pattern(out, t),
                _ => pattern_guarded(out, t),
            }
        }
        Pattern::Tuple(xs) => {
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    out.push('#');
                }
                pattern_guarded(out, x);
            }
        }
    }
}
