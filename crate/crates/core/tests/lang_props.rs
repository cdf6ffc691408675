use std::collections::BTreeSet;
use std::sync::Arc;

use ozy_core::lang::kernel::sym;
use ozy_core::lang::pretty::print_program;
use ozy_core::lang::{free_identifiers, load_program, parse_source, Feature, Pattern, ProcLit, Resolver, Stmt, Sym, ValueLit};
use ozy_core::machine::{Machine, NullHost, Status};
use ozy_core::term::Term;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NAMES: &[&str] = &["A", "B", "C", "D"];

fn name() -> impl Strategy<Value = Sym> {
    prop::sample::select(NAMES).prop_map(sym)
}

fn kernel_stmt() -> impl Strategy<Value = Stmt> {
    let leaf = prop_oneof![
        Just(Stmt::Skip),
        (name(), name()).prop_map(|(a, b)| Stmt::BindVarVar(a, b)),
        (name(), 0i64..3).prop_map(|(a, i)| Stmt::BindValue(a, ValueLit::Int(i))),
        (name(), name(), name()).prop_map(|(a, b, c)| Stmt::BindValue(a, ValueLit::Record { label: sym("f"), features: vec![(Feature::Int(1), b), (Feature::Int(2), c)] })),
        (name(), prop::collection::vec(name(), 0..3)).prop_map(|(p, args)| Stmt::Apply(p, args)),
        name().prop_map(Stmt::Raise),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        let rc = |s: Stmt| Arc::new(s);
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(move |(a, b)| Stmt::Seq(rc(a), rc(b))),
            (name(), inner.clone()).prop_map(move |(x, b)| Stmt::Local(x, rc(b))),
            (name(), inner.clone(), inner.clone()).prop_map(move |(x, a, b)| Stmt::Conditional(x, rc(a), rc(b))),
            (name(), name(), inner.clone(), inner.clone()).prop_map(move |(x, c, a, b)| Stmt::Match(
                x,
                vec![(Pattern::Record { label: sym("f"), features: vec![(Feature::Int(1), Pattern::Capture(c)), (Feature::Int(2), Pattern::Wildcard)] }, rc(a))],
                rc(b)
            )),
            inner.clone().prop_map(move |a| Stmt::SpawnThread(rc(a))),
            (inner.clone(), name(), inner.clone()).prop_map(move |(a, x, b)| Stmt::TryCatch(rc(a), x, rc(b))),
            (name(), prop::collection::vec(name(), 0..3), inner.clone()).prop_map(|(x, ps, b)| Stmt::BindValue(x, ValueLit::Proc(Arc::new(ProcLit::new(ps, b))))),
        ]
    })
}

/// Every occurrence together with the names bound around it; an identifier
/// is free when some occurrence is outside all of its binders.
fn occurrences(s: &Stmt, bound: &[Sym], out: &mut Vec<(Sym, Vec<Sym>)>) {
    let mut occ = |x: &Sym| out.push((x.clone(), bound.to_vec()));
    match s {
        Stmt::Skip => {}
        Stmt::Seq(a, b) => {
            occurrences(a, bound, out);
            occurrences(b, bound, out);
        }
        Stmt::Local(x, b) => occurrences(b, &[bound, std::slice::from_ref(x)].concat(), out),
        Stmt::BindVarVar(a, b) => {
            occ(a);
            occ(b);
        }
        Stmt::BindValue(x, lit) => {
            occ(x);
            match lit {
                ValueLit::Record { features, .. } => features.iter().for_each(|(_, v)| occ(v)),
                ValueLit::Proc(p) => occurrences(&p.body, &[bound, &p.params].concat(), out),
                _ => {}
            }
        }
        Stmt::Conditional(x, a, b) => {
            occ(x);
            occurrences(a, bound, out);
            occurrences(b, bound, out);
        }
        Stmt::Match(x, clauses, other) => {
            occ(x);
            for (p, body) in clauses {
                let mut caps = Vec::new();
                p.captures(&mut caps);
                occurrences(body, &[bound, &caps].concat(), out);
            }
            occurrences(other, bound, out);
        }
        Stmt::Apply(p, args) => {
            occ(p);
            args.iter().for_each(&mut occ);
        }
        Stmt::SpawnThread(b) => occurrences(b, bound, out),
        Stmt::TryCatch(a, x, b) => {
            occurrences(a, bound, out);
            occurrences(b, &[bound, std::slice::from_ref(x)].concat(), out);
        }
        Stmt::Raise(x) => occ(x),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn free_identifiers_match_brute_force(s in kernel_stmt()) {
        let mut occ = Vec::new();
        occurrences(&s, &[], &mut occ);
        let expected: BTreeSet<Sym> = occ.into_iter().filter(|(x, b)| !b.contains(x)).map(|(x, _)| x).collect();
        prop_assert_eq!(free_identifiers(&s), expected);
    }
}

/// Arithmetic over earlier definitions, evaluated directly as the oracle.
#[derive(Debug, Clone)]
enum Ex {
    Lit(i64),
    Ref(usize),
    Add(Box<Ex>, Box<Ex>),
    Sub(Box<Ex>, Box<Ex>),
    Mul(Box<Ex>, Box<Ex>),
    Div(Box<Ex>, i64),
    Neg(Box<Ex>),
    Sq(Box<Ex>),
    IfLt(Box<Ex>, Box<Ex>, Box<Ex>, Box<Ex>),
    Pick(Vec<Ex>, usize),
}

fn gen_ex(rng: &mut ChaCha8Rng, defs: usize, depth: u32) -> Ex {
    let leaf = depth == 0 || rng.random_bool(0.3);
    if leaf {
        return if defs > 0 && rng.random_bool(0.5) { Ex::Ref(rng.random_range(0..defs)) } else { Ex::Lit(rng.random_range(-9..10)) };
    }
    let sub = |rng: &mut ChaCha8Rng| Box::new(gen_ex(rng, defs, depth - 1));
    match rng.random_range(0..9) {
        0 => Ex::Add(sub(rng), sub(rng)),
        1 => Ex::Sub(sub(rng), sub(rng)),
        2 => Ex::Mul(sub(rng), sub(rng)),
        3 => {
            let e = sub(rng);
            Ex::Div(e, rng.random_range(1..6))
        }
        4 => Ex::Neg(sub(rng)),
        5 => Ex::Sq(sub(rng)),
        6 => Ex::IfLt(sub(rng), sub(rng), sub(rng), sub(rng)),
        _ => {
            let n = rng.random_range(1..4);
            let items = (0..n).map(|_| gen_ex(rng, defs, depth - 1)).collect();
            Ex::Pick(items, rng.random_range(0..n))
        }
    }
}

fn eval(e: &Ex, env: &[i64]) -> Option<i64> {
    Some(match e {
        Ex::Lit(i) => *i,
        Ex::Ref(i) => env[*i],
        Ex::Add(a, b) => eval(a, env)?.checked_add(eval(b, env)?)?,
        Ex::Sub(a, b) => eval(a, env)?.checked_sub(eval(b, env)?)?,
        Ex::Mul(a, b) => eval(a, env)?.checked_mul(eval(b, env)?)?,
        Ex::Div(a, d) => eval(a, env)? / d,
        Ex::Neg(a) => eval(a, env)?.checked_neg()?,
        Ex::Sq(a) => {
            let x = eval(a, env)?;
            x.checked_mul(x)?
        }
        Ex::IfLt(a, b, t, f) => {
            if eval(a, env)? < eval(b, env)? {
                eval(t, env)?
            } else {
                eval(f, env)?
            }
        }
        Ex::Pick(items, i) => {
            let vals: Option<Vec<i64>> = items.iter().map(|x| eval(x, env)).collect();
            vals?[*i]
        }
    })
}

fn src(e: &Ex) -> String {
    match e {
        Ex::Lit(i) if *i < 0 => format!("({i})"),
        Ex::Lit(i) => i.to_string(),
        Ex::Ref(i) => format!("V{i}"),
        Ex::Add(a, b) => format!("({} + {})", src(a), src(b)),
        Ex::Sub(a, b) => format!("({} - {})", src(a), src(b)),
        Ex::Mul(a, b) => format!("({} * {})", src(a), src(b)),
        Ex::Div(a, d) => format!("({} / {d})", src(a)),
        Ex::Neg(a) => format!("(-{})", src(a)),
        Ex::Sq(a) => format!("{{Sq {}}}", src(a)),
        Ex::IfLt(a, b, t, f) => format!("if {} < {} then {} else {} end", src(a), src(b), src(t), src(f)),
        Ex::Pick(items, i) => {
            let parts: Vec<String> = items.iter().map(src).collect();
            let caps: Vec<String> = (0..items.len()).map(|j| if j == *i { "Y".to_string() } else { "_".to_string() }).collect();
            format!("case t({}) of t({}) then Y end", parts.join(" "), caps.join(" "))
        }
    }
}

#[test]
fn arithmetic_programs_match_tree_walker() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut checked = 0;
    while checked < 20 {
        let n = rng.random_range(1..6);
        let defs: Vec<Ex> = (0..n).map(|i| gen_ex(&mut rng, i, 3)).collect();
        let mut env = Vec::new();
        let mut ok = true;
        for d in &defs {
            match eval(d, &env) {
                Some(v) => env.push(v),
                None => ok = false,
            }
            if !ok {
                break;
            }
        }
        if !ok {
            continue;
        }
        // Definitions run as threads in shuffled order; dataflow orders them.
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut text = String::from("fun {Sq X} X * X end\n");
        for i in order {
            text.push_str(&format!("thread V{i} = {} end\n", src(&defs[i])));
        }
        let p = load_program("arith", &text, "arith.oz", &Resolver::default()).unwrap_or_else(|e| panic!("{e}\n{text}"));
        for seed in 0..5 {
            let mut m = Machine::from_program(&p, seed);
            assert_eq!(m.run_to_quiescence(1_000_000, &mut NullHost::default()), Status::Terminated, "{text}");
            for (i, want) in env.iter().enumerate() {
                assert_eq!(m.global_term(&format!("V{i}")), Some(Term::Int(*want)), "V{i} in\n{text}");
            }
        }
        checked += 1;
    }
}

/// Grammar-directed generator of surface programs.
struct Gen {
    rng: ChaCha8Rng,
    fresh: usize,
}

impl Gen {
    fn var(&mut self) -> String {
        ["X", "Y", "Z", "W", "Acc", "Res"][self.rng.random_range(0..6)].to_string()
    }

    fn fresh(&mut self) -> String {
        self.fresh += 1;
        format!("T{}", self.fresh)
    }

    fn atom(&mut self) -> String {
        ["a", "foo", "'Yes'", "nil", "'hello world'", "unit"][self.rng.random_range(0..6)].to_string()
    }

    fn expr(&mut self, depth: u32) -> String {
        if depth == 0 {
            return match self.rng.random_range(0..5) {
                0 => self.rng.random_range(-50..50).to_string(),
                1 => format!("{:.2}", self.rng.random_range(-100.0..100.0)),
                2 => self.atom(),
                3 => ["true", "false", "_"][self.rng.random_range(0..3)].to_string(),
                _ => self.var(),
            };
        }
        let d = depth - 1;
        match self.rng.random_range(0..16) {
            0 => format!("({} + {})", self.expr(d), self.expr(d)),
            1 => format!("({} * {} - {})", self.expr(d), self.expr(d), self.expr(d)),
            2 => format!("({} / {})", self.expr(d), self.expr(d)),
            3 => format!("({} == {})", self.expr(d), self.expr(d)),
            4 => format!("rec(a:{} b:{} {})", self.expr(d), self.expr(d), self.expr(d)),
            5 => format!("[{} {}]", self.expr(d), self.expr(d)),
            6 => format!("({}|{})", self.expr(d), self.expr(d)),
            7 => format!("({} # {})", self.expr(d), self.expr(d)),
            8 => format!("{{{} {}}}", self.var(), self.expr(d)),
            9 => format!("if {} then {} else {} end", self.expr(d), self.expr(d), self.expr(d)),
            10 => format!("case {} of f(A _) then A [] g then {} else {} end", self.expr(d), self.expr(d), self.expr(d)),
            11 => {
                let t = self.fresh();
                format!("local {t} in {} {t} end", self.stmt(d))
            }
            12 => format!("fun {{$ {}}} {} end", self.var(), self.expr(d)),
            13 => format!("{}.{}", self.var(), ["a", "b", "get"][self.rng.random_range(0..3)]),
            14 => format!("(-{})", self.expr(d)),
            _ => format!("{{Mod.op {} {}}}", self.expr(d), self.expr(d)),
        }
    }

    fn stmt(&mut self, depth: u32) -> String {
        if depth == 0 {
            return match self.rng.random_range(0..3) {
                0 => "skip".into(),
                1 => format!("{} = {}", self.var(), self.expr(0)),
                _ => format!("{{{} {}}}", self.var(), self.expr(0)),
            };
        }
        let d = depth - 1;
        match self.rng.random_range(0..14) {
            0 => format!("{} = {}", self.var(), self.expr(d)),
            1 => format!("thread {} end", self.stmt(d)),
            2 => {
                let (a, b) = (self.fresh(), self.fresh());
                format!("local {a} {b} in {} {} end", self.stmt(d), self.stmt(d))
            }
            3 => format!("if {} then {} else {} end", self.expr(d), self.stmt(d), self.stmt(d)),
            4 => format!("case {} of f(a:A b:_) then {} [] [H] then {} [] H|T then skip [] (P Q) then {} end", self.expr(d), self.stmt(d), self.stmt(d), self.stmt(d)),
            5 => format!("proc {{{} {} ?{}}} {} end", self.var(), self.var(), self.var(), self.stmt(d)),
            6 => format!("fun {{{} {}}} {} end", self.var(), self.var(), self.expr(d)),
            7 => format!("fun lazy {{{} {}}} {} end", self.var(), self.var(), self.expr(d)),
            8 => format!("try {} catch error(E) then {} [] X then skip end", self.stmt(d), self.stmt(d)),
            9 => format!("raise {} end", self.expr(d)),
            10 => format!("{{Mod.op {}}}", self.expr(d)),
            11 => format!("{{Sleep {} seconds}}", self.rng.random_range(0..5)),
            12 => format!("({} {}) = {}", self.var(), self.var(), self.expr(d)),
            _ => format!("{} {}", self.stmt(d), self.stmt(d)),
        }
    }
}

fn corpus() -> Vec<(String, String)> {
    let dir = format!("{}/../../programs", env!("CARGO_MANIFEST_DIR"));
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "oz") {
            out.push((path.display().to_string(), std::fs::read_to_string(&path).unwrap()));
        }
    }
    assert!(out.len() >= 4);
    out
}

fn round_trips(origin: &str, text: &str) {
    let first = parse_source(text, origin).unwrap_or_else(|e| panic!("{e}\n{text}"));
    let printed = print_program(&first);
    let second = parse_source(&printed, origin).unwrap_or_else(|e| panic!("{e}\n{printed}"));
    assert_eq!(first.body, second.body, "{printed}");
}

#[test]
fn corpus_round_trips() {
    for (origin, text) in corpus() {
        round_trips(&origin, &text);
    }
}

#[test]
fn generated_programs_parse_desugar_and_round_trip() {
    let mut g = Gen { rng: ChaCha8Rng::seed_from_u64(7), fresh: 0 };
    let resolver = Resolver::default().with_modules(["Mod"]);
    for i in 0..1000 {
        let n = g.rng.random_range(1..5);
        let text: Vec<String> = (0..n).map(|_| g.stmt(3)).collect();
        let text = text.join("\n");
        let origin = format!("gen{i}.oz");
        round_trips(&origin, &text);
        load_program("gen", &text, &origin, &resolver).unwrap_or_else(|e| panic!("{e}\n{text}"));
    }
}

#[test]
fn error_reports_have_position() {
    let e = load_program("bad", "X = \n  (1 + ", "bad.oz", &Resolver::default()).unwrap_err();
    let shown = e.to_string();
    assert!(shown.starts_with("bad.oz:2:"), "{shown}");
}
