use ozy_core::lang::{load_program, Program, Resolver};
use ozy_core::machine::{Machine, Member, PendingCall, Status};
use ozy_core::runner::{Modules, Runner};
use ozy_core::snapshot::{restore, snapshot, Snapshot, SnapshotMeta};
use ozy_core::term::Term;

fn program(name: &str, modules: &[&str]) -> Program {
    let path = format!("{}/../../programs/{name}.oz", env!("CARGO_MANIFEST_DIR"));
    let src = std::fs::read_to_string(&path).unwrap();
    load_program(name, &src, &path, &Resolver::default().with_modules(modules.iter().copied())).unwrap()
}

/// Stub connectors for the purchase and water tank scenarios.
#[derive(Default)]
struct Stubs {
    levels: Vec<(i64, i64)>,
}

impl Modules for Stubs {
    fn member(&self, module: &str, name: &str) -> Option<Member> {
        match (module, name) {
            ("Reg", "bankLoc") => Some(Member::Constant(Term::atom("bank://central"))),
            ("Reg", "getIdByQuery") | ("Reg", "getData") | ("Supp", "getEuro") | ("Tank", "level") => Some(Member::Operation { idempotent: true }),
            ("Supp", "order") | ("Bank", "pay") | ("Client", "notify") => Some(Member::Operation { idempotent: false }),
            _ => None,
        }
    }

    fn invoke(&mut self, call: &PendingCall, now: i64) -> Result<Term, Term> {
        Ok(match (call.module.as_str(), call.op.as_str()) {
            ("Reg", "getIdByQuery") => Term::atom("sup-7"),
            ("Reg", "getData") => Term::tuple("#", vec![Term::atom("sup://a"), Term::atom("sup://b")]),
            ("Supp", "getEuro") => Term::Float(2.5),
            ("Supp", "order") => Term::atom("order-1"),
            ("Bank", "pay") => Term::atom("bk-9"),
            ("Client", "notify") => Term::atom("unit"),
            ("Tank", "level") => Term::Int(self.levels.iter().rev().find(|(t, _)| *t <= now).map(|(_, l)| *l).unwrap_or(0)),
            _ => return Err(Term::atom("unexpected")),
        })
    }
}

#[test]
fn fig2_is_confluent() {
    let p = program("fig2", &[]);
    for seed in 0..100 {
        let mut r = Runner::new(Machine::from_program(&p, seed), Stubs::default());
        assert_eq!(r.settle(), Status::Terminated);
        assert_eq!(r.machine.global_term("Z"), Some(Term::Int(12)));
    }
}

#[test]
fn fig3_waits_three_days() {
    let p = program("fig3", &[]);
    let mut r = Runner::new(Machine::from_program(&p, 3), Stubs::default());
    assert_eq!(r.settle(), Status::PartiallyTerminated);
    assert_eq!(r.machine.global_term("D"), None);
    r.advance(3 * 86_400_000 - 1);
    assert_eq!(r.machine.global_term("D"), None);
    assert_eq!(r.advance(1), Status::Terminated);
    assert_eq!(r.machine.global_term("D"), Some(Term::atom("N")));
}

#[test]
fn fig3_survives_snapshot() {
    let p = program("fig3", &[]);
    let mut r = Runner::new(Machine::from_program(&p, 3), Stubs::default());
    r.settle();
    let bytes = snapshot(&r.machine, &SnapshotMeta::default()).unwrap().encode();
    let m = restore(&Snapshot::decode(&bytes).unwrap(), None).unwrap().machine;
    let mut r = Runner::new(m, Stubs::default());
    assert_eq!(r.advance(3 * 86_400_000), Status::Terminated);
    assert_eq!(r.machine.global_term("D"), Some(Term::atom("N")));
}

const PURCHASE_MODULES: &[&str] = &["Reg", "Supp", "Bank", "Client"];

fn quote(r: &mut Runner<Stubs>) -> ozy_core::store::VarRef {
    let euro = r.machine.store_mut().new_var();
    r.machine.inject_call("GetPrice", &[Term::Int(4), Term::atom("client-1"), Term::atom("widget")], Some(euro)).unwrap();
    assert_eq!(r.settle(), Status::PartiallyTerminated);
    euro
}

#[test]
fn purchase_confirmed() {
    let p = program("purchase", PURCHASE_MODULES);
    let mut r = Runner::new(Machine::from_program(&p, 9), Stubs::default());
    let euro = quote(&mut r);
    assert_eq!(Term::from_store(r.machine.store(), euro).unwrap(), Term::Float(10.0));
    r.advance(1000);
    let done = r.machine.store_mut().new_var();
    r.machine.inject_call("Buy", &[Term::Int(4), Term::atom("client-1"), Term::atom("widget"), Term::atom("Yes")], Some(done)).unwrap();
    r.settle();
    assert_eq!(Term::from_store(r.machine.store(), done).unwrap(), Term::atom("unit"));
    assert_eq!(r.machine.global_term("Outcome"), Some(Term::atom("confirmed")));
    let receipt = r.machine.global_term("Confirmation").unwrap();
    assert_eq!(receipt.get("bank"), Some(&Term::atom("bk-9")));
    assert_eq!(r.commits(), &[Term::atom("client-1")]);
    assert_eq!(r.advance(5000), Status::Terminated);
    assert_eq!(r.machine.global_term("Outcome"), Some(Term::atom("confirmed")));
}

#[test]
fn purchase_times_out() {
    let p = program("purchase", PURCHASE_MODULES);
    let mut r = Runner::new(Machine::from_program(&p, 9), Stubs::default());
    quote(&mut r);
    r.advance(2999);
    assert_eq!(r.machine.global_term("Outcome"), None);
    r.advance(1);
    assert_eq!(r.machine.global_term("Outcome"), Some(Term::atom("timeout")));
    assert!(r.calls().iter().any(|c| c.module == "Client" && c.op == "notify"));
    assert!(r.commits().is_empty());
}

#[test]
fn watertank_streams_changes() {
    let p = program("watertank", &["Tank"]);
    let stubs = Stubs { levels: vec![(60_000, 100), (120_000, 102), (180_000, 106), (240_000, 107), (300_000, 113)] };
    let mut r = Runner::new(Machine::from_program(&p, 2), stubs);
    let stream = r.machine.store_mut().new_var();
    r.machine.inject_call("Subscribe", &[Term::atom("dev-1"), Term::atom("tank-1")], Some(stream)).unwrap();
    r.settle();
    r.machine.subscribe("s", stream);
    let mut seen = Vec::new();
    for _ in 0..5 {
        r.advance(60_000);
        for e in r.machine.poll_stream("s") {
            if let ozy_core::machine::StreamEvent::Item(t) = e {
                seen.push(t);
            }
        }
    }
    assert_eq!(seen, vec![Term::Int(0), Term::Int(100), Term::Int(106), Term::Int(113)]);
    r.machine.inject_call("Unsubscribe", &[Term::atom("tank-1"), Term::atom("unit")], None).unwrap();
    r.settle();
    assert!(matches!(r.machine.poll_stream("s")[..], [ozy_core::machine::StreamEvent::End]));
    assert_eq!(r.advance(60_000), Status::Terminated);
}
