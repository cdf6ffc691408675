use std::collections::BTreeMap;

use ozy_core::lang::{load_program, Feature, Resolver};
use ozy_core::machine::{Machine, NullHost, Status, StreamEvent};
use ozy_core::store::Store;
use ozy_core::term::Term;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn leaf() -> impl Strategy<Value = Term> {
    prop_oneof![
        any::<i64>().prop_map(Term::Int),
        any::<f64>().prop_filter("finite", |x| x.is_finite()).prop_map(Term::Float),
        any::<bool>().prop_map(Term::Bool),
        "[a-zA-Z0-9 :/._-]{0,12}".prop_map(|s| Term::atom(&s)),
    ]
}

fn ground() -> impl Strategy<Value = Term> {
    leaf().prop_recursive(4, 40, 5, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..5).prop_map(Term::list),
            ("[a-z][a-z0-9]{0,5}", prop::collection::vec(inner.clone(), 1..4)).prop_map(|(l, items)| Term::tuple(&l, items)),
            ("[a-z][a-zA-Z0-9]{0,5}", prop::collection::btree_map("[a-z][a-zA-Z]{0,5}", inner, 1..4)).prop_map(|(l, fs)| {
                let features: BTreeMap<Feature, Term> = fs.into_iter().map(|(k, v)| (Feature::Atom(k.as_str().into()), v)).collect();
                Term::Record { label: l.as_str().into(), features }
            }),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn json_encoding_is_a_bijection(t in ground()) {
        prop_assert_eq!(Term::from_json(&t.to_json()).unwrap(), t.clone());
        let text = t.to_json_text();
        prop_assert_eq!(Term::from_json_text(&text).unwrap(), t.clone());
        // Encoding the decoded value reproduces the same bytes.
        prop_assert_eq!(Term::from_json_text(&text).unwrap().to_json_text(), text);
        let mut s = Store::new();
        let v = t.to_store(&mut s);
        prop_assert_eq!(Term::from_store(&s, v).unwrap(), t);
    }
}

#[test]
fn mapping_examples() {
    let cset = Term::record("cset", [("product", Term::atom("widget")), ("quantity", Term::Int(3))]);
    assert_eq!(cset.to_json_text(), r#"{"$label":"cset","product":"widget","quantity":3}"#);
    assert_eq!(Term::nil().to_json_text(), "[]");
    assert_eq!(Term::from_json_text("[]").unwrap(), Term::nil());
    assert_eq!(Term::Float(2.0).to_json_text(), "2.0");
    assert_eq!(Term::from_json_text("2.0").unwrap(), Term::Float(2.0));
    assert_eq!(Term::from_json_text("2").unwrap(), Term::Int(2));
    assert_eq!(Term::record("r", [("a", Term::Int(1))]).to_json_text(), r#"{"a":1}"#);
    assert!(Term::from_json_text(r#"{"a":1,"a":2}"#).is_err());
    assert!(Term::from_json_text("null").is_err());
}

const COPY: &str = "
proc {Copy Ls Xs}
    case Ls
    of nil then Xs = nil
    [] H|T then Xr in
        Xs = H|Xr
        {Copy T Xr}
    end
end
";

#[test]
fn streams_deliver_each_cell_once_in_order() {
    let p = load_program("copy", COPY, "copy.oz", &Resolver::default()).unwrap();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: Vec<Term> = (0..1000).map(|i| if rng.random_bool(0.8) { Term::Int(rng.random_range(-1000..1000)) } else { Term::atom(&format!("a{i}")) }).collect();
        let mut m = Machine::from_program(&p, seed);
        m.run_to_quiescence(1_000, &mut NullHost { now: 0 });
        let out = m.store_mut().new_var();
        m.inject_call("Copy", &[Term::list(items.clone())], Some(out)).unwrap();
        m.subscribe("s", out);
        let mut seen = Vec::new();
        let mut ends = 0;
        loop {
            let status = m.run_slice(rng.random_range(1..60), &mut NullHost { now: 0 });
            for e in m.poll_stream("s") {
                match e {
                    StreamEvent::Item(t) => seen.push(t),
                    StreamEvent::End => ends += 1,
                }
            }
            if status != Status::PartiallyActive {
                break;
            }
        }
        assert!(m.poll_stream("s").is_empty());
        assert_eq!(ends, 1, "seed {seed}");
        assert_eq!(seen, items, "seed {seed}");
    }
}
