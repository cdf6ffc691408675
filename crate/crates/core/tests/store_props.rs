use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use ozy_core::lang::Feature;
use ozy_core::store::{Entailment, StateKind, Store, Value, VarRef, VarState};
use proptest::prelude::*;

/// Finite trees over a pool of shared variables.
#[derive(Debug, Clone)]
enum T {
    Var(usize),
    Int(i64),
    Atom(&'static str),
    Rec(&'static str, Vec<T>),
}

const POOL: usize = 4;

fn tree() -> impl Strategy<Value = T> {
    let leaf = prop_oneof![(0..POOL).prop_map(T::Var), (0i64..3).prop_map(T::Int), prop_oneof![Just("a"), Just("b")].prop_map(T::Atom)];
    leaf.prop_recursive(3, 16, 3, |inner| (prop_oneof![Just("f"), Just("g")], prop::collection::vec(inner, 1..3)).prop_map(|(l, c)| T::Rec(l, c)))
}

fn build(s: &mut Store, pool: &[VarRef], t: &T) -> VarRef {
    match t {
        T::Var(i) => pool[*i],
        T::Int(i) => s.new_determined(Value::Int(*i)),
        T::Atom(a) => s.new_determined(Value::atom(a)),
        T::Rec(l, cs) => {
            let args: Vec<VarRef> = cs.iter().map(|c| build(s, pool, c)).collect();
            let v = s.make_tuple(l, &args);
            s.new_determined(v)
        }
    }
}

fn setup(a: &T, b: &T) -> (Store, Vec<VarRef>, VarRef, VarRef) {
    let mut s = Store::new();
    let pool: Vec<VarRef> = (0..POOL).map(|_| s.new_var()).collect();
    let va = build(&mut s, &pool, a);
    let vb = build(&mut s, &pool, b);
    (s, pool, va, vb)
}

/// Coinductive equality of two rational trees held in different stores.
/// Unbound variables must correspond one-to-one.
fn bisimilar(s1: &Store, s2: &Store, pairs: &[(VarRef, VarRef)]) -> bool {
    let mut seen = HashSet::new();
    let mut fwd: HashMap<VarRef, VarRef> = HashMap::new();
    let mut back: HashMap<VarRef, VarRef> = HashMap::new();
    let mut todo: Vec<(VarRef, VarRef)> = pairs.to_vec();
    while let Some((a, b)) = todo.pop() {
        let (a, b) = (s1.find(a), s2.find(b));
        if !seen.insert((a, b)) {
            continue;
        }
        match (s1.state(a), s2.state(b)) {
            (VarState::Unbound(_), VarState::Unbound(_)) => {
                if *fwd.entry(a).or_insert(b) != b || *back.entry(b).or_insert(a) != a {
                    return false;
                }
            }
            (VarState::Determined(Value::Record(r1)), VarState::Determined(Value::Record(r2))) => {
                if r1.label != r2.label || r1.features.keys().ne(r2.features.keys()) {
                    return false;
                }
                todo.extend(r1.features.values().copied().zip(r2.features.values().copied()));
            }
            (VarState::Determined(x), VarState::Determined(y)) => {
                if x != y {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}

fn observe(s: &Store, vs: &[VarRef]) -> Vec<String> {
    vs.iter().map(|v| s.show(*v)).collect()
}

/// Reference unifier on trees: substitution map with a pair memo.
mod oracle {
    use super::T;
    use std::collections::{HashMap, HashSet};

    #[derive(Debug, Clone, PartialEq)]
    pub enum N {
        Var(usize),
        Int(i64),
        Atom(&'static str),
        Rec(&'static str, Vec<usize>),
    }

    pub struct Graph {
        pub nodes: Vec<N>,
        pub subst: HashMap<usize, usize>,
    }

    impl Graph {
        pub fn new(pool: usize) -> Graph {
            Graph { nodes: (0..pool).map(N::Var).collect(), subst: HashMap::new() }
        }

        pub fn add(&mut self, t: &T) -> usize {
            let n = match t {
                T::Var(i) => return *i,
                T::Int(i) => N::Int(*i),
                T::Atom(a) => N::Atom(a),
                T::Rec(l, cs) => N::Rec(l, cs.iter().map(|c| self.add(c)).collect()),
            };
            self.nodes.push(n);
            self.nodes.len() - 1
        }

        pub fn walk(&self, mut i: usize) -> usize {
            while let Some(j) = self.subst.get(&i) {
                i = *j;
            }
            i
        }

        pub fn unify(&mut self, a: usize, b: usize) -> bool {
            let mut seen = HashSet::new();
            let mut todo = vec![(a, b)];
            while let Some((x, y)) = todo.pop() {
                let (x, y) = (self.walk(x), self.walk(y));
                if x == y || !seen.insert((x, y)) {
                    continue;
                }
                match (self.nodes[x].clone(), self.nodes[y].clone()) {
                    (N::Var(_), _) => {
                        self.subst.insert(x, y);
                    }
                    (_, N::Var(_)) => {
                        self.subst.insert(y, x);
                    }
                    (N::Rec(l1, c1), N::Rec(l2, c2)) => {
                        if l1 != l2 || c1.len() != c2.len() {
                            return false;
                        }
                        todo.extend(c1.into_iter().zip(c2));
                    }
                    (p, q) => {
                        if p != q {
                            return false;
                        }
                    }
                }
            }
            true
        }

        /// Outermost shape of a node after substitution.
        pub fn head(&self, i: usize) -> String {
            match &self.nodes[self.walk(i)] {
                N::Var(_) => "_".into(),
                N::Int(i) => i.to_string(),
                N::Atom(a) => a.to_string(),
                N::Rec(l, c) => format!("{l}/{}", c.len()),
            }
        }
    }

}

fn store_head(s: &Store, v: VarRef) -> String {
    match s.state(s.find(v)) {
        VarState::Unbound(_) => "_".into(),
        VarState::Determined(Value::Int(i)) => i.to_string(),
        VarState::Determined(Value::Atom(a)) => a.to_string(),
        VarState::Determined(Value::Record(r)) => format!("{}/{}", r.label, r.features.len()),
        other => format!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn unify_is_symmetric(a in tree(), b in tree()) {
        let (mut s1, p1, a1, b1) = setup(&a, &b);
        let (mut s2, p2, a2, b2) = setup(&a, &b);
        let o1 = s1.unify(a1, b1);
        let o2 = s2.unify(b2, a2);
        prop_assert_eq!(o1.failure.is_some(), o2.failure.is_some());
        if o1.failure.is_none() {
            let mut pairs: Vec<(VarRef, VarRef)> = p1.iter().copied().zip(p2.iter().copied()).collect();
            pairs.push((a1, b2));
            prop_assert!(bisimilar(&s1, &s2, &pairs));
            prop_assert_eq!(s1.entailed(a1, b1), Entailment::True);
        }
    }

    #[test]
    fn unify_is_idempotent(a in tree(), b in tree()) {
        let (mut s, pool, va, vb) = setup(&a, &b);
        let first = s.unify(va, vb);
        if first.failure.is_none() {
            let before = observe(&s, &pool);
            let again = s.unify(va, vb);
            prop_assert!(again.failure.is_none());
            prop_assert!(again.wakes.is_empty());
            prop_assert_eq!(observe(&s, &pool), before);
        }
    }

    #[test]
    fn unify_matches_reference(a in tree(), b in tree()) {
        let (mut s, pool, va, vb) = setup(&a, &b);
        let mut g = oracle::Graph::new(POOL);
        let (ga, gb) = (g.add(&a), g.add(&b));
        let expected = g.unify(ga, gb);
        let got = s.unify(va, vb);
        prop_assert_eq!(got.failure.is_none(), expected);
        if expected {
            for (i, v) in pool.iter().enumerate() {
                prop_assert_eq!(store_head(&s, *v), g.head(i));
            }
        }
    }

    #[test]
    fn states_change_monotonically(a in tree(), b in tree(), c in tree(), fail_at in 0..POOL) {
        let mut s = Store::new();
        s.enable_history();
        let pool: Vec<VarRef> = (0..POOL).map(|_| s.new_var()).collect();
        let va = build(&mut s, &pool, &a);
        let vb = build(&mut s, &pool, &b);
        let vc = build(&mut s, &pool, &c);
        let mut determined: HashMap<VarRef, String> = HashMap::new();
        let snapshot_values = |s: &Store, determined: &mut HashMap<VarRef, String>| -> Result<(), TestCaseError> {
            for i in 0..s.len() as u64 {
                let v = VarRef(i);
                if let Some(VarState::Determined(_)) = s.raw_state(v) {
                    let shown = s.show(v);
                    if let Some(prev) = determined.get(&v) {
                        // Unbound subterms may get bound later; the head may not change.
                        prop_assert_eq!(prev.split('(').next(), shown.split('(').next());
                    }
                    determined.insert(v, shown);
                }
            }
            Ok(())
        };
        snapshot_values(&s, &mut determined)?;
        s.unify(va, vb);
        snapshot_values(&s, &mut determined)?;
        let _ = s.set_failed(pool[fail_at], Value::atom("boom"));
        snapshot_values(&s, &mut determined)?;
        s.unify(vb, vc);
        snapshot_values(&s, &mut determined)?;
        let mut per_var: BTreeMap<VarRef, Vec<StateKind>> = BTreeMap::new();
        for (v, k) in s.history() {
            per_var.entry(*v).or_default().push(*k);
        }
        for (v, ks) in per_var {
            let first_final = ks.iter().position(|k| *k != StateKind::Unbound);
            if let Some(i) = first_final {
                let fin = ks[i];
                for k in &ks[i..] {
                    // Path compression re-points aliases; nothing else may change.
                    prop_assert!(*k == fin, "{v}: {ks:?}");
                }
            }
        }
    }

    #[test]
    fn failed_value_reaches_all_waiters(n in 1usize..40) {
        let mut s = Store::new();
        let v = s.new_var();
        let w = s.new_var();
        s.unify(v, w);
        for sid in 0..n as u64 {
            s.wait(sid, if sid % 2 == 0 { v } else { w });
        }
        let out = s.set_failed(w, Value::atom("boom")).unwrap();
        prop_assert_eq!(out.wakes, (0..n as u64).collect::<BTreeSet<_>>());
        for x in [v, w] {
            let failed = matches!(s.state(s.find(x)), VarState::Failed(_));
            prop_assert!(failed);
        }
        let late = s.wait(99, v);
        let raised = matches!(late, ozy_core::store::WaitOutcome::Raised(_));
        prop_assert!(raised);
    }

    #[test]
    fn wakes_are_exactly_the_suspended(n in 0usize..30, m in 0usize..30) {
        let mut s = Store::new();
        let a = s.new_var();
        let b = s.new_var();
        for sid in 0..n as u64 { s.wait(sid, a); }
        for sid in 0..m as u64 { s.wait(100 + sid, b); }
        let merged = s.unify(a, b);
        prop_assert!(merged.wakes.is_empty());
        let one = s.new_determined(Value::Int(1));
        let out = s.unify(b, one);
        let expected: BTreeSet<u64> = (0..n as u64).chain((0..m as u64).map(|i| 100 + i)).collect();
        prop_assert_eq!(out.wakes, expected);
    }

    #[test]
    fn by_need_fires_at_most_once(waits in prop::collection::vec(0usize..3, 1..20)) {
        let mut s = Store::new();
        let v = s.new_var();
        let alias = s.new_var();
        let p = s.new_determined(Value::atom("gen"));
        s.install_by_need(v, p).unwrap();
        s.unify(v, alias);
        let mut fired = 0;
        for (sid, kind) in waits.iter().enumerate() {
            let target = if sid % 2 == 0 { v } else { alias };
            let trig = match kind {
                0 => match s.wait(sid as u64, target) {
                    ozy_core::store::WaitOutcome::Suspended { trigger, .. } => trigger,
                    _ => None,
                },
                1 => s.need(target),
                _ => { let _ = s.entailed(target, p); None }
            };
            fired += trig.is_some() as usize;
        }
        prop_assert!(fired <= 1);
        prop_assert_eq!(fired, waits.iter().any(|k| *k < 2) as usize);
    }
}

/// A rational tree: node i has a label and child node indices.
#[derive(Debug, Clone)]
struct Graph {
    nodes: Vec<(&'static str, Vec<usize>)>,
}

fn rational_tree() -> impl Strategy<Value = Graph> {
    (1usize..=20).prop_flat_map(|n| {
        prop::collection::vec((prop_oneof![Just("f"), Just("g")], prop::collection::vec(0..n, 0..3)), n).prop_map(|nodes| Graph { nodes })
    })
}

fn build_graph(s: &mut Store, g: &Graph, relabel: Option<usize>) -> Vec<VarRef> {
    let vars: Vec<VarRef> = g.nodes.iter().map(|_| s.new_var()).collect();
    for (i, (label, kids)) in g.nodes.iter().enumerate() {
        let label = if relabel == Some(i) { "h" } else { label };
        let args: Vec<VarRef> = kids.iter().map(|k| vars[*k]).collect();
        let value = s.make_tuple(label, &args);
        let out = s.bind_value(vars[i], value);
        assert!(out.failure.is_none());
    }
    vars
}

fn reachable_nodes(g: &Graph) -> HashSet<usize> {
    let mut seen = HashSet::new();
    let mut todo = vec![0];
    while let Some(i) = todo.pop() {
        if seen.insert(i) {
            todo.extend(g.nodes[i].1.iter().copied());
        }
    }
    seen
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn isomorphic_cyclic_trees_unify(g in rational_tree()) {
        let mut s = Store::new();
        let a = build_graph(&mut s, &g, None);
        let b = build_graph(&mut s, &g, None);
        prop_assert_eq!(s.entailed(a[0], b[0]), Entailment::True);
        let out = s.unify(a[0], b[0]);
        prop_assert!(out.failure.is_none());
        prop_assert_eq!(s.entailed(a[0], b[0]), Entailment::True);
    }

    #[test]
    fn relabelled_reachable_node_conflicts(g in rational_tree(), pick in 0usize..20) {
        let reach: Vec<usize> = { let mut r: Vec<_> = reachable_nodes(&g).into_iter().collect(); r.sort(); r };
        let target = reach[pick % reach.len()];
        let mut s = Store::new();
        let a = build_graph(&mut s, &g, None);
        let b = build_graph(&mut s, &g, Some(target));
        prop_assert_eq!(s.entailed(a[0], b[0]), Entailment::False);
        prop_assert!(s.unify(a[0], b[0]).failure.is_some());
    }
}

/// Terms for the entailment oracle: same skeleton on both sides, leaves are
/// 1, 2 or one of the pool variables.
#[derive(Debug, Clone)]
enum E {
    Leaf(Leaf),
    Rec(&'static str, Vec<E>),
}

#[derive(Debug, Clone, Copy)]
enum Leaf {
    Int(i64),
    Var(usize),
}

fn leaf() -> impl Strategy<Value = Leaf> {
    prop_oneof![(1i64..=2).prop_map(Leaf::Int), (0..3usize).prop_map(Leaf::Var)]
}

#[derive(Debug, Clone)]
enum Skel {
    Leaf,
    Node(Vec<Skel>),
}

fn skel() -> impl Strategy<Value = Skel> {
    Just(Skel::Leaf).prop_recursive(2, 8, 3, |inner| prop::collection::vec(inner, 1..3).prop_map(Skel::Node))
}

fn fill(sk: &Skel) -> BoxedStrategy<E> {
    match sk {
        Skel::Leaf => leaf().prop_map(E::Leaf).boxed(),
        Skel::Node(kids) => {
            let parts: Vec<BoxedStrategy<E>> = kids.iter().map(fill).collect();
            (prop_oneof![Just("f"), Just("g")], parts).prop_map(|(l, c)| E::Rec(l, c)).boxed()
        }
    }
}

fn pair() -> impl Strategy<Value = (E, E, Vec<Option<i64>>)> {
    skel().prop_flat_map(|sk| (fill(&sk), fill(&sk), prop::collection::vec(prop_oneof![Just(None), (1i64..=2).prop_map(Some)], 3)))
}

fn eval(e: &E, env: &[i64]) -> String {
    match e {
        E::Leaf(Leaf::Int(i)) => i.to_string(),
        E::Leaf(Leaf::Var(v)) => env[*v].to_string(),
        E::Rec(l, c) => format!("{l}({})", c.iter().map(|x| eval(x, env)).collect::<Vec<_>>().join(" ")),
    }
}

fn build_e(s: &mut Store, pool: &[VarRef], e: &E) -> VarRef {
    match e {
        E::Leaf(Leaf::Int(i)) => s.new_determined(Value::Int(*i)),
        E::Leaf(Leaf::Var(v)) => pool[*v],
        E::Rec(l, c) => {
            let args: Vec<VarRef> = c.iter().map(|x| build_e(s, pool, x)).collect();
            let v = s.make_tuple(l, &args);
            s.new_determined(v)
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn entailment_matches_domain_oracle((a, b, preset) in pair()) {
        let mut s = Store::new();
        let pool: Vec<VarRef> = preset.iter().map(|p| match p {
            Some(i) => s.new_determined(Value::Int(*i)),
            None => s.new_var(),
        }).collect();
        let va = build_e(&mut s, &pool, &a);
        let vb = build_e(&mut s, &pool, &b);
        let free: Vec<usize> = (0..3).filter(|i| preset[*i].is_none()).collect();
        let (mut some, mut all) = (false, true);
        for mask in 0..(1u32 << free.len()) {
            let mut env: Vec<i64> = preset.iter().map(|p| p.unwrap_or(0)).collect();
            for (bit, i) in free.iter().enumerate() {
                env[*i] = 1 + ((mask >> bit) & 1) as i64;
            }
            let eq = eval(&a, &env) == eval(&b, &env);
            some |= eq;
            all &= eq;
        }
        let got = s.entailed(va, vb);
        match (all, some) {
            (true, _) => prop_assert_eq!(got, Entailment::True),
            (false, false) => prop_assert_eq!(got, Entailment::False),
            _ => {
                let unknown = matches!(got, Entailment::Unknown { .. });
                prop_assert!(unknown, "{got:?}");
            }
        }
    }
}

#[test]
fn feature_lookup_on_built_tuples() {
    let mut s = Store::new();
    let x = s.new_var();
    let r = s.make_tuple("f", &[x]);
    let Value::Record(rec) = r else { panic!() };
    assert_eq!(rec.get(&Feature::Int(1)), Some(x));
}
