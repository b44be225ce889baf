//! Fixture loading plus the exhaustive invariant suites shared by the
//! property and acceptance targets. Every suite panics on a violation and
//! returns a one-line summary of what it covered.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qpcheck::automaton::{parse_automaton, TreeAutomaton};
use qpcheck::oracle::{
    check_strong_equation, check_weak_equation, enumerate_shapes, enumerate_trees,
    find_strong_counterexample, EnumerationBudget,
};
use qpcheck::preservation::{
    construct_weak_query, strong_languages, strong_preserves, weak_preserves, CheckError,
    Construction, StrongDecision, StrongWitnessKind, WeakDecision, WitnessKind,
};
use qpcheck::query::{mark_query_automaton, parse_query, NormalQuery, Query};
use qpcheck::state::State;
use qpcheck::transducer::{parse_transducer, Fate, Transducer};
use qpcheck::tree::DataTree;

pub const BUDGET: usize = 1_000_000;

fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn fixture_text(name: &str) -> String {
    let path = fixture_path(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn fixture_query(name: &str) -> Query {
    parse_query(&fixture_text(name)).expect("fixture queries parse")
}

pub fn fixture_transducer(name: &str) -> Transducer {
    parse_transducer(&fixture_text(name)).expect("fixture transducers parse")
}

fn shapes(a: &TreeAutomaton, max_nodes: usize) -> Vec<DataTree> {
    enumerate_shapes(&a.alphabet, &EnumerationBudget::with_max_nodes(max_nodes))
        .expect("fixture alphabets enumerate")
}

/// Direct evaluation and run enumeration select the same position tuples on
/// every small proper tree, for every fixture query.
pub fn suite_eval_paths(max_nodes: usize) -> String {
    let budget = EnumerationBudget::with_max_nodes(max_nodes);
    let mut checked = 0usize;
    for name in ["fixA.rq", "fixB.rq", "fixC.rq", "fixCu.rq", "fixD.rq"] {
        let q = fixture_query(name);
        for t in enumerate_trees(&q.automaton.alphabet, &budget).unwrap() {
            let direct = q.eval(&t);
            let by_runs = q.eval_by_runs(&t, 1_000_000).unwrap();
            assert_eq!(direct, by_runs, "evaluation paths disagree for {name} on {t}");
            checked += 1;
        }
    }
    format!("evaluation paths agree on {checked} query-tree pairs")
}

/// Reduction and epsilon elimination keep membership unchanged, including on
/// automata with junk states and epsilon chains.
pub fn suite_reduction(max_nodes: usize) -> String {
    let with_epsilon = parse_automaton(
        "
        automaton loops
        sym f 2
        sym a 0
        state p q r dead stuck
        initial p
        rule p -> q
        rule q -> f(r, r)
        rule q -> a
        rule r -> q
        rule r -> p
        rule dead -> f(dead, dead)
        rule stuck -> f(p, q)
    ",
    )
    .unwrap();
    let mut checked = 0usize;
    let eliminated = with_epsilon.eliminate_epsilon();
    for t in shapes(&with_epsilon, max_nodes) {
        assert_eq!(
            with_epsilon.accepts(&t),
            eliminated.accepts(&t),
            "epsilon elimination changed membership of {t}"
        );
        checked += 1;
    }
    let base = fixture_query("fixB.rq").automaton;
    let complement = base.complement(BUDGET).unwrap();
    let product = base.product(&complement).unwrap();
    let union = base.union(&complement).unwrap().eliminate_epsilon();
    for a in [&base, &complement, &product, &union] {
        let reduced = a.reduce();
        for t in shapes(a, max_nodes) {
            assert_eq!(a.accepts(&t), reduced.accepts(&t), "reduction changed membership of {t}");
            checked += 1;
        }
    }
    format!("reduction and epsilon elimination preserve membership on {checked} trees")
}

/// Product, union, and complement agree with the boolean combination of the
/// operand memberships on every small tree.
pub fn suite_boolean_algebra(max_nodes: usize) -> String {
    let froot = parse_automaton(
        "
        automaton froot
        sym f 2
        sym g 2
        sym a 0
        state s t
        initial s
        rule s -> f(t, t)
        rule t -> f(t, t)
        rule t -> g(t, t)
        rule t -> a
    ",
    )
    .unwrap();
    let chain_top = parse_automaton(
        "
        automaton chaintop
        sym A 2
        sym B 2
        sym C 2
        sym e 0
        state u v
        initial u
        rule u -> A(v, v)
        rule u -> B(v, v)
        rule v -> A(v, v)
        rule v -> B(v, v)
        rule v -> C(v, v)
        rule v -> e
    ",
    )
    .unwrap();
    let cases = [
        (fixture_query("fixB.rq").automaton, froot),
        (fixture_query("fixC.rq").automaton, chain_top),
    ];
    let mut checked = 0usize;
    for (x, y) in &cases {
        let both = x.product(y).unwrap();
        let either = x.union(y).unwrap().eliminate_epsilon();
        let not_x = x.complement(BUDGET).unwrap();
        for t in shapes(&either, max_nodes) {
            let in_x = x.accepts(&t);
            let in_y = y.accepts(&t);
            assert_eq!(both.accepts(&t), in_x && in_y, "product wrong on {t}");
            assert_eq!(either.accepts(&t), in_x || in_y, "union wrong on {t}");
            assert_eq!(not_x.accepts(&t), !in_x, "complement wrong on {t}");
            checked += 1;
        }
    }
    format!("boolean operations match membership logic on {checked} trees")
}

/// Forward images contain exactly the transforms of accepted sources, and
/// preimages contain exactly the sources whose transform the target automaton
/// accepts.
pub fn suite_type_inference(max_nodes: usize) -> String {
    let pairs = [
        ("fixB.rq", "fixB.tt"),
        ("fixB.rq", "fixBswap.tt"),
        ("fixB.rq", "fixID.tt"),
        ("fixC.rq", "fixC.tt"),
        ("fixD.rq", "fixD.tt"),
    ];
    let mut checked = 0usize;
    for (qn, tn) in pairs {
        let q = fixture_query(qn);
        let tr = fixture_transducer(tn);
        let stripped = tr.strip_transducer();
        let a = &q.automaton;
        let forward = tr.forward_type(a);
        for t in shapes(a, max_nodes) {
            if !a.accepts(&t) {
                continue;
            }
            if let Ok(u) = stripped.apply(&t) {
                assert!(forward.accepts(&u), "{tn}: image of accepted {t} missing from forward type");
                checked += 1;
            }
        }
        let output_all = TreeAutomaton::universal(&tr.output_alphabet);
        for u in shapes(&output_all, max_nodes) {
            if !forward.accepts(&u) {
                continue;
            }
            let single = TreeAutomaton::singleton(&u, &tr.output_alphabet);
            let sources = stripped.inverse_type(&single).product(a).unwrap().reduce();
            assert!(
                !sources.is_empty(),
                "{tn}: forward type contains {u} but no accepted source produces it"
            );
            checked += 1;
        }
        let back = tr.inverse_type(&forward);
        for t in shapes(a, max_nodes) {
            let maps_in = stripped.apply(&t).map(|u| forward.accepts(&u)).unwrap_or(false);
            assert_eq!(
                back.accepts(&t),
                maps_in,
                "{tn}: inverse type disagrees with applying the transducer on {t}"
            );
            checked += 1;
        }
    }
    format!("type inference matches per-tree application on {checked} memberships")
}

/// The deletion automaton's bottom states land exactly on the positions the
/// instrumented apply reports as deleted, and it accepts exactly the domain.
pub fn suite_deletion_fates(max_nodes: usize) -> String {
    let mut checked = 0usize;
    for tn in ["fixB.tt", "fixBswap.tt", "fixC.tt", "fixD.tt", "fixID.tt"] {
        let tr = fixture_transducer(tn);
        let del = tr.deletion_automaton();
        let domain_all = TreeAutomaton::universal(&tr.input_alphabet);
        for t in shapes(&domain_all, max_nodes) {
            let runs = del.enumerate_runs(&t, 1_000_000).unwrap();
            match tr.apply_traced(&t.with_preorder_values()) {
                Ok((_, trace)) => {
                    assert_eq!(runs.len(), 1, "{tn}: deletion labeling of {t} is not unique");
                    let run = &runs[0];
                    assert_eq!(trace.len(), run.0.len());
                    for (pos, fate) in &trace {
                        let bottom = run.0.get(pos) == Some(&State::Bottom);
                        assert_eq!(
                            matches!(fate, Fate::Deleted),
                            bottom,
                            "{tn}: fate and bottom state disagree at {pos} of {t}"
                        );
                    }
                }
                Err(_) => {
                    assert!(runs.is_empty(), "{tn}: deletion automaton accepts {t} outside the domain");
                }
            }
            checked += 1;
        }
    }
    format!("deletion labels match traced fates on {checked} trees")
}

fn single_tuple_queries() -> Vec<Query> {
    let mut out = vec![
        fixture_query("fixB.rq"),
        fixture_query("fixD.rq"),
        fixture_query("fixC.rq"),
    ];
    let multi = fixture_query("fixCu.rq");
    for s in &multi.selections {
        out.push(Query::new(multi.automaton.clone(), multi.arity, [s.clone()]).unwrap());
    }
    out
}

/// Normalization keeps the selected positions unchanged and produces classes
/// that are pairwise disjoint and hit exactly once per accepting run.
pub fn suite_normalization(max_nodes: usize) -> String {
    let mut checked = 0usize;
    for q in single_tuple_queries() {
        let nf = q.normalize().unwrap();
        for (i, ci) in nf.selection_classes.iter().enumerate() {
            for cj in nf.selection_classes.iter().skip(i + 1) {
                assert!(ci.intersection(cj).next().is_none(), "selection classes overlap");
            }
        }
        let budget = EnumerationBudget::with_max_nodes(max_nodes);
        for t in enumerate_trees(&q.automaton.alphabet, &budget).unwrap() {
            assert_eq!(nf.eval(&t), q.eval(&t), "normalization changed the selection on {t}");
            checked += 1;
        }
        for t in shapes(&nf.automaton, max_nodes) {
            for run in nf.automaton.enumerate_runs(&t, 1_000_000).unwrap() {
                for class in &nf.selection_classes {
                    let hits = run.0.values().filter(|s| class.contains(s)).count();
                    assert_eq!(hits, 1, "class hit {hits} times in a run on {t}");
                }
            }
            checked += 1;
        }
    }
    format!("normalization preserves selections and fires once on {checked} trees")
}

const STRONG_YES_PAIRS: [(&str, &str); 7] = [
    ("fixB.rq", "fixBswap.tt"),
    ("fixB.rq", "fixID.tt"),
    ("fixC.rq", "fixC.tt"),
    ("fixA.rq", "fixID.tt"),
    ("fixCu.rq", "fixID.tt"),
    ("fixC.rq", "fixIDc.tt"),
    ("fixCu.rq", "fixIDc.tt"),
];

/// Wherever the strong check answers yes, the constructed target query
/// recovers the source values from every single transformed tree.
pub fn suite_equation_one(max_nodes: usize) -> String {
    let mut checked = 0usize;
    for (qn, tn) in STRONG_YES_PAIRS {
        let q = fixture_query(qn);
        let tr = fixture_transducer(tn);
        let d = strong_preserves(&q, &tr, BUDGET).unwrap();
        assert!(d.preserved, "expected a strong yes for {qn} with {tn}");
        let Construction::Built { query: target, .. } =
            construct_weak_query(&q, &tr, BUDGET).unwrap()
        else {
            panic!("strong yes implies the target query builds");
        };
        let o =
            check_strong_equation(&q, &target, &tr, &EnumerationBudget::with_max_nodes(max_nodes))
                .unwrap();
        assert!(o.checked > 0);
        assert!(o.ok(), "{qn} with {tn}: {:?}", o.discrepancies);
        checked += o.checked;
    }
    format!("per-source value recovery verified on {checked} domain trees")
}

/// Wherever the weak check answers yes, the constructed target query's
/// values on each output equal the pooled source values over its preimages.
pub fn suite_equation_two(max_nodes: usize) -> String {
    let pairs = [
        ("fixB.rq", "fixB.tt"),
        ("fixB.rq", "fixBswap.tt"),
        ("fixB.rq", "fixID.tt"),
        ("fixC.rq", "fixC.tt"),
        ("fixA.rq", "fixID.tt"),
        ("fixCu.rq", "fixID.tt"),
    ];
    let mut checked = 0usize;
    let mut warned = 0usize;
    for (qn, tn) in pairs {
        let q = fixture_query(qn);
        let tr = fixture_transducer(tn);
        let d = weak_preserves(&q, &tr, BUDGET).unwrap();
        assert!(d.preserved, "expected a weak yes for {qn} with {tn}");
        let Construction::Built { query: target, .. } =
            construct_weak_query(&q, &tr, BUDGET).unwrap()
        else {
            panic!("weak yes implies the target query builds");
        };
        let o =
            check_weak_equation(&q, &target, &tr, &EnumerationBudget::with_max_nodes(max_nodes))
                .unwrap();
        assert!(o.checked > 0);
        assert!(o.ok(), "{qn} with {tn}: {:?}", o.discrepancies);
        checked += o.checked;
        warned += o.warnings.len();
    }
    format!("pooled value equation verified on {checked} outputs ({warned} one-sided warnings)")
}

const TWO_TUPLES: &str = "
    automaton twosel
    sym f 2
    sym g 2
    sym a 0
    state p0 pl pr
    initial p0
    rule p0 -> f(pl, pr)
    rule p0 -> g(pl, pr)
    rule pl -> a
    rule pr -> a
    select (pl, pr)
    select (pr, pl)
";

const TWO_UNARY: &str = "
    automaton twouni
    sym f 2
    sym g 2
    sym a 0
    state p0 pl pr
    initial p0
    rule p0 -> f(pl, pr)
    rule p0 -> g(pl, pr)
    rule pl -> a
    rule pr -> a
    select (pl)
    select (pr)
";

const DROP_RIGHT: &str = "
    transducer drop
    insym f 2
    insym g 2
    insym a 0
    outsym k 1
    outsym b 0
    state q
    initial q
    rule q (f z x1 x2) -> (k^z (q x1))
    rule q (g z x1 x2) -> (k^z (q x1))
    rule q (a z) -> (b^z)
";

/// The multi-tuple verdict equals the conjunction of the single-tuple
/// verdicts, including on cases where the tuples disagree.
pub fn suite_decomposition() -> String {
    let cases: Vec<(Query, Transducer)> = vec![
        (fixture_query("fixCu.rq"), fixture_transducer("fixC.tt")),
        (fixture_query("fixCu.rq"), fixture_transducer("fixID.tt")),
        (parse_query(TWO_TUPLES).unwrap(), parse_transducer(DROP_RIGHT).unwrap()),
        (parse_query(TWO_UNARY).unwrap(), parse_transducer(DROP_RIGHT).unwrap()),
        (parse_query(TWO_TUPLES).unwrap(), fixture_transducer("fixB.tt")),
    ];
    let mut mixed = 0usize;
    for (q, tr) in &cases {
        let combined = weak_preserves(q, tr, BUDGET).unwrap().preserved;
        let mut verdicts = Vec::new();
        for s in &q.selections {
            let qs = Query::new(q.automaton.clone(), q.arity, [s.clone()]).unwrap();
            verdicts.push(weak_preserves(&qs, tr, BUDGET).unwrap().preserved);
        }
        assert_eq!(
            combined,
            verdicts.iter().all(|v| *v),
            "per-tuple conjunction differs from the combined verdict"
        );
        if verdicts.iter().any(|v| *v) && verdicts.iter().any(|v| !*v) {
            mixed += 1;
        }
    }
    assert!(mixed > 0, "the cases never exercised a mixed per-tuple outcome");
    format!("per-tuple decomposition holds on {} cases ({mixed} mixed)", cases.len())
}

fn random_query(rng: &mut ChaCha8Rng) -> Option<Query> {
    let n_states = rng.gen_range(2..=4usize);
    let mut text = String::from("automaton rnd\nsym f 2\nsym g 1\nsym a 0\nstate");
    for i in 0..n_states {
        text += &format!(" p{i}");
    }
    text += "\ninitial p0\n";
    for i in 0..n_states {
        for _ in 0..rng.gen_range(1..=2) {
            match rng.gen_range(0..5) {
                0 | 1 => {
                    text += &format!(
                        "rule p{i} -> f(p{}, p{})\n",
                        rng.gen_range(0..n_states),
                        rng.gen_range(0..n_states)
                    );
                }
                2 => text += &format!("rule p{i} -> g(p{})\n", rng.gen_range(0..n_states)),
                _ => text += &format!("rule p{i} -> a\n"),
            }
        }
    }
    let arity = if rng.gen_bool(0.5) { 1 } else { 2 };
    for _ in 0..rng.gen_range(1..=2) {
        if arity == 1 {
            text += &format!("select (p{})\n", rng.gen_range(0..n_states));
        } else {
            let i = rng.gen_range(0..n_states);
            let j = (i + rng.gen_range(1..n_states)) % n_states;
            text += &format!("select (p{i}, p{j})\n");
        }
    }
    let q = parse_query(&text).ok()?;
    if q.automaton.is_empty() {
        return None;
    }
    for s in &q.selections {
        for p in s {
            if !q.automaton.states.contains(p) {
                return None;
            }
        }
    }
    Some(q)
}

fn random_transducer(rng: &mut ChaCha8Rng) -> Transducer {
    let n_states = rng.gen_range(1..=2usize);
    let mut text = String::from(
        "transducer rnd\ninsym f 2\ninsym g 1\ninsym a 0\noutsym h 2\noutsym k 1\noutsym b 0\nstate",
    );
    for i in 0..n_states {
        text += &format!(" q{i}");
    }
    text += "\ninitial q0\n";
    for st in 0..n_states {
        for (sym, args) in [("f", " z x1 x2"), ("g", " z x1"), ("a", " z")] {
            if !rng.gen_bool(0.9) {
                continue;
            }
            let c1 = rng.gen_range(0..n_states);
            let c2 = rng.gen_range(0..n_states);
            let ctx = match sym {
                "f" => match rng.gen_range(0..10) {
                    0..=2 => format!("(h^z (q{c1} x1) (q{c2} x2))"),
                    3 | 4 => format!("(h^z (q{c1} x2) (q{c2} x1))"),
                    5 => format!("(h (q{c1} x1) (q{c2} x2))"),
                    6 => format!("(k^z (q{c1} x1))"),
                    7 => format!("(k^z (q{c1} x2))"),
                    8 => format!("(k (q{c1} x1))"),
                    _ => "(b^z)".to_string(),
                },
                "g" => match rng.gen_range(0..6) {
                    0..=2 => format!("(k^z (q{c1} x1))"),
                    3 => format!("(k (q{c1} x1))"),
                    4 => "(b^z)".to_string(),
                    _ => "(b)".to_string(),
                },
                _ => {
                    if rng.gen_bool(0.8) {
                        "(b^z)".to_string()
                    } else {
                        "(b)".to_string()
                    }
                }
            };
            text += &format!("rule q{st} ({sym}{args}) -> {ctx}\n");
        }
    }
    parse_transducer(&text).expect("generated transducer text parses")
}

fn certify_weak_witnesses(q: &Query, tr: &Transducer, d: &WeakDecision) {
    assert!(!d.witnesses.is_empty(), "a weak no carries at least one witness");
    for w in &d.witnesses {
        assert!(q.selections.contains(&w.tuple), "witness tuple is one of the selections");
        assert!(w.tuple.contains(&w.state), "witness state belongs to its tuple");
        let runs = q.automaton.enumerate_runs(&w.tree, 1_000_000).unwrap();
        assert!(
            runs.iter().any(|r| {
                r.0.get(&w.position) == Some(&w.state)
                    && w.tuple.iter().all(|p| r.0.values().any(|x| x == p))
            }),
            "some accepting run hits the tuple with {} at {}",
            w.state,
            w.position
        );
        let (_, trace) = tr
            .apply_traced(&w.tree.with_preorder_values())
            .expect("witness trees lie in the transducer domain");
        match &w.kind {
            WitnessKind::Deleted => {
                assert_eq!(
                    trace.get(&w.position),
                    Some(&Fate::Deleted),
                    "witness position is really deleted"
                );
            }
            WitnessKind::ValueErased { symbol } => {
                assert_eq!(
                    trace.get(&w.position),
                    Some(&Fate::Erased),
                    "witness position really loses its value"
                );
                assert_eq!(w.tree.label(&w.position), Some(symbol));
            }
        }
    }
}

fn certify_strong_witness(q: &Query, tr: &Transducer, d: &StrongDecision) {
    let w = d.witness.as_ref().expect("a strong no after a weak yes carries a marked witness");
    let normals: Vec<NormalQuery> = q
        .selections
        .iter()
        .map(|s| {
            Query::new(q.automaton.clone(), q.arity, [s.clone()])
                .unwrap()
                .normalize()
                .unwrap()
        })
        .collect();
    let marked = mark_query_automaton(&normals).unwrap();
    let langs = strong_languages(q, tr, BUDGET).unwrap();
    match w.kind {
        StrongWitnessKind::SpuriousMarking => {
            assert!(
                langs.comparison.accepts(&w.tree),
                "witness marking survives the round trip"
            );
            assert!(!marked.accepts(&w.tree), "witness marking is not a selection");
        }
        StrongWitnessKind::SelectionUnmatched => {
            assert!(marked.accepts(&w.tree), "witness marking is a selection");
            assert!(
                !langs.comparison.accepts(&w.tree),
                "witness marking fails the round trip"
            );
        }
    }
}

/// Runs the checks on randomized query-transducer instances, certifies every
/// witness semantically, and cross-checks the verdicts against the
/// enumeration oracles.
pub fn suite_random_instances(count: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enumeration = EnumerationBudget::with_max_nodes(5);
    let mut produced = 0usize;
    let mut weak_no = 0usize;
    let mut strong_no = 0usize;
    let mut budget_skips = 0usize;
    let mut oracle_checked = 0usize;
    while produced < count {
        let Some(q) = random_query(&mut rng) else { continue };
        let tr = random_transducer(&mut rng);
        let meet = q.automaton.product(&tr.domain_automaton()).unwrap().reduce();
        if meet.is_empty() {
            continue;
        }
        produced += 1;
        let weak = match weak_preserves(&q, &tr, BUDGET) {
            Ok(d) => d,
            Err(CheckError::Budget(_)) => {
                budget_skips += 1;
                continue;
            }
            Err(CheckError::Invalid(m)) => panic!("generated instance rejected: {m}"),
        };
        let strong = match strong_preserves(&q, &tr, BUDGET) {
            Ok(d) => d,
            Err(CheckError::Budget(_)) => {
                budget_skips += 1;
                continue;
            }
            Err(CheckError::Invalid(m)) => panic!("generated instance rejected: {m}"),
        };
        if strong.preserved {
            assert!(weak.preserved, "a strong yes implies a weak yes");
        }
        if !weak.preserved {
            weak_no += 1;
            certify_weak_witnesses(&q, &tr, &weak);
            assert!(!strong.preserved, "a weak no forces a strong no");
            continue;
        }
        let Construction::Built { query: target, .. } =
            construct_weak_query(&q, &tr, BUDGET).unwrap()
        else {
            panic!("weak yes implies the target query builds");
        };
        let o = check_weak_equation(&q, &target, &tr, &enumeration).unwrap();
        assert!(o.ok(), "pooled equation fails on a weak yes: {:?}", o.discrepancies);
        oracle_checked += o.checked;
        if strong.preserved {
            let o1 = check_strong_equation(&q, &target, &tr, &enumeration).unwrap();
            assert!(o1.ok(), "per-source equation fails on a strong yes: {:?}", o1.discrepancies);
            assert!(
                find_strong_counterexample(&q, &tr, &enumeration).unwrap().is_none(),
                "a strong yes admits no small collision"
            );
            oracle_checked += o1.checked;
        } else {
            strong_no += 1;
            certify_strong_witness(&q, &tr, &strong);
        }
    }
    assert!(weak_no >= 10, "want a healthy share of weak noes, got {weak_no}");
    assert!(strong_no >= 5, "want a healthy share of strong noes, got {strong_no}");
    assert!(budget_skips * 10 <= produced, "too many budget skips: {budget_skips}");
    format!(
        "{produced} random instances: {weak_no} weak noes and {strong_no} strong noes certified, \
         {oracle_checked} oracle comparisons, {budget_skips} budget skips"
    )
}

