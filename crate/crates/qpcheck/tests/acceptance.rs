//! End-to-end acceptance checks. Each test pins one expected verdict or
//! output exactly, on the bundled fixtures, and prints a single PASS line
//! with the measured facts.

mod common;

use std::collections::BTreeSet;
use std::process::Command;
use std::time::{Duration, Instant};

use num_bigint::BigUint;

use qpcheck::automaton::DiffSide;
use qpcheck::oracle::{
    check_weak_equation, enumerate_shapes, find_strong_counterexample, EnumerationBudget,
};
use qpcheck::preservation::{
    construct_weak_query, strong_languages, strong_preserves, weak_preserves, Construction,
    StrongWitnessKind,
};
use qpcheck::tree::parse_tree;

#[test]
fn the_worked_tree_yields_exactly_the_two_selected_pairs() {
    let start = Instant::now();
    let q = common::fixture_query("fixA.rq");
    let t = parse_tree("(f @1 (a @2) (f @3 (a @4) (a @5)))", &q.automaton.alphabet).unwrap();
    let got = q.eval_values(&t);
    let want: BTreeSet<Vec<BigUint>> = BTreeSet::from([
        vec![BigUint::from(2u32), BigUint::from(3u32)],
        vec![BigUint::from(2u32), BigUint::from(5u32)],
    ]);
    assert_eq!(got, want);
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    println!("PASS: the worked tree selects {{(2,3),(2,5)}} in {elapsed:?}");
}

#[test]
fn order_collapse_preserves_weakly_but_not_strongly() {
    let q = common::fixture_query("fixB.rq");
    let tr = common::fixture_transducer("fixB.tt");

    let weak = weak_preserves(&q, &tr, common::BUDGET).unwrap();
    assert!(weak.preserved, "collapsing f and g keeps the pooled values readable");

    let strong = strong_preserves(&q, &tr, common::BUDGET).unwrap();
    assert!(!strong.preserved, "collapsing f and g loses which child was selected");
    let witness = strong.witness.as_ref().expect("a strong no after a weak yes has a witness");
    assert_eq!(witness.kind, StrongWitnessKind::SpuriousMarking);

    let pair = find_strong_counterexample(&q, &tr, &EnumerationBudget::with_max_nodes(3))
        .unwrap()
        .expect("a collision exists at three nodes");
    let strips =
        BTreeSet::from([pair.0.strip_values().to_string(), pair.1.strip_values().to_string()]);
    assert_eq!(strips, BTreeSet::from(["(f (a) (a))".to_string(), "(g (a) (a))".to_string()]));
    assert_eq!(tr.apply(&pair.0).unwrap(), tr.apply(&pair.1).unwrap());
    assert_ne!(q.eval_values(&pair.0), q.eval_values(&pair.1));

    let Construction::Built { query: target, .. } =
        construct_weak_query(&q, &tr, common::BUDGET).unwrap()
    else {
        panic!("a weak yes builds the target query");
    };
    let o = check_weak_equation(&q, &target, &tr, &EnumerationBudget::with_max_nodes(6)).unwrap();
    assert!(o.ok(), "{:?}", o.discrepancies);
    assert!(o.warnings.is_empty(), "every preimage here is finite: {:?}", o.warnings);
    assert!(o.checked > 0);
    println!(
        "PASS: order collapse is weakly preserved, strongly refuted by \
         {} versus {}, and the built target query checks out on {} outputs",
        pair.0, pair.1, o.checked
    );
}

#[test]
fn the_marked_selection_language_sits_strictly_inside_the_round_trip() {
    let start = Instant::now();
    let q = common::fixture_query("fixB.rq");
    let tr = common::fixture_transducer("fixB.tt");
    let langs = strong_languages(&q, &tr, common::BUDGET).unwrap();

    let language = |a: &qpcheck::automaton::TreeAutomaton| -> BTreeSet<String> {
        enumerate_shapes(&langs.selections.alphabet, &EnumerationBudget::with_max_nodes(3))
            .unwrap()
            .into_iter()
            .filter(|t| a.accepts(t))
            .map(|t| t.to_string())
            .collect()
    };
    let selections = BTreeSet::from(["(f (1:a) (a))".to_string(), "(g (a) (1:a))".to_string()]);
    let mut round_tripped = selections.clone();
    round_tripped.insert("(f (a) (1:a))".to_string());
    round_tripped.insert("(g (1:a) (a))".to_string());
    assert_eq!(language(&langs.selections), selections);
    assert_eq!(language(&langs.round_trip), round_tripped);
    assert_eq!(language(&langs.comparison), round_tripped);

    assert!(langs.selections.included(&langs.comparison, common::BUDGET).unwrap().holds);
    let eq = langs.selections.equivalent(&langs.comparison, common::BUDGET).unwrap();
    assert!(!eq.equal);
    let (side, tree) = eq.witness.expect("inequality carries a witness");
    assert_eq!(side, DiffSide::SecondOnly);
    assert!(round_tripped.contains(&tree.to_string()));
    assert!(!selections.contains(&tree.to_string()));

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    println!(
        "PASS: two marked selections round-trip to four markings, witness {tree}, in {elapsed:?}"
    );
}

#[test]
fn the_ternary_tuple_passes_where_unary_selections_fail() {
    let tr = common::fixture_transducer("fixC.tt");

    let ternary = common::fixture_query("fixC.rq");
    let d3 = weak_preserves(&ternary, &tr, common::BUDGET).unwrap();
    assert!(d3.preserved, "witnesses: {:?}", d3.witnesses);

    let unary = common::fixture_query("fixCu.rq");
    let d1 = weak_preserves(&unary, &tr, common::BUDGET).unwrap();
    assert!(!d1.preserved, "flattening erases values the unary tuples select");
    assert!(!d1.witnesses.is_empty());

    println!(
        "PASS: the three-state tuple is weakly preserved while the unary \
         selections fail with {} witnesses",
        d1.witnesses.len()
    );
}

/// Every invariant suite with its contract size, run and timed as a group.
fn all_suites() -> Vec<(&'static str, fn() -> String)> {
    vec![
        ("evaluation paths", || common::suite_eval_paths(8)),
        ("reduction", || common::suite_reduction(8)),
        ("boolean algebra", || common::suite_boolean_algebra(8)),
        ("type inference", || common::suite_type_inference(8)),
        ("deletion fates", || common::suite_deletion_fates(8)),
        ("normalization", || common::suite_normalization(9)),
        ("per-source equation", || common::suite_equation_one(9)),
        ("pooled equation", || common::suite_equation_two(8)),
        ("per-tuple decomposition", common::suite_decomposition),
        ("random instances", || common::suite_random_instances(200, 2024)),
    ]
}

#[test]
fn the_invariant_suites_hold_at_their_contract_sizes() {
    for (name, run) in all_suites() {
        let start = Instant::now();
        let summary = run();
        let elapsed = start.elapsed();
        assert!(elapsed < Duration::from_secs(600), "suite '{name}' took {elapsed:?}");
        println!("PASS: {name}: {summary} ({elapsed:?})");
    }
}

fn run_cli(args: &[&str]) -> (Vec<u8>, i32) {
    let out = Command::new(env!("CARGO_BIN_EXE_qpcheck"))
        .args(args)
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .expect("the binary runs");
    (out.stdout, out.status.code().unwrap_or(-1))
}

#[test]
fn cli_output_is_byte_identical_across_runs() {
    let invocations: Vec<Vec<&str>> = vec![
        vec!["eval", "-q", "fixtures/fixA.rq", "(f @1 (a @2) (f @3 (a @4) (a @5)))"],
        vec!["apply", "-t", "fixtures/fixB.tt", "(g @1 (a @2) (a @3))"],
        vec!["check-weak", "-q", "fixtures/fixB.rq", "-t", "fixtures/fixB.tt"],
        vec!["check-strong", "-q", "fixtures/fixB.rq", "-t", "fixtures/fixB.tt"],
        vec!["check-strong", "-q", "fixtures/fixB.rq", "-t", "fixtures/fixB.tt", "--format", "json"],
        vec!["check-strong", "-q", "fixtures/fixB.rq", "-t", "fixtures/fixBswap.tt"],
        vec!["check-weak", "-q", "fixtures/fixD.rq", "-t", "fixtures/fixD.tt"],
        vec!["construct", "-q", "fixtures/fixB.rq", "-t", "fixtures/fixB.tt"],
        vec!["construct", "-q", "fixtures/fixC.rq", "-t", "fixtures/fixC.tt", "--format", "json"],
        vec!["oracle", "eval", "-q", "fixtures/fixA.rq", "--max-size", "7"],
        vec!["oracle", "weak", "-q", "fixtures/fixB.rq", "-t", "fixtures/fixB.tt", "--max-size", "5"],
        vec!["oracle", "strong", "-q", "fixtures/fixB.rq", "-t", "fixtures/fixB.tt", "--max-size", "4"],
    ];
    for args in &invocations {
        let (out1, code1) = run_cli(args);
        let (out2, code2) = run_cli(args);
        assert_eq!(out1, out2, "stdout differs between runs of {args:?}");
        assert_eq!(code1, code2, "exit code differs between runs of {args:?}");
        assert!(!out1.is_empty(), "no report printed for {args:?}");
    }
    println!(
        "PASS: {} fixture invocations print byte-identical reports across two runs",
        invocations.len()
    );
}
