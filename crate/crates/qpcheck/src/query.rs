//! Run-based n-ary queries over tree automata.
//!
//! A query pairs an automaton with a set of n-tuples of states; on a tree it
//! selects every n-tuple of positions that some accepting run labels with a
//! selected state tuple. This module evaluates queries, extracts value
//! tuples, rewrites a single-tuple query into a normal form whose selection
//! classes fire exactly once per run, and builds the marked and mark-blind
//! automata used by the preservation procedures.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;

use crate::automaton::{
    cartesian, parse_automaton_file, render_automaton_with, BudgetExceeded, Rule, TreeAutomaton,
};
use crate::state::State;
use crate::syntax::{error, ParseError};
use crate::tree::{DataTree, Position};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub name: String,
    /// Epsilon-free and reduced.
    pub automaton: TreeAutomaton,
    pub arity: usize,
    /// Selected state tuples, each of length `arity` with pairwise distinct
    /// entries.
    pub selections: Vec<Vec<State>>,
}

impl Query {
    pub fn new(
        automaton: TreeAutomaton,
        arity: usize,
        selections: impl IntoIterator<Item = Vec<State>>,
    ) -> Result<Self, String> {
        if arity == 0 {
            return Err("queries have arity at least 1".to_string());
        }
        let mut selections: Vec<Vec<State>> = selections.into_iter().collect();
        selections.sort();
        selections.dedup();
        for s in &selections {
            if s.len() != arity {
                return Err(format!(
                    "selection ({}) has {} states but the query arity is {arity}",
                    s.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(", "),
                    s.len()
                ));
            }
            let distinct: BTreeSet<&State> = s.iter().collect();
            if distinct.len() != s.len() {
                return Err(format!(
                    "selection ({}) repeats a state; tuples consist of distinct states",
                    s.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(", ")
                ));
            }
            for p in s {
                if !automaton.states.contains(p) {
                    return Err(format!("selection uses unknown state {p}"));
                }
            }
        }
        let name = automaton.name.clone();
        let automaton = automaton.eliminate_epsilon();
        Ok(Query { name, automaton, arity, selections })
    }

    /// All selected position tuples, over all accepting runs and all
    /// selection tuples.
    pub fn eval(&self, t: &DataTree) -> BTreeSet<Vec<Position>> {
        let mut out = BTreeSet::new();
        for s in &self.selections {
            let classes: Vec<BTreeSet<State>> =
                s.iter().map(|p| BTreeSet::from([p.clone()])).collect();
            out.extend(eval_product(&self.automaton, &classes, t));
        }
        out
    }

    /// Reference evaluation by explicit run enumeration; the contract is
    /// identical to [`Query::eval`].
    pub fn eval_by_runs(
        &self,
        t: &DataTree,
        max_runs: usize,
    ) -> Result<BTreeSet<Vec<Position>>, BudgetExceeded> {
        let runs = self.automaton.enumerate_runs(t, max_runs)?;
        let mut out = BTreeSet::new();
        for run in &runs {
            for s in &self.selections {
                let candidates: Vec<Vec<Position>> = s
                    .iter()
                    .map(|p| {
                        run.0
                            .iter()
                            .filter(|(_, q)| *q == p)
                            .map(|(v, _)| v.clone())
                            .collect()
                    })
                    .collect();
                out.extend(cartesian(&candidates));
            }
        }
        Ok(out)
    }

    /// The value tuples at selected positions. Tuples touching an unvalued
    /// position are skipped, so the result is meaningful on partially valued
    /// trees such as transducer outputs.
    pub fn eval_values(&self, t: &DataTree) -> BTreeSet<Vec<BigUint>> {
        self.eval(t)
            .iter()
            .filter_map(|tuple| {
                tuple.iter().map(|v| t.value_at(v).cloned()).collect::<Option<Vec<_>>>()
            })
            .collect()
    }

    /// Rewrites a single-tuple query into an equivalent one whose selection
    /// classes are pairwise disjoint and fire exactly once per accepting run.
    ///
    /// States become `(p, H, D)`: `D` is the set of tuple indices realized in
    /// the subtree, `H` (at most one index, the one with `s_i = p`) is
    /// realized at the node itself, and every rule splits `D \ H` disjointly
    /// among the children. The root owes the full index set, so each index is
    /// claimed at exactly one position of every accepting run.
    pub fn normalize(&self) -> Result<NormalQuery, String> {
        let [s] = self.selections.as_slice() else {
            return Err(format!(
                "normalization applies to single-tuple queries; this one has {} tuples",
                self.selections.len()
            ));
        };
        let n = self.arity;
        if n > 16 {
            return Err(format!("arity {n} is too large to normalize"));
        }
        let full: Vec<u32> = (1..=n as u32).collect();
        // The only index a node with base state p can claim for itself.
        let claimable = |p: &State| -> Option<u32> {
            s.iter().position(|si| si == p).map(|ix| ix as u32 + 1)
        };
        let claim = |p: &State, here: Vec<u32>, owed: Vec<u32>| State::Claim {
            base: Box::new(p.clone()),
            here,
            owed,
        };
        let mut rules = Vec::new();
        for r in &self.automaton.rules {
            let m = r.rhs.len();
            for owed_mask in 0u32..(1 << n) {
                let owed: Vec<u32> = bits(owed_mask, n);
                let here_options = claim_options(claimable(&r.lhs), owed_mask);
                for here in here_options {
                    let rest: Vec<u32> =
                        owed.iter().copied().filter(|i| !here.contains(i)).collect();
                    for routing in routings(&rest, m) {
                        let child_here_options: Vec<Vec<Vec<u32>>> = (0..m)
                            .map(|k| {
                                let mask = mask_of(&routing[k]);
                                claim_options(claimable(&r.rhs[k]), mask)
                            })
                            .collect();
                        for child_heres in cartesian(&child_here_options) {
                            let rhs = (0..m)
                                .map(|k| {
                                    claim(&r.rhs[k], child_heres[k].clone(), routing[k].clone())
                                })
                                .collect();
                            rules.push(Rule {
                                lhs: claim(&r.lhs, here.clone(), owed.clone()),
                                symbol: r.symbol.clone(),
                                rhs,
                            });
                        }
                    }
                }
            }
        }
        let mut initial = Vec::new();
        for p0 in &self.automaton.initial {
            for here in claim_options(claimable(p0), mask_of(&full)) {
                initial.push(claim(p0, here, full.clone()));
            }
        }
        let automaton = TreeAutomaton::new(
            format!("nf({})", self.name),
            self.automaton.alphabet.clone(),
            initial,
            rules,
            [],
        )
        .expect("normalized automaton is well-formed")
        .reduce();
        let selection_classes: Vec<BTreeSet<State>> = (1..=n as u32)
            .map(|i| {
                automaton
                    .states
                    .iter()
                    .filter(|q| matches!(q, State::Claim { here, .. } if here.contains(&i)))
                    .cloned()
                    .collect()
            })
            .collect();
        Ok(NormalQuery { automaton, selection_classes })
    }
}

/// A query in the normal form produced by [`Query::normalize`]: the selection
/// set is the full product of pairwise disjoint classes, and every accepting
/// run selects exactly one position per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalQuery {
    pub automaton: TreeAutomaton,
    pub selection_classes: Vec<BTreeSet<State>>,
}

impl NormalQuery {
    pub fn arity(&self) -> usize {
        self.selection_classes.len()
    }

    pub fn eval(&self, t: &DataTree) -> BTreeSet<Vec<Position>> {
        eval_product(&self.automaton, &self.selection_classes, t)
    }

    pub fn eval_values(&self, t: &DataTree) -> BTreeSet<Vec<BigUint>> {
        self.eval(t)
            .iter()
            .filter_map(|tuple| {
                tuple.iter().map(|v| t.value_at(v).cloned()).collect::<Option<Vec<_>>>()
            })
            .collect()
    }
}

fn bits(mask: u32, n: usize) -> Vec<u32> {
    (1..=n as u32).filter(|i| mask & (1 << (i - 1)) != 0).collect()
}

fn mask_of(ixs: &[u32]) -> u32 {
    ixs.iter().fold(0, |m, i| m | (1 << (i - 1)))
}

/// The possible claimed-here sets for a node: nothing, or the node's own
/// index when it is among the owed ones.
fn claim_options(own: Option<u32>, owed_mask: u32) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    if let Some(i) = own {
        if owed_mask & (1 << (i - 1)) != 0 {
            out.push(vec![i]);
        }
    }
    out
}

/// All ways to send each index to exactly one of `m` children, as per-child
/// sorted index sets.
fn routings(rest: &[u32], m: usize) -> Vec<Vec<Vec<u32>>> {
    let mut out = vec![vec![Vec::new(); m]];
    for &i in rest {
        let mut next = Vec::with_capacity(out.len() * m);
        for partial in &out {
            for k in 0..m {
                let mut copy = partial.clone();
                copy[k].push(i);
                next.push(copy);
            }
        }
        out = next;
    }
    out
}

/// Position tuples selected under product-form selection classes: tuples
/// (v_1..v_k) of distinct positions such that one accepting run has
/// m(v_i) ∈ classes[i] for all i simultaneously.
fn eval_product(
    a: &TreeAutomaton,
    classes: &[BTreeSet<State>],
    t: &DataTree,
) -> BTreeSet<Vec<Position>> {
    assert!(a.is_epsilon_free(), "query evaluation requires an epsilon-free automaton");
    let mut out = BTreeSet::new();
    if classes.is_empty() {
        return out;
    }
    let realized = realized_states(a, t);
    let candidates: Vec<Vec<Position>> = classes
        .iter()
        .map(|cls| {
            realized
                .iter()
                .filter(|(_, states)| states.iter().any(|q| cls.contains(q)))
                .map(|(v, _)| v.clone())
                .collect()
        })
        .collect();
    for combo in cartesian(&candidates) {
        let distinct: BTreeSet<&Position> = combo.iter().collect();
        if distinct.len() != combo.len() {
            continue;
        }
        if combo.len() == 1 {
            out.insert(combo);
            continue;
        }
        let pins: BTreeMap<Position, BTreeSet<State>> =
            combo.iter().cloned().zip(classes.iter().cloned()).collect();
        if accepts_with_pins(a, t, &pins) {
            out.insert(combo);
        }
    }
    out
}

/// Per position, the states assigned there by at least one accepting run:
/// bottom-up feasibility intersected with top-down reachability.
fn realized_states(a: &TreeAutomaton, t: &DataTree) -> BTreeMap<Position, BTreeSet<State>> {
    let mut feasible: BTreeMap<Position, BTreeSet<State>> = BTreeMap::new();
    fill_feasible_sets(a, t, &Position::root(), &mut feasible);
    let mut down: BTreeMap<Position, BTreeSet<State>> = BTreeMap::new();
    down.insert(
        Position::root(),
        feasible[&Position::root()].intersection(&a.initial).cloned().collect(),
    );
    for at in t.positions() {
        let node = t.subtree(&at).expect("position comes from the tree");
        let here: BTreeSet<State> = down.get(&at).cloned().unwrap_or_default();
        for p in &here {
            for r in a.rules_for(p, &node.symbol) {
                if r.rhs
                    .iter()
                    .enumerate()
                    .all(|(l, q)| feasible[&at.child(l as u32 + 1)].contains(q))
                {
                    for (l, q) in r.rhs.iter().enumerate() {
                        down.entry(at.child(l as u32 + 1)).or_default().insert(q.clone());
                    }
                }
            }
        }
    }
    down
}

fn fill_feasible_sets(
    a: &TreeAutomaton,
    t: &DataTree,
    at: &Position,
    out: &mut BTreeMap<Position, BTreeSet<State>>,
) {
    for (i, c) in t.children.iter().enumerate() {
        fill_feasible_sets(a, c, &at.child(i as u32 + 1), out);
    }
    let mut set = BTreeSet::new();
    for r in &a.rules {
        if r.symbol == t.symbol
            && r.rhs.len() == t.children.len()
            && r.rhs.iter().enumerate().all(|(l, q)| out[&at.child(l as u32 + 1)].contains(q))
        {
            set.insert(r.lhs.clone());
        }
    }
    out.insert(at.clone(), set);
}

/// Whether an accepting run exists whose state at each pinned position lies
/// in that position's allowed set.
fn accepts_with_pins(
    a: &TreeAutomaton,
    t: &DataTree,
    pins: &BTreeMap<Position, BTreeSet<State>>,
) -> bool {
    fn go(
        a: &TreeAutomaton,
        t: &DataTree,
        at: &Position,
        pins: &BTreeMap<Position, BTreeSet<State>>,
    ) -> BTreeSet<State> {
        let child_sets: Vec<BTreeSet<State>> = t
            .children
            .iter()
            .enumerate()
            .map(|(i, c)| go(a, c, &at.child(i as u32 + 1), pins))
            .collect();
        let mut set = BTreeSet::new();
        for r in &a.rules {
            if r.symbol == t.symbol
                && r.rhs.len() == child_sets.len()
                && r.rhs.iter().zip(&child_sets).all(|(q, cs)| cs.contains(q))
            {
                set.insert(r.lhs.clone());
            }
        }
        if let Some(allowed) = pins.get(at) {
            set.retain(|p| allowed.contains(p));
        }
        set
    }
    go(a, t, &Position::root(), pins).iter().any(|p| a.initial.contains(p))
}

/// The automaton whose accepting runs are those of `a` that assign every
/// state of `s` somewhere. States carry the subset of `s` still to be used in
/// the subtree; each pending state is either used at the node itself or
/// handed to exactly one child.
pub fn coverage_automaton(a: &TreeAutomaton, s: &[State]) -> TreeAutomaton {
    assert!(a.is_epsilon_free(), "coverage construction requires an epsilon-free automaton");
    let pending_all: Vec<State> = {
        let set: BTreeSet<State> = s.iter().cloned().collect();
        set.into_iter().collect()
    };
    assert!(pending_all.len() <= 16, "coverage construction supports at most 16 tuple states");
    let mut rules = Vec::new();
    for r in &a.rules {
        let m = r.rhs.len();
        for mask in 0u32..(1 << pending_all.len()) {
            let pending: Vec<State> = pending_all
                .iter()
                .enumerate()
                .filter(|(ix, _)| mask & (1 << ix) != 0)
                .map(|(_, q)| q.clone())
                .collect();
            let to_route: Vec<State> =
                pending.iter().filter(|q| **q != r.lhs).cloned().collect();
            for routing in route_states(&to_route, m) {
                let rhs = (0..m)
                    .map(|k| State::cover(r.rhs[k].clone(), routing[k].clone()))
                    .collect();
                rules.push(Rule {
                    lhs: State::cover(r.lhs.clone(), pending.clone()),
                    symbol: r.symbol.clone(),
                    rhs,
                });
            }
        }
    }
    let initial = a.initial.iter().map(|p0| State::cover(p0.clone(), pending_all.clone()));
    TreeAutomaton::new(format!("cov({})", a.name), a.alphabet.clone(), initial, rules, [])
        .expect("coverage automaton is well-formed")
}

/// All ways to send each state to exactly one of `m` children, as per-child
/// sorted state lists.
fn route_states(to_route: &[State], m: usize) -> Vec<Vec<Vec<State>>> {
    let mut out = vec![vec![Vec::new(); m]];
    for q in to_route {
        let mut next = Vec::with_capacity(out.len() * m);
        for partial in &out {
            for k in 0..m {
                let mut copy = partial.clone();
                copy[k].push(q.clone());
                copy[k].sort();
                next.push(copy);
            }
        }
        out = next;
    }
    out
}

/// The marked automaton over Σ ∪ ([n]×Σ): each normalized query contributes
/// its rules with the symbol marked by i exactly when the rule's state lies
/// in selection class i; the results are unioned disjointly.
pub fn mark_query_automaton(queries: &[NormalQuery]) -> Result<TreeAutomaton, String> {
    let Some(first) = queries.first() else {
        return Err("no queries to mark".to_string());
    };
    let n = first.arity() as u32;
    if queries.iter().any(|q| q.arity() as u32 != n) {
        return Err("queries disagree on arity".to_string());
    }
    let mut parts = Vec::new();
    for q in queries {
        for (i, si) in q.selection_classes.iter().enumerate() {
            for sj in &q.selection_classes[i + 1..] {
                if let Some(p) = si.intersection(sj).next() {
                    return Err(format!("selection classes overlap on state {p}"));
                }
            }
        }
        let rules = q.automaton.rules.iter().map(|r| {
            let marked =
                q.selection_classes.iter().position(|cls| cls.contains(&r.lhs));
            let symbol = match marked {
                Some(ix) => r.symbol.with_mark(ix as u32 + 1),
                None => r.symbol.clone(),
            };
            Rule { lhs: r.lhs.clone(), symbol, rhs: r.rhs.clone() }
        });
        parts.push(
            TreeAutomaton::new(
                format!("mk({})", q.automaton.name),
                q.automaton.alphabet.with_marks(n),
                q.automaton.initial.iter().cloned(),
                rules,
                [],
            )
            .expect("marking preserves well-formedness"),
        );
    }
    let mut out = parts.remove(0);
    for part in parts {
        out = out.union(&part)?;
    }
    out.name = "mk".to_string();
    Ok(out)
}

/// The mark-blind automaton over Σ ∪ ([n]×Σ): accepts a marked tree exactly
/// when `a` accepts its mark-erasure.
pub fn index_automaton(a: &TreeAutomaton, n: u32) -> TreeAutomaton {
    assert!(a.is_epsilon_free(), "index construction requires an epsilon-free automaton");
    let mut rules = a.rules.clone();
    for r in &a.rules {
        for i in 1..=n {
            rules.push(Rule {
                lhs: r.lhs.clone(),
                symbol: r.symbol.with_mark(i),
                rhs: r.rhs.clone(),
            });
        }
    }
    TreeAutomaton::new(
        format!("idx({})", a.name),
        a.alphabet.with_marks(n),
        a.initial.iter().cloned(),
        rules,
        [],
    )
    .expect("index automaton is well-formed")
}

/// The automaton over Σ ∪ ([n]×Σ) accepting a marked tree exactly when `a`
/// accepts its mark-erasure and every mark 1..n occurs exactly once. A state
/// pairs a state of `a` with the set of marks owed to its subtree; a rule
/// either claims one owed mark at the node, reading the marked symbol, or
/// reads the plain symbol, and routes the remaining marks to the children.
pub fn mark_once_automaton(a: &TreeAutomaton, n: u32) -> TreeAutomaton {
    assert!(a.is_epsilon_free(), "mark counting requires an epsilon-free automaton");
    assert!(n <= 16, "mark counting supports at most 16 marks");
    let full: Vec<u32> = (1..=n).collect();
    let owes = |p: &State, owed: Vec<u32>| State::Claim {
        base: Box::new(p.clone()),
        here: Vec::new(),
        owed,
    };
    let mut rules = Vec::new();
    for r in &a.rules {
        let m = r.rhs.len();
        for owed_mask in 0u32..(1 << n) {
            let owed: Vec<u32> = bits(owed_mask, n as usize);
            let mut here_options: Vec<Option<u32>> = vec![None];
            here_options.extend(owed.iter().map(|&i| Some(i)));
            for here in here_options {
                let symbol = match here {
                    Some(i) => r.symbol.with_mark(i),
                    None => r.symbol.clone(),
                };
                let rest: Vec<u32> =
                    owed.iter().copied().filter(|i| here != Some(*i)).collect();
                for routing in routings(&rest, m) {
                    let rhs =
                        (0..m).map(|k| owes(&r.rhs[k], routing[k].clone())).collect();
                    rules.push(Rule {
                        lhs: owes(&r.lhs, owed.clone()),
                        symbol: symbol.clone(),
                        rhs,
                    });
                }
            }
        }
    }
    TreeAutomaton::new(
        format!("once({})", a.name),
        a.alphabet.with_marks(n),
        a.initial.iter().map(|p0| owes(p0, full.clone())),
        rules,
        [],
    )
    .expect("mark counting automaton is well-formed")
    .reduce()
}

/// Parses a query file: an automaton file body followed by one or more
/// `select (p, q)` lines of equal arity.
pub fn parse_query(text: &str) -> Result<Query, ParseError> {
    let parsed = parse_automaton_file(text, true)?;
    if parsed.selections.is_empty() {
        return Err(error(1, 1, "query files need at least one 'select' line"));
    }
    let arity = parsed.selections[0].len();
    if let Some(bad) = parsed.selections.iter().find(|s| s.len() != arity) {
        return Err(error(
            1,
            1,
            format!(
                "select lines disagree on arity: expected {arity}, found {}",
                bad.len()
            ),
        ));
    }
    Query::new(parsed.automaton, arity, parsed.selections).map_err(|e| error(1, 1, e))
}

/// Renders a query in the file format accepted by [`parse_query`].
pub fn render_query(q: &Query) -> String {
    render_automaton_with(&q.automaton, &q.selections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{parse_tree, RankedAlphabet, SymbolName};

    fn fix_a() -> Query {
        parse_query(
            "
            automaton fixA
            sym f 2
            sym a 0
            state p1 p2 p3 p4
            initial p1
            rule p1 -> f(p2, p3)
            rule p2 -> a
            rule p3 -> f(p4, p3)
            rule p3 -> a
            rule p4 -> a
            select (p2, p3)
        ",
        )
        .unwrap()
    }

    fn fix_b_query() -> Query {
        parse_query(
            "
            automaton fixB
            sym f 2
            sym g 2
            sym a 0
            state p0 p1 p2
            initial p0
            rule p0 -> f(p1, p2)
            rule p0 -> g(p2, p1)
            rule p1 -> a
            rule p2 -> a
            select (p1)
        ",
        )
        .unwrap()
    }

    fn fix_c_query() -> Query {
        parse_query(
            "
            automaton fixC
            sym A 2
            sym B 2
            sym C 2
            sym e 0
            state p1 p2 p3 pe
            initial p1
            rule p1 -> A(p2, pe)
            rule p2 -> B(p3, pe)
            rule p2 -> C(pe, pe)
            rule p3 -> C(pe, pe)
            rule pe -> e
            select (p1, p2, p3)
        ",
        )
        .unwrap()
    }

    #[test]
    fn worked_example_selects_two_value_pairs() {
        let q = fix_a();
        let t = parse_tree("(f @1 (a @2) (f @3 (a @4) (a @5)))", &q.automaton.alphabet).unwrap();
        let positions: BTreeSet<String> = q
            .eval(&t)
            .iter()
            .map(|tuple| {
                tuple.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ")
            })
            .collect();
        assert_eq!(
            positions,
            BTreeSet::from(["1 2".to_string(), "1 2.2".to_string()])
        );
        let values: BTreeSet<Vec<BigUint>> = q.eval_values(&t);
        let expect: BTreeSet<Vec<BigUint>> = BTreeSet::from([
            vec![BigUint::from(2u32), BigUint::from(3u32)],
            vec![BigUint::from(2u32), BigUint::from(5u32)],
        ]);
        assert_eq!(values, expect);
    }

    #[test]
    fn both_evaluation_paths_agree_on_the_worked_example() {
        let q = fix_a();
        let alphabet = q.automaton.alphabet.clone();
        for text in [
            "(f @1 (a @2) (f @3 (a @4) (a @5)))",
            "(f @1 (a @2) (a @3))",
            "(f @1 (a @2) (f @3 (a @4) (f @5 (a @6) (a @7))))",
            "(a @1)",
        ] {
            let t = parse_tree(text, &alphabet).unwrap();
            assert_eq!(q.eval(&t), q.eval_by_runs(&t, 10_000).unwrap(), "on {text}");
        }
    }

    #[test]
    fn rejected_trees_select_nothing() {
        let q = fix_a();
        let t = parse_tree("(a @1)", &q.automaton.alphabet).unwrap();
        assert!(q.eval(&t).is_empty());
    }

    #[test]
    fn empty_selection_set_selects_nothing() {
        let q = fix_a();
        let empty = Query::new(q.automaton.clone(), 2, Vec::new()).unwrap();
        let t = parse_tree("(f @1 (a @2) (a @3))", &q.automaton.alphabet).unwrap();
        assert!(empty.eval(&t).is_empty());
        assert!(empty.eval_values(&t).is_empty());
    }

    #[test]
    fn value_tuples_skip_unvalued_positions() {
        let q = fix_a();
        let t = parse_tree("(f @1 (a @2) (f (a @4) (a @5)))", &q.automaton.alphabet).unwrap();
        // The tuple at positions (1, 2) hits the unvalued node and drops out;
        // the tuple at (1, 2.2) survives.
        let values = q.eval_values(&t);
        let expect: BTreeSet<Vec<BigUint>> =
            BTreeSet::from([vec![BigUint::from(2u32), BigUint::from(5u32)]]);
        assert_eq!(values, expect);
    }

    #[test]
    fn selections_must_use_distinct_known_states() {
        let a = fix_a().automaton;
        let dup = Query::new(a.clone(), 2, [vec![State::named("p2"), State::named("p2")]]);
        assert!(dup.unwrap_err().contains("distinct"));
        let unknown = Query::new(a, 1, [vec![State::named("nope")]]);
        assert!(unknown.unwrap_err().contains("unknown state"));
    }

    #[test]
    fn normalization_keeps_only_fully_realizable_trees() {
        let q = fix_c_query();
        let nf = q.normalize().unwrap();
        let alphabet = q.automaton.alphabet.clone();
        let full = parse_tree("(A (B (C (e) (e)) (e)) (e))", &alphabet).unwrap();
        let partial = parse_tree("(A (C (e) (e)) (e))", &alphabet).unwrap();
        assert!(nf.automaton.accepts(&full));
        assert!(!nf.automaton.accepts(&partial));
        assert!(q.automaton.accepts(&partial));
    }

    #[test]
    fn normalization_preserves_query_results() {
        let q = fix_a();
        let nf = q.normalize().unwrap();
        let alphabet = q.automaton.alphabet.clone();
        for text in [
            "(f @1 (a @2) (f @3 (a @4) (a @5)))",
            "(f @1 (a @2) (a @3))",
            "(f @9 (a @8) (f @7 (a @6) (f @5 (a @4) (a @3))))",
            "(a @1)",
        ] {
            let t = parse_tree(text, &alphabet).unwrap();
            assert_eq!(q.eval_values(&t), nf.eval_values(&t), "on {text}");
            assert_eq!(q.eval(&t), nf.eval(&t), "on {text}");
        }
    }

    #[test]
    fn normalized_classes_fire_exactly_once_per_run() {
        let q = fix_a();
        let nf = q.normalize().unwrap();
        let t = parse_tree(
            "(f @1 (a @2) (f @3 (a @4) (a @5)))",
            &q.automaton.alphabet,
        )
        .unwrap();
        let runs = nf.automaton.enumerate_runs(&t, 10_000).unwrap();
        assert!(!runs.is_empty());
        for run in &runs {
            for cls in &nf.selection_classes {
                let hits =
                    run.0.values().filter(|state| cls.contains(state)).count();
                assert_eq!(hits, 1, "class fired {hits} times in {run}");
            }
        }
    }

    #[test]
    fn coverage_requires_every_tuple_state() {
        let q = fix_c_query();
        let s: Vec<State> =
            vec![State::named("p1"), State::named("p2"), State::named("p3")];
        let cov = coverage_automaton(&q.automaton, &s).reduce();
        let alphabet = q.automaton.alphabet.clone();
        let full = parse_tree("(A (B (C (e) (e)) (e)) (e))", &alphabet).unwrap();
        let partial = parse_tree("(A (C (e) (e)) (e))", &alphabet).unwrap();
        assert!(cov.accepts(&full));
        assert!(!cov.accepts(&partial));
    }

    #[test]
    fn coverage_with_no_tuple_states_matches_the_original() {
        let q = fix_a();
        let cov = coverage_automaton(&q.automaton, &[]);
        let alphabet = q.automaton.alphabet.clone();
        for text in ["(a)", "(f (a) (a))", "(f (a) (f (a) (a)))"] {
            let t = parse_tree(text, &alphabet).unwrap();
            assert_eq!(cov.accepts(&t), q.automaton.accepts(&t), "on {text}");
        }
    }

    #[test]
    fn marked_automaton_marks_exactly_the_selected_nodes() {
        let q = fix_b_query();
        let nf = q.normalize().unwrap();
        let mk = mark_query_automaton(std::slice::from_ref(&nf)).unwrap();
        let marked = q.automaton.alphabet.with_marks(1);
        let inside = ["(f (1:a) (a))", "(g (a) (1:a))"];
        let outside = ["(f (a) (1:a))", "(g (1:a) (a))", "(f (a) (a))", "(1:f (a) (a))"];
        for text in inside {
            let t = parse_tree(text, &marked).unwrap();
            assert!(mk.accepts(&t), "should accept {text}");
        }
        for text in outside {
            let t = parse_tree(text, &marked).unwrap();
            assert!(!mk.accepts(&t), "should reject {text}");
        }
    }

    #[test]
    fn index_automaton_ignores_marks() {
        let q = fix_b_query();
        let idx = index_automaton(&q.automaton, 1);
        let marked = q.automaton.alphabet.with_marks(1);
        for text in
            ["(f (1:a) (a))", "(f (a) (1:a))", "(g (1:a) (a))", "(g (a) (1:a))", "(f (a) (a))"]
        {
            let t = parse_tree(text, &marked).unwrap();
            assert!(idx.accepts(&t), "should accept {text}");
        }
        assert!(!idx.accepts(&parse_tree("(1:a)", &marked).unwrap()));
    }

    #[test]
    fn mark_once_accepts_exactly_the_singly_marked_trees() {
        let q = fix_b_query();
        let once = mark_once_automaton(&q.automaton, 1);
        let marked = q.automaton.alphabet.with_marks(1);
        for text in [
            "(f (1:a) (a))",
            "(f (a) (1:a))",
            "(g (1:a) (a))",
            "(g (a) (1:a))",
            "(1:f (a) (a))",
            "(1:g (a) (a))",
        ] {
            let t = parse_tree(text, &marked).unwrap();
            assert!(once.accepts(&t), "should accept {text}");
        }
        for text in ["(f (a) (a))", "(f (1:a) (1:a))", "(1:f (1:a) (a))", "(1:a)"] {
            let t = parse_tree(text, &marked).unwrap();
            assert!(!once.accepts(&t), "should reject {text}");
        }
    }

    #[test]
    fn mark_once_requires_every_mark_exactly_once() {
        let q = fix_a();
        let once = mark_once_automaton(&q.automaton, 2);
        let marked = q.automaton.alphabet.with_marks(2);
        for text in [
            "(f (1:a) (2:a))",
            "(f (2:a) (1:a))",
            "(1:f (2:a) (a))",
            "(2:f (a) (1:f (a) (a)))",
        ] {
            let t = parse_tree(text, &marked).unwrap();
            assert!(once.accepts(&t), "should accept {text}");
        }
        for text in [
            "(f (a) (a))",
            "(f (1:a) (a))",
            "(f (1:a) (1:a))",
            "(f (1:a) (f (2:a) (2:a)))",
        ] {
            let t = parse_tree(text, &marked).unwrap();
            assert!(!once.accepts(&t), "should reject {text}");
        }
    }

    #[test]
    fn query_files_round_trip() {
        let q = fix_a();
        let again = parse_query(&render_query(&q)).unwrap();
        assert_eq!(again.selections, q.selections);
        let alphabet = q.automaton.alphabet.clone();
        for text in ["(a)", "(f (a) (a))", "(f (a) (f (a) (a)))"] {
            let t = parse_tree(text, &alphabet).unwrap();
            assert_eq!(again.automaton.accepts(&t), q.automaton.accepts(&t));
        }
    }

    #[test]
    fn select_lines_must_agree_on_arity() {
        let err = parse_query(
            "
            automaton bad
            sym a 0
            state p q
            initial p
            rule p -> a
            rule q -> a
            select (p, q)
            select (p)
        ",
        )
        .unwrap_err();
        assert!(err.msg.contains("arity"), "{err}");
    }

    #[test]
    fn unmarked_alphabet_survives_marking() {
        let q = fix_b_query();
        let nf = q.normalize().unwrap();
        let mk = mark_query_automaton(std::slice::from_ref(&nf)).unwrap();
        assert!(mk.alphabet.contains(&SymbolName::new("f")));
        assert!(mk.alphabet.contains(&SymbolName::marked("f", 1)));
        let plain: RankedAlphabet = q.automaton.alphabet.clone();
        assert_eq!(mk.alphabet.len(), plain.len() * 2);
    }
}
