//! Root-directed ranked tree automata.
//!
//! A rule `p -> σ(p1..pn)` says a node labelled σ may carry state p when its
//! children carry p1..pn. A run labels every position consistently and is
//! accepting when the root state is initial. Evaluation is bottom-up.
//!
//! Epsilon rules `p -> q` (anything accepted at q is accepted at p) occur
//! only in intermediate results of the image construction; inputs and final
//! outputs are epsilon-free.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::state::State;
use crate::syntax::{error, ParseError, Token, Tokens};
use crate::tree::{DataTree, Position, RankedAlphabet, SymbolName};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rule {
    pub lhs: State,
    pub symbol: SymbolName,
    pub rhs: Vec<State>,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.lhs, self.symbol)?;
        if !self.rhs.is_empty() {
            write!(f, "(")?;
            for (i, s) in self.rhs.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{s}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// A run of an automaton on a tree: the state at every position.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Run(pub BTreeMap<Position, State>);

impl Run {
    pub fn state_at(&self, at: &Position) -> Option<&State> {
        self.0.get(at)
    }
}

impl fmt::Display for Run {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (p, s)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{p}:{s}")?;
        }
        write!(f, "}}")
    }
}

/// Raised when a construction would exceed its configured size cap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetExceeded {
    pub what: String,
    pub limit: usize,
}

impl fmt::Display for BudgetExceeded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "budget exceeded: {} would pass {}", self.what, self.limit)
    }
}

impl std::error::Error for BudgetExceeded {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeAutomaton {
    pub name: String,
    pub alphabet: RankedAlphabet,
    pub states: BTreeSet<State>,
    pub initial: BTreeSet<State>,
    /// Sorted and deduplicated; constructions refer to rules by index here.
    pub rules: Vec<Rule>,
    /// Sorted and deduplicated pairs (p, q): anything accepted at q is
    /// accepted at p.
    pub epsilon_rules: Vec<(State, State)>,
}

/// Which side of a failed language comparison holds the witness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffSide {
    FirstOnly,
    SecondOnly,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Equivalence {
    pub equal: bool,
    pub witness: Option<(DiffSide, DataTree)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inclusion {
    pub holds: bool,
    pub witness: Option<DataTree>,
}

/// All tuples over the given per-slot options; one empty tuple when there are
/// no slots, none when any slot has no options.
pub(crate) fn cartesian<T: Clone>(options: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new()];
    for opts in options {
        let mut next = Vec::with_capacity(out.len().saturating_mul(opts.len()));
        for prefix in &out {
            for o in opts {
                let mut v = prefix.clone();
                v.push(o.clone());
                next.push(v);
            }
        }
        out = next;
    }
    out
}

impl TreeAutomaton {
    /// Builds an automaton, inferring the state set from the rules and
    /// initial states. Rules are checked against the alphabet, sorted, and
    /// deduplicated.
    pub fn new(
        name: impl Into<String>,
        alphabet: RankedAlphabet,
        initial: impl IntoIterator<Item = State>,
        rules: impl IntoIterator<Item = Rule>,
        epsilon_rules: impl IntoIterator<Item = (State, State)>,
    ) -> Result<Self, String> {
        let initial: BTreeSet<State> = initial.into_iter().collect();
        let mut rules: Vec<Rule> = rules.into_iter().collect();
        rules.sort();
        rules.dedup();
        let mut epsilon_rules: Vec<(State, State)> = epsilon_rules.into_iter().collect();
        epsilon_rules.sort();
        epsilon_rules.dedup();
        let mut states: BTreeSet<State> = initial.iter().cloned().collect();
        for r in &rules {
            match alphabet.rank(&r.symbol) {
                None => return Err(format!("rule uses unknown symbol '{}'", r.symbol)),
                Some(k) if k != r.rhs.len() => {
                    return Err(format!(
                        "rule '{r}' has {} child states but '{}' has rank {k}",
                        r.rhs.len(),
                        r.symbol
                    ))
                }
                Some(_) => {}
            }
            states.insert(r.lhs.clone());
            states.extend(r.rhs.iter().cloned());
        }
        for (p, q) in &epsilon_rules {
            states.insert(p.clone());
            states.insert(q.clone());
        }
        Ok(TreeAutomaton { name: name.into(), alphabet, states, initial, rules, epsilon_rules })
    }

    pub fn is_epsilon_free(&self) -> bool {
        self.epsilon_rules.is_empty()
    }

    fn assert_epsilon_free(&self, op: &str) {
        assert!(
            self.is_epsilon_free(),
            "{op} requires an epsilon-free automaton; call eliminate_epsilon first"
        );
    }

    pub fn rules_for<'a>(
        &'a self,
        lhs: &'a State,
        symbol: &'a SymbolName,
    ) -> impl Iterator<Item = &'a Rule> + 'a {
        self.rules.iter().filter(move |r| &r.lhs == lhs && &r.symbol == symbol)
    }

    /// Adds, for every state in the set, the states that can reach it through
    /// chains of epsilon rules.
    fn epsilon_close_up(&self, set: &mut BTreeSet<State>) {
        if self.epsilon_rules.is_empty() {
            return;
        }
        let mut changed = true;
        while changed {
            changed = false;
            for (p, q) in &self.epsilon_rules {
                if set.contains(q) && !set.contains(p) {
                    set.insert(p.clone());
                    changed = true;
                }
            }
        }
    }

    /// The epsilon-descendants of each state (reflexive-transitive closure).
    fn epsilon_descendants(&self) -> BTreeMap<State, BTreeSet<State>> {
        let mut desc: BTreeMap<State, BTreeSet<State>> = BTreeMap::new();
        for s in &self.states {
            desc.insert(s.clone(), BTreeSet::from([s.clone()]));
        }
        let mut changed = true;
        while changed {
            changed = false;
            for (p, q) in &self.epsilon_rules {
                let qs = desc.get(q).cloned().unwrap_or_default();
                let entry = desc.entry(p.clone()).or_default();
                for s in qs {
                    if entry.insert(s) {
                        changed = true;
                    }
                }
            }
        }
        desc
    }

    /// The set of states accepting the given (valueless or valued) tree,
    /// computed bottom-up. Epsilon rules are honored.
    fn accepting_states(&self, t: &DataTree) -> BTreeSet<State> {
        let child_sets: Vec<BTreeSet<State>> =
            t.children.iter().map(|c| self.accepting_states(c)).collect();
        let mut set: BTreeSet<State> = BTreeSet::new();
        for r in &self.rules {
            if r.symbol == t.symbol
                && r.rhs.len() == child_sets.len()
                && r.rhs.iter().zip(&child_sets).all(|(s, cs)| cs.contains(s))
            {
                set.insert(r.lhs.clone());
            }
        }
        self.epsilon_close_up(&mut set);
        set
    }

    /// True iff some accepting run exists. Values on the tree are ignored.
    pub fn accepts(&self, t: &DataTree) -> bool {
        self.accepting_states(t).iter().any(|s| self.initial.contains(s))
    }

    /// All accepting runs, in deterministic order. Fails once more than
    /// `max_runs` runs (or intermediate run fragments) would be produced.
    pub fn enumerate_runs(&self, t: &DataTree, max_runs: usize) -> Result<Vec<Run>, BudgetExceeded> {
        self.assert_epsilon_free("enumerate_runs");
        let mut feasible: BTreeMap<Position, BTreeSet<State>> = BTreeMap::new();
        fill_feasible(self, t, &Position::root(), &mut feasible);
        let root_states: Vec<State> = feasible[&Position::root()]
            .iter()
            .filter(|s| self.initial.contains(*s))
            .cloned()
            .collect();
        let mut out = Vec::new();
        for p in root_states {
            let fragments = self.expand_runs(t, &Position::root(), &p, &feasible, max_runs)?;
            for frag in fragments {
                out.push(Run(frag));
                if out.len() > max_runs {
                    return Err(BudgetExceeded { what: "run count".into(), limit: max_runs });
                }
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    fn expand_runs(
        &self,
        t: &DataTree,
        at: &Position,
        state: &State,
        feasible: &BTreeMap<Position, BTreeSet<State>>,
        max_runs: usize,
    ) -> Result<Vec<BTreeMap<Position, State>>, BudgetExceeded> {
        let node = t.subtree(at).expect("position exists");
        let mut out = Vec::new();
        for r in self.rules_for(state, &node.symbol) {
            let ok = r
                .rhs
                .iter()
                .enumerate()
                .all(|(i, s)| feasible[&at.child(i as u32 + 1)].contains(s));
            if !ok {
                continue;
            }
            let mut child_frags = Vec::with_capacity(r.rhs.len());
            for (i, s) in r.rhs.iter().enumerate() {
                child_frags.push(self.expand_runs(t, &at.child(i as u32 + 1), s, feasible, max_runs)?);
            }
            for combo in cartesian(&child_frags) {
                let mut m = BTreeMap::new();
                m.insert(at.clone(), state.clone());
                for frag in combo {
                    m.extend(frag);
                }
                out.push(m);
                if out.len() > max_runs {
                    return Err(BudgetExceeded { what: "run fragments".into(), limit: max_runs });
                }
            }
        }
        Ok(out)
    }

    /// States from which some tree is accepted.
    fn productive_states(&self) -> BTreeSet<State> {
        let mut prod: BTreeSet<State> = BTreeSet::new();
        let mut changed = true;
        while changed {
            changed = false;
            for r in &self.rules {
                if !prod.contains(&r.lhs) && r.rhs.iter().all(|s| prod.contains(s)) {
                    prod.insert(r.lhs.clone());
                    changed = true;
                }
            }
            for (p, q) in &self.epsilon_rules {
                if prod.contains(q) && !prod.contains(p) {
                    prod.insert(p.clone());
                    changed = true;
                }
            }
        }
        prod
    }

    pub fn is_empty(&self) -> bool {
        let prod = self.productive_states();
        !self.initial.iter().any(|s| prod.contains(s))
    }

    /// Removes states and rules that no accepting run of any tree uses:
    /// keeps states that are productive and reachable from an initial state
    /// through productive siblings. The language is unchanged.
    pub fn reduce(&self) -> TreeAutomaton {
        self.assert_epsilon_free("reduce");
        let prod = self.productive_states();
        let mut reach: BTreeSet<State> =
            self.initial.iter().filter(|s| prod.contains(*s)).cloned().collect();
        let mut changed = true;
        while changed {
            changed = false;
            for r in &self.rules {
                if reach.contains(&r.lhs) && r.rhs.iter().all(|s| prod.contains(s)) {
                    for s in &r.rhs {
                        if reach.insert(s.clone()) {
                            changed = true;
                        }
                    }
                }
            }
        }
        let rules: Vec<Rule> = self
            .rules
            .iter()
            .filter(|r| reach.contains(&r.lhs) && r.rhs.iter().all(|s| reach.contains(s)))
            .cloned()
            .collect();
        let initial: Vec<State> = self.initial.iter().filter(|s| reach.contains(*s)).cloned().collect();
        TreeAutomaton::new(self.name.clone(), self.alphabet.clone(), initial, rules, [])
            .expect("reduction preserves well-formedness")
    }

    /// Language intersection: states are pairs, rules pair up rules with the
    /// same symbol. The alphabets are merged (ranks must agree).
    pub fn product(&self, other: &TreeAutomaton) -> Result<TreeAutomaton, String> {
        self.assert_epsilon_free("product");
        other.assert_epsilon_free("product");
        let alphabet = self.alphabet.union(&other.alphabet)?;
        let mut rules = Vec::new();
        for ra in &self.rules {
            for rb in &other.rules {
                if ra.symbol != rb.symbol {
                    continue;
                }
                let rhs = ra
                    .rhs
                    .iter()
                    .zip(&rb.rhs)
                    .map(|(a, b)| State::pair(a.clone(), b.clone()))
                    .collect();
                rules.push(Rule {
                    lhs: State::pair(ra.lhs.clone(), rb.lhs.clone()),
                    symbol: ra.symbol.clone(),
                    rhs,
                });
            }
        }
        let initial: Vec<State> = self
            .initial
            .iter()
            .flat_map(|a| other.initial.iter().map(move |b| State::pair(a.clone(), b.clone())))
            .collect();
        TreeAutomaton::new("product", alphabet, initial, rules, [])
    }

    /// Language union via disjoint renaming of the two state sets.
    pub fn union(&self, other: &TreeAutomaton) -> Result<TreeAutomaton, String> {
        let alphabet = self.alphabet.union(&other.alphabet)?;
        let left = self.map_states(&|s| State::tagged(0, s.clone()));
        let right = other.map_states(&|s| State::tagged(1, s.clone()));
        let rules = left.rules.into_iter().chain(right.rules);
        let eps = left.epsilon_rules.into_iter().chain(right.epsilon_rules);
        let initial = left.initial.into_iter().chain(right.initial);
        TreeAutomaton::new("union", alphabet, initial, rules, eps)
    }

    /// Applies a state renaming everywhere. The caller must keep it injective
    /// on this automaton's states.
    pub(crate) fn map_states(&self, f: &dyn Fn(&State) -> State) -> TreeAutomaton {
        let rules = self.rules.iter().map(|r| Rule {
            lhs: f(&r.lhs),
            symbol: r.symbol.clone(),
            rhs: r.rhs.iter().map(|s| f(s)).collect(),
        });
        let eps = self.epsilon_rules.iter().map(|(p, q)| (f(p), f(q)));
        let initial = self.initial.iter().map(|s| f(s));
        TreeAutomaton::new(self.name.clone(), self.alphabet.clone(), initial, rules, eps)
            .expect("renaming preserves well-formedness")
    }

    /// Replaces epsilon rules by substituting right-hand-side states with
    /// their epsilon-descendants that head a symbol rule, widening the
    /// initial set by the same closure, then reduces. The language is
    /// unchanged.
    pub fn eliminate_epsilon(&self) -> TreeAutomaton {
        if self.is_epsilon_free() {
            return self.reduce();
        }
        let desc = self.epsilon_descendants();
        let heads: BTreeSet<&State> = self.rules.iter().map(|r| &r.lhs).collect();
        let mut rules = Vec::new();
        for r in &self.rules {
            let options: Vec<Vec<State>> = r
                .rhs
                .iter()
                .map(|s| {
                    desc[s]
                        .iter()
                        .filter(|d| heads.contains(*d))
                        .cloned()
                        .collect::<Vec<State>>()
                })
                .collect();
            for rhs in cartesian(&options) {
                rules.push(Rule { lhs: r.lhs.clone(), symbol: r.symbol.clone(), rhs });
            }
        }
        let initial: BTreeSet<State> = self
            .initial
            .iter()
            .flat_map(|s| desc[s].iter().cloned())
            .collect();
        TreeAutomaton::new(self.name.clone(), self.alphabet.clone(), initial, rules, [])
            .expect("closure preserves well-formedness")
            .reduce()
    }

    /// Bottom-up subset construction over the given alphabet. The result is
    /// deterministic and complete on every tree over that alphabet (the empty
    /// subset acts as the sink); its initial states are the subsets meeting
    /// this automaton's initial set.
    pub fn determinize_over(
        &self,
        alphabet: &RankedAlphabet,
        max_states: usize,
    ) -> Result<TreeAutomaton, BudgetExceeded> {
        self.assert_epsilon_free("determinize_over");
        let mut discovered: BTreeSet<Vec<State>> = BTreeSet::new();
        let mut rules: BTreeSet<Rule> = BTreeSet::new();
        // Seed with every nullary symbol's target subset, then close under
        // transitions until no new subset appears: for every symbol and every
        // tuple of discovered subsets, the target subset is discovered too.
        for (sym, rank) in alphabet.symbols() {
            if rank != 0 {
                continue;
            }
            let target = self.subset_target(sym, &[]);
            discovered.insert(target.clone());
            rules.insert(Rule { lhs: State::Subset(target), symbol: sym.clone(), rhs: vec![] });
        }
        let mut changed = true;
        while changed {
            changed = false;
            let all: Vec<Vec<State>> = discovered.iter().cloned().collect();
            for (sym, rank) in alphabet.symbols() {
                if rank == 0 {
                    continue;
                }
                let slots: Vec<Vec<Vec<State>>> = (0..rank).map(|_| all.clone()).collect();
                for combo in cartesian(&slots) {
                    let child_sets: Vec<&[State]> = combo.iter().map(|v| v.as_slice()).collect();
                    let target = self.subset_target(sym, &child_sets);
                    if discovered.insert(target.clone()) {
                        if discovered.len() > max_states {
                            return Err(BudgetExceeded {
                                what: "determinization states".into(),
                                limit: max_states,
                            });
                        }
                        changed = true;
                    }
                    rules.insert(Rule {
                        lhs: State::Subset(target),
                        symbol: sym.clone(),
                        rhs: combo.into_iter().map(State::Subset).collect(),
                    });
                }
            }
        }
        let initial: Vec<State> = discovered
            .iter()
            .filter(|set| set.iter().any(|s| self.initial.contains(s)))
            .map(|set| State::Subset(set.clone()))
            .collect();
        Ok(TreeAutomaton::new(format!("det({})", self.name), alphabet.clone(), initial, rules, [])
            .expect("determinization is well-formed"))
    }

    fn subset_target(&self, symbol: &SymbolName, child_sets: &[&[State]]) -> Vec<State> {
        let mut target = BTreeSet::new();
        for r in &self.rules {
            if &r.symbol == symbol
                && r.rhs.len() == child_sets.len()
                && r.rhs.iter().zip(child_sets).all(|(s, cs)| cs.contains(s))
            {
                target.insert(r.lhs.clone());
            }
        }
        target.into_iter().collect()
    }

    /// Accepts exactly the trees over `alphabet` this automaton rejects.
    pub fn complement_over(
        &self,
        alphabet: &RankedAlphabet,
        max_states: usize,
    ) -> Result<TreeAutomaton, BudgetExceeded> {
        let det = self.determinize_over(alphabet, max_states)?;
        let initial: Vec<State> = det
            .states
            .iter()
            .filter(|s| !det.initial.contains(*s))
            .cloned()
            .collect();
        let mut out = det;
        out.name = format!("co({})", self.name);
        out.initial = initial.into_iter().collect();
        Ok(out)
    }

    pub fn complement(&self, max_states: usize) -> Result<TreeAutomaton, BudgetExceeded> {
        self.complement_over(&self.alphabet.clone(), max_states)
    }

    /// The smallest accepted tree: fewest nodes, ties broken by the
    /// serialized form. `None` iff the language is empty.
    pub fn smallest_accepted(&self) -> Option<DataTree> {
        let mut best: BTreeMap<State, DataTree> = BTreeMap::new();
        let better = |cand: &DataTree, cur: Option<&DataTree>| match cur {
            None => true,
            Some(cur) => {
                (cand.node_count(), cand.to_string()) < (cur.node_count(), cur.to_string())
            }
        };
        let mut changed = true;
        while changed {
            changed = false;
            for r in &self.rules {
                let children: Option<Vec<DataTree>> =
                    r.rhs.iter().map(|s| best.get(s).cloned()).collect();
                let Some(children) = children else { continue };
                let cand = DataTree::new(r.symbol.clone(), None, children);
                if better(&cand, best.get(&r.lhs)) {
                    best.insert(r.lhs.clone(), cand);
                    changed = true;
                }
            }
            for (p, q) in &self.epsilon_rules {
                let Some(cand) = best.get(q).cloned() else { continue };
                if better(&cand, best.get(p)) {
                    best.insert(p.clone(), cand);
                    changed = true;
                }
            }
        }
        self.initial
            .iter()
            .filter_map(|s| best.get(s))
            .min_by_key(|t| (t.node_count(), t.to_string()))
            .cloned()
    }

    /// A tree with an accepting run that visits `target` at some position,
    /// together with that position. Deterministic; not necessarily minimal.
    pub fn certificate_for_state(&self, target: &State) -> Option<(DataTree, Position)> {
        self.certificate(target, None)
    }

    /// Like [`TreeAutomaton::certificate_for_state`], with the additional
    /// demand that the node at the certified position carry `symbol`.
    pub fn certificate_for_state_rule(
        &self,
        target: &State,
        symbol: &SymbolName,
    ) -> Option<(DataTree, Position)> {
        self.certificate(target, Some(symbol))
    }

    fn certificate(&self, target: &State, symbol: Option<&SymbolName>) -> Option<(DataTree, Position)> {
        self.assert_epsilon_free("certificate_for_state");
        // Smallest tree accepted from each state.
        let mut best: BTreeMap<State, DataTree> = BTreeMap::new();
        let mut changed = true;
        while changed {
            changed = false;
            for r in &self.rules {
                let children: Option<Vec<DataTree>> =
                    r.rhs.iter().map(|s| best.get(s).cloned()).collect();
                let Some(children) = children else { continue };
                let cand = DataTree::new(r.symbol.clone(), None, children);
                let cur = best.get(&r.lhs);
                if cur.map(|c| (cand.node_count(), cand.to_string()) < (c.node_count(), c.to_string()))
                    .unwrap_or(true)
                {
                    best.insert(r.lhs.clone(), cand);
                    changed = true;
                }
            }
        }
        // The subtree plugged in at the target state, honoring the symbol
        // demand if present.
        let plug = match symbol {
            None => best.get(target).cloned()?,
            Some(sym) => self
                .rules
                .iter()
                .filter(|r| &r.lhs == target && &r.symbol == sym)
                .filter_map(|r| {
                    let children: Option<Vec<DataTree>> =
                        r.rhs.iter().map(|s| best.get(s).cloned()).collect();
                    Some(DataTree::new(r.symbol.clone(), None, children?))
                })
                .min_by_key(|t| (t.node_count(), t.to_string()))?,
        };
        // Breadth-first search from the initial states down to the target,
        // remembering how each state was reached.
        #[derive(Clone)]
        struct Via {
            rule_ix: usize,
            slot: usize,
            from: State,
        }
        let mut via: BTreeMap<State, Option<Via>> = BTreeMap::new();
        let mut queue: VecDeque<State> = VecDeque::new();
        for s in &self.initial {
            if !via.contains_key(s) {
                via.insert(s.clone(), None);
                queue.push_back(s.clone());
            }
        }
        while let Some(s) = queue.pop_front() {
            if &s == target {
                break;
            }
            for (rule_ix, r) in self.rules.iter().enumerate() {
                if r.lhs != s {
                    continue;
                }
                // Only descend through rules whose siblings can all be
                // filled in, so the final tree is well-defined.
                if !r.rhs.iter().all(|q| best.contains_key(q)) {
                    continue;
                }
                for (slot, q) in r.rhs.iter().enumerate() {
                    if !via.contains_key(q) {
                        via.insert(q.clone(), Some(Via { rule_ix, slot, from: s.clone() }));
                        queue.push_back(q.clone());
                    }
                }
            }
        }
        via.get(target)?;
        // Rebuild the tree from the target upward.
        let mut tree = plug;
        let mut at_rev: Vec<u32> = Vec::new();
        let mut cur = target.clone();
        while let Some(step) = via.get(&cur).cloned().flatten() {
            let r = &self.rules[step.rule_ix];
            let mut children: Vec<DataTree> = Vec::with_capacity(r.rhs.len());
            for (i, q) in r.rhs.iter().enumerate() {
                if i == step.slot {
                    children.push(tree);
                    tree = DataTree::leaf(SymbolName::new("placeholder"));
                } else {
                    children.push(best[q].clone());
                }
            }
            tree = DataTree::new(r.symbol.clone(), None, children);
            at_rev.push(step.slot as u32 + 1);
            cur = step.from;
        }
        let at = Position::from_indices(at_rev.into_iter().rev().collect::<Vec<u32>>());
        Some((tree, at))
    }

    /// Language equality, with a minimal witness from the symmetric
    /// difference on failure.
    pub fn equivalent(
        &self,
        other: &TreeAutomaton,
        max_states: usize,
    ) -> Result<Equivalence, BudgetExceeded> {
        let alphabet = self
            .alphabet
            .union(&other.alphabet)
            .unwrap_or_else(|e| panic!("cannot compare languages: {e}"));
        let only_first = self
            .product(&other.complement_over(&alphabet, max_states)?)
            .expect("alphabets merged")
            .smallest_accepted();
        let only_second = other
            .product(&self.complement_over(&alphabet, max_states)?)
            .expect("alphabets merged")
            .smallest_accepted();
        let witness = match (only_first, only_second) {
            (None, None) => None,
            (Some(t), None) => Some((DiffSide::FirstOnly, t)),
            (None, Some(t)) => Some((DiffSide::SecondOnly, t)),
            (Some(a), Some(b)) => {
                if (a.node_count(), a.to_string()) <= (b.node_count(), b.to_string()) {
                    Some((DiffSide::FirstOnly, a))
                } else {
                    Some((DiffSide::SecondOnly, b))
                }
            }
        };
        Ok(Equivalence { equal: witness.is_none(), witness })
    }

    /// Language inclusion L(self) ⊆ L(other), with a minimal witness from
    /// the difference on failure.
    pub fn included(
        &self,
        other: &TreeAutomaton,
        max_states: usize,
    ) -> Result<Inclusion, BudgetExceeded> {
        let alphabet = self
            .alphabet
            .union(&other.alphabet)
            .unwrap_or_else(|e| panic!("cannot compare languages: {e}"));
        let witness = self
            .product(&other.complement_over(&alphabet, max_states)?)
            .expect("alphabets merged")
            .smallest_accepted();
        Ok(Inclusion { holds: witness.is_none(), witness })
    }

    /// The size of the largest accepted tree, or `None` when the language is
    /// infinite. The empty language reports `Some(0)`.
    pub fn max_tree_size(&self) -> Option<usize> {
        self.assert_epsilon_free("max_tree_size");
        let red = self.reduce();
        // A reduced automaton has an infinite language iff its state
        // dependency graph has a cycle.
        let mut edges: BTreeMap<&State, BTreeSet<&State>> = BTreeMap::new();
        for r in &red.rules {
            for q in &r.rhs {
                edges.entry(&r.lhs).or_default().insert(q);
            }
        }
        // Iterative depth-first cycle detection.
        let mut color: BTreeMap<&State, u8> = BTreeMap::new(); // 1 = open, 2 = done
        for start in &red.states {
            if color.contains_key(start) {
                continue;
            }
            let mut stack: Vec<(&State, bool)> = vec![(start, false)];
            while let Some((s, leaving)) = stack.pop() {
                if leaving {
                    color.insert(s, 2);
                    continue;
                }
                match color.get(s) {
                    Some(1) => return None,
                    Some(2) => continue,
                    _ => {}
                }
                color.insert(s, 1);
                stack.push((s, true));
                if let Some(next) = edges.get(s) {
                    for q in next {
                        match color.get(q) {
                            Some(1) => return None,
                            Some(2) => {}
                            _ => stack.push((q, false)),
                        }
                    }
                }
            }
        }
        // Acyclic: longest derivation per state by memoized descent.
        fn depth<'a>(
            s: &'a State,
            red: &'a TreeAutomaton,
            memo: &mut BTreeMap<&'a State, usize>,
        ) -> usize {
            if let Some(&d) = memo.get(s) {
                return d;
            }
            let mut m = 0usize;
            for r in red.rules.iter().filter(|r| &r.lhs == s) {
                let total = 1 + r.rhs.iter().map(|q| depth(q, red, memo)).sum::<usize>();
                m = m.max(total);
            }
            memo.insert(s, m);
            m
        }
        let mut memo = BTreeMap::new();
        Some(red.initial.iter().map(|s| depth(s, &red, &mut memo)).max().unwrap_or(0))
    }

    /// The one-state automaton accepting every tree over the alphabet.
    pub fn universal(alphabet: &RankedAlphabet) -> TreeAutomaton {
        let rules = alphabet.symbols().map(|(sym, rank)| Rule {
            lhs: State::Any,
            symbol: sym.clone(),
            rhs: vec![State::Any; rank],
        });
        TreeAutomaton::new("universal", alphabet.clone(), [State::Any], rules, [])
            .expect("universal automaton is well-formed")
    }

    /// The automaton accepting no tree at all.
    pub fn empty(alphabet: &RankedAlphabet) -> TreeAutomaton {
        TreeAutomaton::new("empty", alphabet.clone(), [], [], [])
            .expect("empty automaton is well-formed")
    }

    /// The automaton accepting exactly the given valueless tree.
    pub fn singleton(t: &DataTree, alphabet: &RankedAlphabet) -> TreeAutomaton {
        let mut rules = Vec::new();
        for at in t.positions() {
            let node = t.subtree(&at).unwrap();
            let rhs = (0..node.children.len())
                .map(|i| State::named(format!("n_{}", at.child(i as u32 + 1))))
                .collect();
            rules.push(Rule {
                lhs: State::named(format!("n_{at}")),
                symbol: node.symbol.clone(),
                rhs,
            });
        }
        TreeAutomaton::new(
            "singleton",
            alphabet.clone(),
            [State::named(format!("n_{}", Position::root()))],
            rules,
            [],
        )
        .expect("singleton automaton is well-formed")
    }
}

fn fill_feasible(
    a: &TreeAutomaton,
    t: &DataTree,
    at: &Position,
    out: &mut BTreeMap<Position, BTreeSet<State>>,
) {
    for (i, c) in t.children.iter().enumerate() {
        fill_feasible(a, c, &at.child(i as u32 + 1), out);
    }
    let mut set = BTreeSet::new();
    for r in &a.rules {
        if r.symbol == t.symbol
            && r.rhs.len() == t.children.len()
            && r.rhs
                .iter()
                .enumerate()
                .all(|(i, s)| out[&at.child(i as u32 + 1)].contains(s))
        {
            set.insert(r.lhs.clone());
        }
    }
    out.insert(at.clone(), set);
}

const KEYWORDS: &[&str] =
    &["automaton", "sym", "state", "initial", "rule", "select", "transducer", "insym", "outsym"];

pub(crate) fn is_plain_name(word: &str) -> bool {
    !word.is_empty()
        && word.chars().next().map(|c| c.is_ascii_alphabetic() || c == '_').unwrap_or(false)
        && word.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !KEYWORDS.contains(&word)
}

pub(crate) struct ParsedAutomatonFile {
    pub automaton: TreeAutomaton,
    pub selections: Vec<Vec<State>>,
}

/// Parses the shared automaton file body. Query files additionally allow
/// `select (p, q)` lines; plain automaton files reject them.
pub(crate) fn parse_automaton_file(
    text: &str,
    allow_select: bool,
) -> Result<ParsedAutomatonFile, ParseError> {
    let mut toks = Tokens::new(text)?;
    let (kw, line, col) = toks.expect_word()?;
    if kw != "automaton" {
        return Err(error(line, col, format!("expected 'automaton NAME', found '{kw}'")));
    }
    let (name, line, col) = toks.expect_word()?;
    if !is_plain_name(&name) {
        return Err(error(line, col, format!("bad automaton name '{name}'")));
    }
    let mut alphabet = RankedAlphabet::new();
    let mut declared: BTreeSet<String> = BTreeSet::new();
    let mut initial: Vec<String> = Vec::new();
    let mut raw_rules: Vec<(String, String, Vec<String>, usize, usize)> = Vec::new();
    let mut raw_eps: Vec<(String, String)> = Vec::new();
    let mut selections: Vec<Vec<String>> = Vec::new();
    let mut sel_positions: Vec<(usize, usize)> = Vec::new();

    while !toks.at_end() {
        let (kw, line, col) = toks.expect_word()?;
        match kw.as_str() {
            "sym" => {
                let (w, l, c) = toks.expect_word()?;
                let sym = SymbolName::parse(&w, l, c)?;
                let (rank_w, l, c) = toks.expect_word()?;
                let rank: usize = rank_w
                    .parse()
                    .map_err(|_| error(l, c, format!("bad rank '{rank_w}'")))?;
                if alphabet.contains(&sym) {
                    return Err(error(l, c, format!("symbol '{sym}' declared twice")));
                }
                alphabet.insert(sym, rank);
            }
            "state" => {
                let mut any = false;
                while let Some(s) = toks.peek() {
                    let Token::Word(w) = &s.tok else { break };
                    if KEYWORDS.contains(&w.as_str()) {
                        break;
                    }
                    let (w, l, c) = toks.expect_word()?;
                    if !is_plain_name(&w) {
                        return Err(error(l, c, format!("bad state name '{w}'")));
                    }
                    declared.insert(w);
                    any = true;
                }
                if !any {
                    return Err(toks.err("expected at least one state name"));
                }
            }
            "initial" => {
                let mut any = false;
                while let Some(s) = toks.peek() {
                    let Token::Word(w) = &s.tok else { break };
                    if KEYWORDS.contains(&w.as_str()) {
                        break;
                    }
                    let (w, _, _) = toks.expect_word()?;
                    initial.push(w);
                    any = true;
                }
                if !any {
                    return Err(toks.err("expected at least one initial state"));
                }
            }
            "rule" => {
                let (lhs, l0, c0) = toks.expect_word()?;
                toks.expect(&Token::Arrow)?;
                let (head, l, c) = toks.expect_word()?;
                let mut args = Vec::new();
                let parenthesized = matches!(toks.peek().map(|s| &s.tok), Some(Token::LParen));
                if parenthesized {
                    toks.expect(&Token::LParen)?;
                    loop {
                        let (w, _, _) = toks.expect_word()?;
                        args.push(w);
                        match toks.peek().map(|s| &s.tok) {
                            Some(Token::Comma) => {
                                toks.next();
                            }
                            Some(Token::RParen) => {
                                toks.next();
                                break;
                            }
                            _ => return Err(toks.err("expected ',' or ')' in rule")),
                        }
                    }
                }
                let _ = (l0, c0);
                raw_rules.push((lhs, head, args, l, c));
            }
            "select" if allow_select => {
                let (line, col) = toks.here();
                toks.expect(&Token::LParen)?;
                let mut tuple = Vec::new();
                loop {
                    let (w, _, _) = toks.expect_word()?;
                    tuple.push(w);
                    match toks.peek().map(|s| &s.tok) {
                        Some(Token::Comma) => {
                            toks.next();
                        }
                        Some(Token::RParen) => {
                            toks.next();
                            break;
                        }
                        _ => return Err(toks.err("expected ',' or ')' in select")),
                    }
                }
                selections.push(tuple);
                sel_positions.push((line, col));
            }
            "select" => {
                return Err(error(line, col, "'select' is only allowed in query files"));
            }
            other => {
                return Err(error(line, col, format!("unknown directive '{other}'")));
            }
        }
    }

    // A name may not denote both a state and a symbol: `rule p -> a` would
    // otherwise be ambiguous between a leaf rule and an epsilon rule.
    for s in &declared {
        if alphabet.contains(&SymbolName::new(s.clone())) {
            return Err(error(1, 1, format!("'{s}' is declared as both a state and a symbol")));
        }
    }
    let mut rules = Vec::new();
    for (lhs, head, args, l, c) in raw_rules {
        if !declared.contains(&lhs) {
            return Err(error(l, c, format!("undeclared state '{lhs}'")));
        }
        let head_sym = SymbolName::parse(&head, l, c).ok().filter(|s| alphabet.contains(s));
        match head_sym {
            Some(sym) => {
                let rank = alphabet.rank(&sym).unwrap();
                if args.len() != rank {
                    return Err(error(
                        l,
                        c,
                        format!("symbol '{sym}' has rank {rank} but {} arguments", args.len()),
                    ));
                }
                let mut rhs = Vec::new();
                for a in &args {
                    if !declared.contains(a) {
                        return Err(error(l, c, format!("undeclared state '{a}'")));
                    }
                    rhs.push(State::named(a.clone()));
                }
                rules.push(Rule { lhs: State::named(lhs), symbol: sym, rhs });
            }
            None => {
                if !args.is_empty() {
                    return Err(error(l, c, format!("unknown symbol '{head}'")));
                }
                if !declared.contains(&head) {
                    return Err(error(l, c, format!("unknown symbol or state '{head}'")));
                }
                raw_eps.push((lhs, head));
            }
        }
    }
    for s in &initial {
        if !declared.contains(s) {
            return Err(error(1, 1, format!("undeclared initial state '{s}'")));
        }
    }
    let eps = raw_eps
        .into_iter()
        .map(|(p, q)| (State::named(p), State::named(q)));
    let mut automaton =
        TreeAutomaton::new(name, alphabet, initial.into_iter().map(State::named), rules, eps)
            .map_err(|e| error(1, 1, e))?;
    automaton.states.extend(declared.iter().map(|s| State::named(s.clone())));

    let mut sels = Vec::new();
    for (tuple, (l, c)) in selections.into_iter().zip(sel_positions) {
        let mut out = Vec::new();
        for s in tuple {
            if !automaton.states.contains(&State::named(s.clone())) {
                return Err(error(l, c, format!("select uses undeclared state '{s}'")));
            }
            out.push(State::named(s));
        }
        sels.push(out);
    }
    Ok(ParsedAutomatonFile { automaton, selections: sels })
}

/// Parses the automaton file format.
pub fn parse_automaton(text: &str) -> Result<TreeAutomaton, ParseError> {
    Ok(parse_automaton_file(text, false)?.automaton)
}

/// Renders an automaton in the file format. Structured states are renamed to
/// `s0, s1, …` (in sorted state order) with their original forms kept in
/// comments; automata whose states are all plain names keep them.
pub fn render_automaton(a: &TreeAutomaton) -> String {
    render_automaton_with(a, &[])
}

pub(crate) fn render_automaton_with(a: &TreeAutomaton, selections: &[Vec<State>]) -> String {
    let keep_names = a.states.iter().all(|s| match s {
        State::Named(n) => is_plain_name(n) && !a.alphabet.contains(&SymbolName::new(n.clone())),
        _ => false,
    });
    let mut rename: BTreeMap<&State, String> = BTreeMap::new();
    let mut comments = String::new();
    if keep_names {
        for s in &a.states {
            if let State::Named(n) = s {
                rename.insert(s, n.clone());
            }
        }
    } else {
        // Pick a prefix that cannot collide with a symbol name.
        let mut prefix = "s".to_string();
        let collides = |prefix: &str| {
            a.alphabet.symbols().any(|(sym, _)| {
                sym.mark.is_none()
                    && sym.base.starts_with(prefix)
                    && sym.base[prefix.len()..].chars().all(|c| c.is_ascii_digit())
                    && !sym.base[prefix.len()..].is_empty()
            })
        };
        while collides(&prefix) {
            prefix.push('s');
        }
        for (i, s) in a.states.iter().enumerate() {
            rename.insert(s, format!("{prefix}{i}"));
            comments.push_str(&format!("# state {prefix}{i} = {s}\n"));
        }
    }
    let name = if is_plain_name(&a.name) { a.name.clone() } else { "anon".to_string() };
    let mut out = format!("automaton {name}\n");
    out.push_str(&comments);
    for (sym, rank) in a.alphabet.symbols() {
        out.push_str(&format!("sym {sym} {rank}\n"));
    }
    if !a.states.is_empty() {
        out.push_str("state");
        for s in &a.states {
            out.push_str(&format!(" {}", rename[s]));
        }
        out.push('\n');
    }
    if !a.initial.is_empty() {
        out.push_str("initial");
        for s in &a.initial {
            out.push_str(&format!(" {}", rename[s]));
        }
        out.push('\n');
    }
    for r in &a.rules {
        out.push_str(&format!("rule {} -> {}", rename[&r.lhs], r.symbol));
        if !r.rhs.is_empty() {
            out.push('(');
            for (i, s) in r.rhs.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&rename[s]);
            }
            out.push(')');
        }
        out.push('\n');
    }
    for (p, q) in &a.epsilon_rules {
        out.push_str(&format!("rule {} -> {}\n", rename[p], rename[q]));
    }
    for tuple in selections {
        out.push_str("select (");
        for (i, s) in tuple.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(&rename[s]);
        }
        out.push_str(")\n");
    }
    out
}
