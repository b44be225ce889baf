//! Deterministic linear top-down data tree transducers.
//!
//! A rule `p (σ z x1 .. xn) -> C` consumes a node labelled σ (binding its
//! value to z) in state p and emits the output context C, whose variables are
//! wrapped in successor states, e.g. `(h^z (q x1) (q x2))`. `^z` designates
//! the output node that receives the consumed value; a rule without `^z`
//! drops the value, and a variable absent from C deletes that subtree.
//! Determinism: one initial state, at most one rule per (state, symbol).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::automaton::{cartesian, Rule, TreeAutomaton};
use crate::state::State;
use crate::syntax::{error, ParseError, Token, Tokens};
use crate::tree::{Context, CtxNode, DataTree, Position, RankedAlphabet, SymbolName};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TransducerRule {
    pub state: State,
    /// Input symbol of rank n.
    pub symbol: SymbolName,
    /// Output context over the output alphabet and variables x1..xn.
    pub context: Context,
    /// One entry per input child; `None` marks a deleted child (its variable
    /// does not occur in the context).
    pub child_states: Vec<Option<State>>,
    /// Position in the context receiving the consumed node's value; `None`
    /// for value-erasing rules.
    pub value_position: Option<Position>,
}

impl TransducerRule {
    /// Some input child's subtree vanishes from the output.
    pub fn is_subtree_deleting(&self) -> bool {
        self.child_states.iter().any(|s| s.is_none())
    }

    /// The consumed node's value is dropped.
    pub fn is_value_erasing(&self) -> bool {
        self.value_position.is_none()
    }
}

impl fmt::Display for TransducerRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} z", self.state, self.symbol)?;
        for i in 1..=self.child_states.len() {
            write!(f, " x{i}")?;
        }
        write!(f, ") -> ")?;
        fn node(
            r: &TransducerRule,
            n: &CtxNode,
            at: &Position,
            f: &mut fmt::Formatter<'_>,
        ) -> fmt::Result {
            match n {
                CtxNode::Var(i) => {
                    let state = r.child_states[*i as usize - 1]
                        .as_ref()
                        .expect("occurring variable has a state");
                    write!(f, "({state} x{i})")
                }
                CtxNode::Sym { symbol, children } => {
                    write!(f, "({symbol}")?;
                    if r.value_position.as_ref() == Some(at) {
                        write!(f, "^z")?;
                    }
                    for (i, c) in children.iter().enumerate() {
                        write!(f, " ")?;
                        node(r, c, &at.child(i as u32 + 1), f)?;
                    }
                    write!(f, ")")
                }
            }
        }
        node(self, &self.context.root, &Position::root(), f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transducer {
    pub name: String,
    pub input_alphabet: RankedAlphabet,
    pub output_alphabet: RankedAlphabet,
    pub states: BTreeSet<State>,
    pub initial: State,
    /// Sorted; at most one rule per (state, symbol).
    pub rules: Vec<TransducerRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApplyError {
    #[error("input tree is not proper: the node at {0} has no value")]
    ImproperInput(Position),
    #[error("not in domain: no rule for state {state} and symbol '{symbol}' (reached at {at})")]
    NotInDomain { state: State, symbol: SymbolName, at: Position },
}

/// What happened to each input node during one application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fate {
    /// The node's value was copied to this output position.
    Copied(Position),
    /// The node was consumed by a value-erasing rule.
    Erased,
    /// The node sits in a deleted subtree and produced no output.
    Deleted,
}

pub type Trace = BTreeMap<Position, Fate>;

impl Transducer {
    pub fn new(
        name: impl Into<String>,
        input_alphabet: RankedAlphabet,
        output_alphabet: RankedAlphabet,
        initial: State,
        rules: impl IntoIterator<Item = TransducerRule>,
    ) -> Result<Self, String> {
        let mut rules: Vec<TransducerRule> = rules.into_iter().collect();
        rules.sort();
        rules.dedup();
        let mut seen: BTreeSet<(&State, &SymbolName)> = BTreeSet::new();
        for r in &rules {
            if !seen.insert((&r.state, &r.symbol)) {
                return Err(format!(
                    "two rules for state {} and symbol '{}'; transducers are deterministic",
                    r.state, r.symbol
                ));
            }
            let rank = match input_alphabet.rank(&r.symbol) {
                Some(k) => k,
                None => return Err(format!("rule consumes unknown input symbol '{}'", r.symbol)),
            };
            if r.child_states.len() != rank {
                return Err(format!(
                    "rule for '{}' lists {} child states but the symbol has rank {rank}",
                    r.symbol,
                    r.child_states.len()
                ));
            }
            if r.context.vars != rank {
                return Err(format!(
                    "rule for '{}' has a context over {} variables but the symbol has rank {rank}",
                    r.symbol, r.context.vars
                ));
            }
            r.context.check_alphabet(&output_alphabet)?;
            for i in 1..=rank {
                let occurs = r.context.occurs(i as u32);
                let has_state = r.child_states[i - 1].is_some();
                if occurs != has_state {
                    return Err(format!(
                        "rule for '{}': variable x{i} {} the context but {} a state",
                        r.symbol,
                        if occurs { "occurs in" } else { "is absent from" },
                        if has_state { "has" } else { "lacks" },
                    ));
                }
            }
            if let Some(j) = &r.value_position {
                match r.context.node(j) {
                    Some(CtxNode::Sym { .. }) => {}
                    Some(CtxNode::Var(_)) => {
                        return Err(format!(
                            "rule for '{}': the value position {j} is a variable",
                            r.symbol
                        ))
                    }
                    None => {
                        return Err(format!(
                            "rule for '{}': the value position {j} is not in the context",
                            r.symbol
                        ))
                    }
                }
            }
        }
        let mut states: BTreeSet<State> = BTreeSet::from([initial.clone()]);
        for r in &rules {
            states.insert(r.state.clone());
            states.extend(r.child_states.iter().flatten().cloned());
        }
        Ok(Transducer {
            name: name.into(),
            input_alphabet,
            output_alphabet,
            states,
            initial,
            rules,
        })
    }

    pub fn rule_for(&self, state: &State, symbol: &SymbolName) -> Option<&TransducerRule> {
        self.rules.iter().find(|r| &r.state == state && &r.symbol == symbol)
    }

    pub fn has_value_designation(&self) -> bool {
        self.rules.iter().any(|r| r.value_position.is_some())
    }

    /// Transforms a tree in a single top-down pass. Input must be proper when
    /// any rule designates a value position; transducers without designations
    /// (such as stripped ones) also accept valueless trees.
    pub fn apply(&self, t: &DataTree) -> Result<DataTree, ApplyError> {
        Ok(self.apply_traced(t)?.0)
    }

    /// Like [`Transducer::apply`], also reporting every input node's fate.
    pub fn apply_traced(&self, t: &DataTree) -> Result<(DataTree, Trace), ApplyError> {
        if self.has_value_designation() {
            if let Some(at) = first_unvalued(t, &Position::root()) {
                return Err(ApplyError::ImproperInput(at));
            }
        }
        let mut trace = Trace::new();
        let out = self.transform(t, &Position::root(), &self.initial, &Position::root(), &mut trace)?;
        Ok((out, trace))
    }

    fn transform(
        &self,
        t: &DataTree,
        at: &Position,
        state: &State,
        out_at: &Position,
        trace: &mut Trace,
    ) -> Result<DataTree, ApplyError> {
        let rule = self.rule_for(state, &t.symbol).ok_or_else(|| ApplyError::NotInDomain {
            state: state.clone(),
            symbol: t.symbol.clone(),
            at: at.clone(),
        })?;
        trace.insert(
            at.clone(),
            match &rule.value_position {
                Some(j) => Fate::Copied(out_at.join(j)),
                None => Fate::Erased,
            },
        );
        let mut failure: Option<ApplyError> = None;
        let out = rule.context.substitute_with(&mut |i| {
            let child = &t.children[i as usize - 1];
            let child_at = at.child(i);
            let child_state = rule.child_states[i as usize - 1].as_ref().expect("occurring");
            let child_out_at = out_at.join(&rule.context.var_position(i).expect("occurring"));
            match self.transform(child, &child_at, child_state, &child_out_at, trace) {
                Ok(tree) => Some(tree),
                Err(e) => {
                    failure.get_or_insert(e);
                    None
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let mut out = out.expect("all occurring variables supplied");
        for (i, done) in rule.child_states.iter().enumerate() {
            if done.is_none() {
                mark_deleted(&t.children[i], &at.child(i as u32 + 1), trace);
            }
        }
        if let Some(j) = &rule.value_position {
            let v = t.value.clone().expect("properness checked up front");
            out = out.set_value(j, v).expect("value position is in the context");
        }
        Ok(out)
    }

    /// The same transducer with every value designation removed; it then
    /// operates on valueless trees.
    pub fn strip_transducer(&self) -> Transducer {
        let rules = self.rules.iter().map(|r| TransducerRule {
            value_position: None,
            ..r.clone()
        });
        Transducer::new(
            format!("strip({})", self.name),
            self.input_alphabet.clone(),
            self.output_alphabet.clone(),
            self.initial.clone(),
            rules,
        )
        .expect("stripping preserves validity")
    }

    /// The automaton over input shapes whose unique run labels exactly the
    /// deleted subtrees with the sink state: each rule maps child i to its
    /// successor state, or to the universal sink when x_i is deleted. Its
    /// language is the set of domain shapes.
    pub fn deletion_automaton(&self) -> TreeAutomaton {
        let mut rules = Vec::new();
        for r in &self.rules {
            let rhs = r
                .child_states
                .iter()
                .map(|s| s.clone().unwrap_or(State::Bottom))
                .collect();
            rules.push(Rule { lhs: r.state.clone(), symbol: r.symbol.clone(), rhs });
        }
        for (sym, rank) in self.input_alphabet.symbols() {
            rules.push(Rule {
                lhs: State::Bottom,
                symbol: sym.clone(),
                rhs: vec![State::Bottom; rank],
            });
        }
        TreeAutomaton::new(
            format!("del({})", self.name),
            self.input_alphabet.clone(),
            [self.initial.clone()],
            rules,
            [],
        )
        .expect("deletion automaton is well-formed")
    }

    /// Accepts a shape iff applying the transducer to any valuation of it
    /// succeeds.
    pub fn domain_automaton(&self) -> TreeAutomaton {
        let mut a = self
            .deletion_automaton()
            .map_states(&|s| if s == &State::Bottom { State::Any } else { s.clone() });
        a.name = format!("dom({})", self.name);
        a
    }

    /// The forward image of `a`'s language: an automaton over the output
    /// alphabet accepting { Tr(t)⁻ | t ∈ L(a) ∩ dom(Tr) }.
    pub fn forward_type(&self, a: &TreeAutomaton) -> TreeAutomaton {
        let mut out = image_automaton_raw(a, self).eliminate_epsilon();
        out.name = format!("img({})", a.name);
        out
    }

    /// The inverse image of `b`'s language: an automaton over the input
    /// alphabet accepting { t⁻ | t ∈ dom(Tr), Tr(t)⁻ ∈ L(b) }.
    pub fn inverse_type(&self, b: &TreeAutomaton) -> TreeAutomaton {
        assert!(b.is_epsilon_free(), "inverse_type requires an epsilon-free automaton");
        let mut rules: Vec<Rule> = Vec::new();
        for r in &self.rules {
            for q in &b.states {
                for assignment in context_assignments(&r.context.root, q, b) {
                    let rhs = r
                        .child_states
                        .iter()
                        .enumerate()
                        .map(|(i, s)| match s {
                            Some(p) => State::pair(
                                p.clone(),
                                assignment[&(i as u32 + 1)].clone(),
                            ),
                            None => State::Any,
                        })
                        .collect();
                    rules.push(Rule {
                        lhs: State::pair(r.state.clone(), q.clone()),
                        symbol: r.symbol.clone(),
                        rhs,
                    });
                }
            }
        }
        for (sym, rank) in self.input_alphabet.symbols() {
            rules.push(Rule { lhs: State::Any, symbol: sym.clone(), rhs: vec![State::Any; rank] });
        }
        let initial = b
            .initial
            .iter()
            .map(|q| State::pair(self.initial.clone(), q.clone()));
        TreeAutomaton::new(
            format!("pre({})", b.name),
            self.input_alphabet.clone(),
            initial,
            rules,
            [],
        )
        .expect("inverse image automaton is well-formed")
        .reduce()
    }

    /// The transducer over index-marked alphabets used by the strong
    /// preservation procedure: every rule keeps an unmarked, value-stripped
    /// version, and every rule with a value designation additionally gets,
    /// for each mark i, a variant consuming `(i,σ)` whose context carries the
    /// mark at the designated position. Value-erasing rules get no marked
    /// variants: a mark stands for a tracked value occurrence, and an erasing
    /// rule has none to track.
    pub fn mark_transducer(&self, n: u32) -> Transducer {
        let input = self.input_alphabet.with_marks(n);
        let output = self.output_alphabet.with_marks(n);
        let mut rules = Vec::new();
        for r in &self.rules {
            rules.push(TransducerRule { value_position: None, ..r.clone() });
            let Some(j) = &r.value_position else { continue };
            for i in 1..=n {
                let marked_ctx = mark_context_at(&r.context, j, i);
                rules.push(TransducerRule {
                    state: r.state.clone(),
                    symbol: r.symbol.with_mark(i),
                    context: marked_ctx,
                    child_states: r.child_states.clone(),
                    value_position: None,
                });
            }
        }
        Transducer::new(format!("mk({})", self.name), input, output, self.initial.clone(), rules)
            .expect("marking preserves validity")
    }
}

fn first_unvalued(t: &DataTree, at: &Position) -> Option<Position> {
    if t.value.is_none() {
        return Some(at.clone());
    }
    for (i, c) in t.children.iter().enumerate() {
        if let Some(p) = first_unvalued(c, &at.child(i as u32 + 1)) {
            return Some(p);
        }
    }
    None
}

fn mark_deleted(t: &DataTree, at: &Position, trace: &mut Trace) {
    trace.insert(at.clone(), Fate::Deleted);
    for (i, c) in t.children.iter().enumerate() {
        mark_deleted(c, &at.child(i as u32 + 1), trace);
    }
}

fn mark_context_at(c: &Context, at: &Position, mark: u32) -> Context {
    fn go(n: &CtxNode, rest: &[u32], mark: u32) -> CtxNode {
        match (n, rest.split_first()) {
            (CtxNode::Sym { symbol, children }, None) => CtxNode::Sym {
                symbol: symbol.with_mark(mark),
                children: children.clone(),
            },
            (CtxNode::Sym { symbol, children }, Some((&ix, rest))) => {
                let mut children = children.clone();
                let slot = ix as usize - 1;
                children[slot] = go(&children[slot], rest, mark);
                CtxNode::Sym { symbol: symbol.clone(), children }
            }
            (CtxNode::Var(_), _) => unreachable!("value positions are symbol nodes"),
        }
    }
    Context { vars: c.vars, root: go(&c.root, at.indices(), mark) }
}

/// All assignments of `b`-states to the variables of a context such that the
/// context itself evaluates under `b` from `q`: symbol nodes must follow
/// `b`-rules, variables take the state demanded of their position.
fn context_assignments(
    node: &CtxNode,
    q: &State,
    b: &TreeAutomaton,
) -> Vec<BTreeMap<u32, State>> {
    match node {
        CtxNode::Var(i) => vec![BTreeMap::from([(*i, q.clone())])],
        CtxNode::Sym { symbol, children } => {
            let mut out = Vec::new();
            for rule in b.rules_for(q, symbol) {
                let child_options: Vec<Vec<BTreeMap<u32, State>>> = children
                    .iter()
                    .zip(&rule.rhs)
                    .map(|(c, qc)| context_assignments(c, qc, b))
                    .collect();
                for combo in cartesian(&child_options) {
                    let mut merged = BTreeMap::new();
                    for m in combo {
                        merged.extend(m);
                    }
                    out.push(merged);
                }
            }
            out
        }
    }
}

/// The raw image automaton over the output alphabet: one state per reachable
/// (query, transducer) state pair plus one per internal context position of
/// each rule pair, with epsilon rules where a context is a bare variable.
/// Callers run `eliminate_epsilon` on the result.
///
/// The input automaton is reduced first so that a rule pair deleting a child
/// never pretends an empty input language exists below the deleted slot.
/// Reduction is idempotent, so callers that need the positional states'
/// rule indices to match their own copy should pass an already reduced
/// automaton.
pub(crate) fn image_automaton_raw(a: &TreeAutomaton, tr: &Transducer) -> TreeAutomaton {
    assert!(a.is_epsilon_free(), "image construction requires an epsilon-free automaton");
    let a = a.reduce();
    let mut rules: Vec<Rule> = Vec::new();
    let mut eps: Vec<(State, State)> = Vec::new();
    for (ia, ra) in a.rules.iter().enumerate() {
        for (it, rt) in tr.rules.iter().enumerate() {
            if ra.symbol != rt.symbol {
                continue;
            }
            let pair_at = |at: &Position, node: &CtxNode| -> State {
                match node {
                    CtxNode::Var(i) => {
                        let pa = ra.rhs[*i as usize - 1].clone();
                        let pt = rt.child_states[*i as usize - 1]
                            .clone()
                            .expect("occurring variable has a state");
                        State::pair(pa, pt)
                    }
                    CtxNode::Sym { .. } => {
                        if at.is_root() {
                            State::pair(ra.lhs.clone(), rt.state.clone())
                        } else {
                            State::Ctx { arule: ia, trule: it, at: at.clone() }
                        }
                    }
                }
            };
            match &rt.context.root {
                CtxNode::Var(_) => {
                    let src = State::pair(ra.lhs.clone(), rt.state.clone());
                    eps.push((src, pair_at(&Position::root(), &rt.context.root)));
                }
                CtxNode::Sym { .. } => {
                    for at in rt.context.positions() {
                        let node = rt.context.node(&at).unwrap();
                        let CtxNode::Sym { symbol, children } = node else { continue };
                        let rhs = children
                            .iter()
                            .enumerate()
                            .map(|(k, c)| pair_at(&at.child(k as u32 + 1), c))
                            .collect();
                        rules.push(Rule { lhs: pair_at(&at, node), symbol: symbol.clone(), rhs });
                    }
                }
            }
        }
    }
    let initial = a
        .initial
        .iter()
        .map(|p| State::pair(p.clone(), tr.initial.clone()));
    TreeAutomaton::new(
        format!("rawimg({})", a.name),
        tr.output_alphabet.clone(),
        initial,
        rules,
        eps,
    )
    .expect("image automaton is well-formed")
}

const TT_KEYWORDS: &[&str] = &["transducer", "insym", "outsym", "state", "initial", "rule"];

fn reserved_in_rules(word: &str) -> bool {
    word == "z" || (word.starts_with('x') && word[1..].chars().all(|c| c.is_ascii_digit()) && word.len() > 1)
}

fn check_tt_name(word: &str, line: usize, col: usize, what: &str) -> Result<(), ParseError> {
    if TT_KEYWORDS.contains(&word) || reserved_in_rules(word) {
        return Err(error(line, col, format!("'{word}' is reserved and cannot name a {what}")));
    }
    Ok(())
}

/// Parses the transducer file format.
pub fn parse_transducer(text: &str) -> Result<Transducer, ParseError> {
    let mut toks = Tokens::new(text)?;
    let (kw, line, col) = toks.expect_word()?;
    if kw != "transducer" {
        return Err(error(line, col, format!("expected 'transducer NAME', found '{kw}'")));
    }
    let (name, _, _) = toks.expect_word()?;
    let mut input = RankedAlphabet::new();
    let mut output = RankedAlphabet::new();
    let mut declared: BTreeSet<String> = BTreeSet::new();
    let mut initial: Option<String> = None;
    let mut rules: Vec<TransducerRule> = Vec::new();
    // Rules are collected raw and resolved after declarations are complete.
    let mut raw_rules: Vec<(String, RawLhs, RawNode, usize, usize)> = Vec::new();

    while !toks.at_end() {
        let (kw, line, col) = toks.expect_word()?;
        match kw.as_str() {
            "insym" | "outsym" => {
                let (w, l, c) = toks.expect_word()?;
                check_tt_name(&w, l, c, "symbol")?;
                let sym = SymbolName::parse(&w, l, c)?;
                let (rank_w, l2, c2) = toks.expect_word()?;
                let rank: usize =
                    rank_w.parse().map_err(|_| error(l2, c2, format!("bad rank '{rank_w}'")))?;
                let target = if kw == "insym" { &mut input } else { &mut output };
                if target.contains(&sym) {
                    return Err(error(l, c, format!("symbol '{sym}' declared twice")));
                }
                target.insert(sym, rank);
            }
            "state" => {
                let mut any = false;
                while let Some(s) = toks.peek() {
                    let Token::Word(w) = &s.tok else { break };
                    if TT_KEYWORDS.contains(&w.as_str()) {
                        break;
                    }
                    let (w, l, c) = toks.expect_word()?;
                    check_tt_name(&w, l, c, "state")?;
                    declared.insert(w);
                    any = true;
                }
                if !any {
                    return Err(toks.err("expected at least one state name"));
                }
            }
            "initial" => {
                let (w, l, c) = toks.expect_word()?;
                if initial.is_some() {
                    return Err(error(l, c, "transducers have exactly one initial state"));
                }
                initial = Some(w);
            }
            "rule" => {
                let (state, l, c) = toks.expect_word()?;
                let lhs = parse_tt_lhs(&mut toks)?;
                toks.expect(&Token::Arrow)?;
                let rhs = parse_tt_node(&mut toks)?;
                raw_rules.push((state, lhs, rhs, l, c));
            }
            other => return Err(error(line, col, format!("unknown directive '{other}'"))),
        }
    }

    let initial = initial.ok_or_else(|| toks.err("missing 'initial' line"))?;
    if !declared.contains(&initial) {
        return Err(toks.err(format!("undeclared initial state '{initial}'")));
    }
    for (state, lhs, rhs, l, c) in raw_rules {
        if !declared.contains(&state) {
            return Err(error(l, c, format!("undeclared state '{state}'")));
        }
        let sym = SymbolName::parse(&lhs.symbol, lhs.line, lhs.col)?;
        let rank = input
            .rank(&sym)
            .ok_or_else(|| error(lhs.line, lhs.col, format!("unknown input symbol '{sym}'")))?;
        if lhs.vars != rank {
            return Err(error(
                lhs.line,
                lhs.col,
                format!("'{sym}' has rank {rank} but the rule lists {} variables", lhs.vars),
            ));
        }
        let mut child_states: Vec<Option<State>> = vec![None; rank];
        let mut value_position: Option<Position> = None;
        let root = resolve_tt_node(
            &rhs,
            &Position::root(),
            rank,
            &declared,
            &output,
            &mut child_states,
            &mut value_position,
        )?;
        let context = Context::new(rank, root).map_err(|e| error(l, c, e))?;
        rules.push(TransducerRule {
            state: State::named(state),
            symbol: sym,
            context,
            child_states,
            value_position,
        });
    }
    Transducer::new(name, input, output, State::named(initial), rules)
        .map_err(|e| error(1, 1, e))
}

struct RawLhs {
    symbol: String,
    vars: usize,
    line: usize,
    col: usize,
}

/// `(f z x1 x2)`: symbol, the value binder, then the variables in order.
fn parse_tt_lhs(toks: &mut Tokens) -> Result<RawLhs, ParseError> {
    toks.expect(&Token::LParen)?;
    let (symbol, line, col) = toks.expect_word()?;
    let (z, zl, zc) = toks.expect_word()?;
    if z != "z" {
        return Err(error(zl, zc, format!("expected the value binder 'z', found '{z}'")));
    }
    let mut vars = 0usize;
    loop {
        match toks.peek().map(|s| s.tok.clone()) {
            Some(Token::RParen) => {
                toks.next();
                break;
            }
            Some(Token::Word(_)) => {
                let (w, l, c) = toks.expect_word()?;
                let want = format!("x{}", vars + 1);
                if w != want {
                    return Err(error(l, c, format!("expected '{want}', found '{w}'")));
                }
                vars += 1;
            }
            _ => return Err(toks.err("expected a variable or ')'")),
        }
    }
    Ok(RawLhs { symbol, vars, line, col })
}

enum RawNode {
    /// `(word …children)`; the word may carry a `^z` suffix.
    Tree { word: String, marked: bool, children: Vec<RawNode>, line: usize, col: usize },
    /// A bare word child, only valid as the single argument of a state
    /// application.
    Bare { word: String, line: usize, col: usize },
}

fn parse_tt_node(toks: &mut Tokens) -> Result<RawNode, ParseError> {
    toks.expect(&Token::LParen)?;
    let (word, line, col) = toks.expect_word()?;
    let (word, marked) = match word.strip_suffix("^z") {
        Some(w) => (w.to_string(), true),
        None => {
            if word.contains('^') {
                return Err(error(line, col, format!("bad designation in '{word}'")));
            }
            (word, false)
        }
    };
    let mut children = Vec::new();
    loop {
        match toks.peek().map(|s| s.tok.clone()) {
            Some(Token::RParen) => {
                toks.next();
                break;
            }
            Some(Token::LParen) => children.push(parse_tt_node(toks)?),
            Some(Token::Word(_)) => {
                let (w, l, c) = toks.expect_word()?;
                children.push(RawNode::Bare { word: w, line: l, col: c });
            }
            _ => return Err(toks.err("unclosed '(' in rule right-hand side")),
        }
    }
    Ok(RawNode::Tree { word, marked, children, line, col })
}

fn resolve_tt_node(
    node: &RawNode,
    at: &Position,
    rank: usize,
    states: &BTreeSet<String>,
    output: &RankedAlphabet,
    child_states: &mut Vec<Option<State>>,
    value_position: &mut Option<Position>,
) -> Result<CtxNode, ParseError> {
    let RawNode::Tree { word, marked, children, line, col } = node else {
        let RawNode::Bare { word, line, col } = node else { unreachable!() };
        return Err(error(
            *line,
            *col,
            format!("bare '{word}' is only valid inside a state application like (q x1)"),
        ));
    };
    // A state applied to a single variable: (q x1).
    if let [RawNode::Bare { word: var, line: vl, col: vc }] = children.as_slice() {
        if let Some(ix) = parse_var(var) {
            if !states.contains(word) {
                return Err(error(*line, *col, format!("undeclared state '{word}'")));
            }
            if *marked {
                return Err(error(*line, *col, "a state application cannot carry '^z'"));
            }
            if ix == 0 || ix as usize > rank {
                return Err(error(*vl, *vc, format!("variable x{ix} out of range 1..={rank}")));
            }
            if child_states[ix as usize - 1].is_some() {
                return Err(error(*vl, *vc, format!("variable x{ix} used twice")));
            }
            child_states[ix as usize - 1] = Some(State::named(word.clone()));
            return Ok(CtxNode::Var(ix));
        }
    }
    let sym = SymbolName::parse(word, *line, *col)?;
    let srank = output
        .rank(&sym)
        .ok_or_else(|| error(*line, *col, format!("unknown output symbol '{sym}'")))?;
    if children.len() != srank {
        return Err(error(
            *line,
            *col,
            format!("output symbol '{sym}' has rank {srank} but {} children", children.len()),
        ));
    }
    if *marked {
        if value_position.is_some() {
            return Err(error(*line, *col, "'^z' appears on two output nodes"));
        }
        *value_position = Some(at.clone());
    }
    let mut out = Vec::with_capacity(children.len());
    for (i, c) in children.iter().enumerate() {
        out.push(resolve_tt_node(
            c,
            &at.child(i as u32 + 1),
            rank,
            states,
            output,
            child_states,
            value_position,
        )?);
    }
    Ok(CtxNode::Sym { symbol: sym, children: out })
}

fn parse_var(word: &str) -> Option<u32> {
    let rest = word.strip_prefix('x')?;
    if rest.is_empty() || !rest.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}
