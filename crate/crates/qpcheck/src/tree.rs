//! Ranked alphabets, data trees, positions, and linear contexts.
//!
//! A data tree is a ranked ordered tree whose nodes optionally carry a
//! natural-number value. Trees serialize as s-expressions:
//! `(f @1 (a @2) (f @3 (a @4) (a @5)))`. A symbol may carry an index mark,
//! written `1:a`; marked symbols show up in the strong-preservation
//! constructions, never in user queries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;

use crate::syntax::{error, ParseError, Token, Tokens};

/// A ranked symbol name, optionally carrying an index mark (`1:a`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymbolName {
    pub base: String,
    pub mark: Option<u32>,
}

impl SymbolName {
    pub fn new(base: impl Into<String>) -> Self {
        SymbolName { base: base.into(), mark: None }
    }

    pub fn marked(base: impl Into<String>, mark: u32) -> Self {
        SymbolName { base: base.into(), mark: Some(mark) }
    }

    pub fn with_mark(&self, mark: u32) -> Self {
        SymbolName { base: self.base.clone(), mark: Some(mark) }
    }

    pub fn unmarked(&self) -> Self {
        SymbolName { base: self.base.clone(), mark: None }
    }

    pub fn is_marked(&self) -> bool {
        self.mark.is_some()
    }

    /// Parses `a` or `1:a`. The base must be an identifier starting with a
    /// letter or underscore.
    pub fn parse(word: &str, line: usize, col: usize) -> Result<Self, ParseError> {
        let (mark, base) = match word.split_once(':') {
            Some((m, b)) => {
                let mark: u32 = m
                    .parse()
                    .map_err(|_| error(line, col, format!("bad symbol mark in '{word}'")))?;
                (Some(mark), b)
            }
            None => (None, word),
        };
        let ok = !base.is_empty()
            && base.chars().next().map(|c| c.is_ascii_alphabetic() || c == '_').unwrap_or(false)
            && base.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !ok {
            return Err(error(line, col, format!("bad symbol name '{word}'")));
        }
        Ok(match mark {
            Some(m) => SymbolName::marked(base, m),
            None => SymbolName::new(base),
        })
    }
}

impl fmt::Display for SymbolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mark {
            Some(m) => write!(f, "{m}:{}", self.base),
            None => write!(f, "{}", self.base),
        }
    }
}

/// A finite map from symbols to arities.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RankedAlphabet {
    ranks: BTreeMap<SymbolName, usize>,
}

impl RankedAlphabet {
    pub fn new() -> Self {
        RankedAlphabet::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (SymbolName, usize)>) -> Self {
        let mut a = RankedAlphabet::new();
        for (s, r) in pairs {
            a.ranks.insert(s, r);
        }
        a
    }

    pub fn insert(&mut self, symbol: SymbolName, rank: usize) {
        self.ranks.insert(symbol, rank);
    }

    pub fn rank(&self, symbol: &SymbolName) -> Option<usize> {
        self.ranks.get(symbol).copied()
    }

    pub fn contains(&self, symbol: &SymbolName) -> bool {
        self.ranks.contains_key(symbol)
    }

    pub fn symbols(&self) -> impl Iterator<Item = (&SymbolName, usize)> {
        self.ranks.iter().map(|(s, r)| (s, *r))
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn has_nullary(&self) -> bool {
        self.ranks.values().any(|&r| r == 0)
    }

    pub fn max_rank(&self) -> usize {
        self.ranks.values().copied().max().unwrap_or(0)
    }

    /// The alphabet extended with marked copies `(i, σ)` for `i` in `1..=n`,
    /// ranks unchanged.
    pub fn with_marks(&self, n: u32) -> Self {
        let mut out = self.clone();
        for (sym, rank) in self.ranks.iter() {
            for i in 1..=n {
                out.ranks.insert(sym.with_mark(i), *rank);
            }
        }
        out
    }

    /// Merges two alphabets; a symbol present in both must agree on rank.
    pub fn union(&self, other: &RankedAlphabet) -> Result<Self, String> {
        let mut out = self.clone();
        for (sym, rank) in other.ranks.iter() {
            match out.ranks.get(sym) {
                Some(r) if r != rank => {
                    return Err(format!("symbol '{sym}' has conflicting ranks {r} and {rank}"))
                }
                _ => {
                    out.ranks.insert(sym.clone(), *rank);
                }
            }
        }
        Ok(out)
    }
}

impl fmt::Display for RankedAlphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (s, r)) in self.ranks.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{s}/{r}")?;
        }
        Ok(())
    }
}

/// A node position: the root is the empty sequence, child steps are 1-based.
/// Prints as `eps` or as dot-separated indices like `2.1`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Position(Vec<u32>);

impl Position {
    pub fn root() -> Self {
        Position(Vec::new())
    }

    pub fn from_indices(ix: impl Into<Vec<u32>>) -> Self {
        Position(ix.into())
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, i: u32) -> Self {
        let mut v = self.0.clone();
        v.push(i);
        Position(v)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Position(self.0[..self.0.len() - 1].to_vec()).into()
        }
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_prefix_of(&self, other: &Position) -> bool {
        other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }

    pub fn is_strictly_below(&self, other: &Position) -> bool {
        other.is_prefix_of(self) && self.0.len() > other.0.len()
    }

    pub fn join(&self, suffix: &Position) -> Self {
        let mut v = self.0.clone();
        v.extend_from_slice(&suffix.0);
        Position(v)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "eps");
        }
        for (i, ix) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ".")?;
            }
            write!(f, "{ix}")?;
        }
        Ok(())
    }
}

impl FromStr for Position {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "eps" {
            return Ok(Position::root());
        }
        let mut v = Vec::new();
        for part in s.split('.') {
            let ix: u32 = part.parse().map_err(|_| format!("bad position '{s}'"))?;
            if ix == 0 {
                return Err(format!("bad position '{s}': indices are 1-based"));
            }
            v.push(ix);
        }
        Ok(Position(v))
    }
}

/// A ranked ordered tree whose nodes optionally carry a natural value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DataTree {
    pub symbol: SymbolName,
    pub value: Option<BigUint>,
    pub children: Vec<DataTree>,
}

impl DataTree {
    pub fn new(symbol: SymbolName, value: Option<BigUint>, children: Vec<DataTree>) -> Self {
        DataTree { symbol, value, children }
    }

    pub fn leaf(symbol: SymbolName) -> Self {
        DataTree { symbol, value: None, children: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(|c| c.node_count()).sum::<usize>()
    }

    pub fn height(&self) -> usize {
        1 + self.children.iter().map(|c| c.height()).max().unwrap_or(0)
    }

    /// All positions in preorder (root first, then each child subtree).
    pub fn positions(&self) -> Vec<Position> {
        let mut out = Vec::with_capacity(self.node_count());
        self.walk(&Position::root(), &mut out);
        out
    }

    fn walk(&self, at: &Position, out: &mut Vec<Position>) {
        out.push(at.clone());
        for (i, c) in self.children.iter().enumerate() {
            c.walk(&at.child(i as u32 + 1), out);
        }
    }

    pub fn subtree(&self, at: &Position) -> Option<&DataTree> {
        let mut node = self;
        for &ix in at.indices() {
            node = node.children.get(ix as usize - 1)?;
        }
        Some(node)
    }

    pub fn label(&self, at: &Position) -> Option<&SymbolName> {
        self.subtree(at).map(|t| &t.symbol)
    }

    pub fn value_at(&self, at: &Position) -> Option<&BigUint> {
        self.subtree(at).and_then(|t| t.value.as_ref())
    }

    /// Every node carries a value.
    pub fn is_proper(&self) -> bool {
        self.value.is_some() && self.children.iter().all(|c| c.is_proper())
    }

    /// No node carries a value.
    pub fn is_valueless(&self) -> bool {
        self.value.is_none() && self.children.iter().all(|c| c.is_valueless())
    }

    /// The tree with all values removed (written t⁻ in the file formats'
    /// documentation).
    pub fn strip_values(&self) -> DataTree {
        DataTree {
            symbol: self.symbol.clone(),
            value: None,
            children: self.children.iter().map(|c| c.strip_values()).collect(),
        }
    }

    /// The tree with the value at `at` replaced by `v`; everything else is
    /// unchanged.
    pub fn set_value(&self, at: &Position, v: BigUint) -> Result<DataTree, InvalidPosition> {
        fn go(t: &DataTree, ix: &[u32], v: BigUint) -> Option<DataTree> {
            let mut out = t.clone();
            match ix.split_first() {
                None => {
                    out.value = Some(v);
                }
                Some((&first, rest)) => {
                    let child = t.children.get(first as usize - 1)?;
                    out.children[first as usize - 1] = go(child, rest, v)?;
                }
            }
            Some(out)
        }
        go(self, at.indices(), v).ok_or_else(|| InvalidPosition { position: at.clone() })
    }

    /// Checks every node's symbol and arity against the alphabet.
    pub fn check_alphabet(&self, alphabet: &RankedAlphabet) -> Result<(), String> {
        match alphabet.rank(&self.symbol) {
            None => return Err(format!("unknown symbol '{}'", self.symbol)),
            Some(r) if r != self.children.len() => {
                return Err(format!(
                    "symbol '{}' has rank {r} but {} children",
                    self.symbol,
                    self.children.len()
                ))
            }
            Some(_) => {}
        }
        for c in &self.children {
            c.check_alphabet(alphabet)?;
        }
        Ok(())
    }

    /// The tree with every node's value set to its 1-based preorder index.
    pub fn with_preorder_values(&self) -> DataTree {
        fn go(t: &DataTree, next: &mut u64) -> DataTree {
            let value = Some(BigUint::from(*next));
            *next += 1;
            DataTree {
                symbol: t.symbol.clone(),
                value,
                children: t.children.iter().map(|c| go(c, next)).collect(),
            }
        }
        let mut next = 1u64;
        go(self, &mut next)
    }
}

impl fmt::Display for DataTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.symbol)?;
        if let Some(v) = &self.value {
            write!(f, " @{v}")?;
        }
        for c in &self.children {
            write!(f, " {c}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidPosition {
    pub position: Position,
}

impl fmt::Display for InvalidPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "position {} does not exist in the tree", self.position)
    }
}

impl std::error::Error for InvalidPosition {}

/// Parses the s-expression tree grammar against an alphabet. Ranks are
/// enforced during the parse so error positions point at the offending node.
pub fn parse_tree(text: &str, alphabet: &RankedAlphabet) -> Result<DataTree, ParseError> {
    let mut toks = Tokens::new(text)?;
    let t = parse_tree_node(&mut toks, alphabet)?;
    toks.expect_end()?;
    Ok(t)
}

fn parse_tree_node(toks: &mut Tokens, alphabet: &RankedAlphabet) -> Result<DataTree, ParseError> {
    toks.expect(&Token::LParen)?;
    let (word, line, col) = toks.expect_word()?;
    let symbol = SymbolName::parse(&word, line, col)?;
    let rank = alphabet
        .rank(&symbol)
        .ok_or_else(|| error(line, col, format!("unknown symbol '{symbol}'")))?;
    let value = match toks.peek() {
        Some(s) if matches!(s.tok, Token::Value(_)) => {
            let s = toks.next().unwrap();
            match s.tok {
                Token::Value(digits) => Some(
                    BigUint::from_str(&digits)
                        .map_err(|_| error(s.line, s.col, "bad value literal"))?,
                ),
                _ => unreachable!(),
            }
        }
        _ => None,
    };
    let mut children = Vec::new();
    while !matches!(toks.peek().map(|s| &s.tok), Some(Token::RParen)) {
        if toks.at_end() {
            return Err(toks.err("unclosed '('"));
        }
        children.push(parse_tree_node(toks, alphabet)?);
    }
    toks.expect(&Token::RParen)?;
    if children.len() != rank {
        return Err(error(
            line,
            col,
            format!("symbol '{symbol}' has rank {rank} but {} children", children.len()),
        ));
    }
    Ok(DataTree { symbol, value, children })
}

/// One node of a context: an output symbol or a variable `x_i`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CtxNode {
    Sym { symbol: SymbolName, children: Vec<CtxNode> },
    Var(u32),
}

/// A linear tree over an output alphabet and variables `x_1..x_n`: every
/// variable occurs at most once. Substitution plugs argument trees in at the
/// variables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Context {
    /// Number of available variables (n); occurring variables are a subset.
    pub vars: usize,
    pub root: CtxNode,
}

impl Context {
    pub fn new(vars: usize, root: CtxNode) -> Result<Self, String> {
        let c = Context { vars, root };
        let mut seen = BTreeSet::new();
        for p in c.positions() {
            if let CtxNode::Var(i) = c.node(&p).unwrap() {
                if *i == 0 || *i as usize > vars {
                    return Err(format!("variable x{i} out of range 1..={vars}"));
                }
                if !seen.insert(*i) {
                    return Err(format!("variable x{i} occurs twice; contexts are linear"));
                }
            }
        }
        Ok(c)
    }

    /// The single-variable identity context `x_i` over n variables.
    pub fn hole(vars: usize, i: u32) -> Self {
        Context { vars, root: CtxNode::Var(i) }
    }

    pub fn positions(&self) -> Vec<Position> {
        fn walk(n: &CtxNode, at: &Position, out: &mut Vec<Position>) {
            out.push(at.clone());
            if let CtxNode::Sym { children, .. } = n {
                for (i, c) in children.iter().enumerate() {
                    walk(c, &at.child(i as u32 + 1), out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &Position::root(), &mut out);
        out
    }

    pub fn node(&self, at: &Position) -> Option<&CtxNode> {
        let mut n = &self.root;
        for &ix in at.indices() {
            match n {
                CtxNode::Sym { children, .. } => n = children.get(ix as usize - 1)?,
                CtxNode::Var(_) => return None,
            }
        }
        Some(n)
    }

    pub fn node_count(&self) -> usize {
        self.positions().len()
    }

    pub fn var_position(&self, i: u32) -> Option<Position> {
        self.positions()
            .into_iter()
            .find(|p| matches!(self.node(p), Some(CtxNode::Var(j)) if *j == i))
    }

    pub fn occurs(&self, i: u32) -> bool {
        self.var_position(i).is_some()
    }

    /// Variable indices that occur, in ascending order.
    pub fn occurring(&self) -> Vec<u32> {
        (1..=self.vars as u32).filter(|&i| self.occurs(i)).collect()
    }

    /// Replaces every occurring `x_i` by `args[i-1]`. Arguments for
    /// non-occurring variables are ignored.
    pub fn substitute(&self, args: &[DataTree]) -> Result<DataTree, String> {
        if args.len() != self.vars {
            return Err(format!("expected {} arguments, got {}", self.vars, args.len()));
        }
        self.substitute_with(&mut |i| Some(args[i as usize - 1].clone()))
            .ok_or_else(|| "missing argument".to_string())
    }

    /// Like [`Context::substitute`] but the supplier may be partial; returns
    /// `None` when an occurring variable has no argument.
    pub fn substitute_with(
        &self,
        supply: &mut dyn FnMut(u32) -> Option<DataTree>,
    ) -> Option<DataTree> {
        fn go(n: &CtxNode, supply: &mut dyn FnMut(u32) -> Option<DataTree>) -> Option<DataTree> {
            match n {
                CtxNode::Var(i) => supply(*i),
                CtxNode::Sym { symbol, children } => {
                    let mut out = Vec::with_capacity(children.len());
                    for c in children {
                        out.push(go(c, supply)?);
                    }
                    Some(DataTree::new(symbol.clone(), None, out))
                }
            }
        }
        go(&self.root, supply)
    }

    pub fn check_alphabet(&self, alphabet: &RankedAlphabet) -> Result<(), String> {
        fn go(n: &CtxNode, alphabet: &RankedAlphabet) -> Result<(), String> {
            if let CtxNode::Sym { symbol, children } = n {
                match alphabet.rank(symbol) {
                    None => return Err(format!("unknown symbol '{symbol}'")),
                    Some(r) if r != children.len() => {
                        return Err(format!(
                            "symbol '{symbol}' has rank {r} but {} children",
                            children.len()
                        ))
                    }
                    Some(_) => {}
                }
                for c in children {
                    go(c, alphabet)?;
                }
            }
            Ok(())
        }
        go(&self.root, alphabet)
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(n: &CtxNode, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match n {
                CtxNode::Var(i) => write!(f, "x{i}"),
                CtxNode::Sym { symbol, children } => {
                    write!(f, "({symbol}")?;
                    for c in children {
                        write!(f, " ")?;
                        go(c, f)?;
                    }
                    write!(f, ")")
                }
            }
        }
        go(&self.root, f)
    }
}
