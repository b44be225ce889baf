//! Automaton states.
//!
//! Constructions (products, unions, determinization, the coverage and
//! normalization steps) build structured states out of existing ones instead
//! of generating fresh names; that keeps every intermediate inspectable and
//! makes results reproducible across runs.

use std::fmt;

use crate::tree::Position;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum State {
    /// A state named in an input file.
    Named(String),
    /// Sink for deleted subtrees; accepts every tree.
    Bottom,
    /// Universal state; accepts every tree.
    Any,
    /// Product state.
    Pair(Box<State>, Box<State>),
    /// Internal position of a transducer output context during image
    /// construction: identified by the source rule pair (indices into the
    /// automaton's and transducer's sorted rule lists) and the position
    /// inside the output context.
    Ctx { arule: usize, trule: usize, at: Position },
    /// Coverage state: a query state together with the set of selection
    /// components that must still be matched at or below this node.
    Cover(Box<State>, Vec<State>),
    /// Normalization state `(p, H, D)`: `H` lists the tuple components the
    /// node itself claims (at most one), `D` the components claimed at or
    /// below it.
    Claim { base: Box<State>, here: Vec<u32>, owed: Vec<u32> },
    /// Determinization state: a set of states.
    Subset(Vec<State>),
    /// Disjoint-union renaming.
    Tagged(u32, Box<State>),
}

impl State {
    pub fn named(s: impl Into<String>) -> Self {
        State::Named(s.into())
    }

    pub fn pair(a: State, b: State) -> Self {
        State::Pair(Box::new(a), Box::new(b))
    }

    pub fn tagged(tag: u32, s: State) -> Self {
        State::Tagged(tag, Box::new(s))
    }

    pub fn cover(base: State, pending: Vec<State>) -> Self {
        State::Cover(Box::new(base), pending)
    }
}

fn write_list<T: fmt::Display>(f: &mut fmt::Formatter<'_>, items: &[T]) -> fmt::Result {
    write!(f, "{{")?;
    for (i, x) in items.iter().enumerate() {
        if i > 0 {
            write!(f, ",")?;
        }
        write!(f, "{x}")?;
    }
    write!(f, "}}")
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            State::Named(s) => write!(f, "{s}"),
            State::Bottom => write!(f, "_bot"),
            State::Any => write!(f, "_any"),
            State::Pair(a, b) => write!(f, "<{a},{b}>"),
            State::Ctx { arule, trule, at } => write!(f, "ctx[{arule},{trule},{at}]"),
            State::Cover(base, pending) => {
                write!(f, "cov[{base},")?;
                write_list(f, pending)?;
                write!(f, "]")
            }
            State::Claim { base, here, owed } => {
                write!(f, "clm[{base},")?;
                write_list(f, here)?;
                write!(f, ",")?;
                write_list(f, owed)?;
                write!(f, "]")
            }
            State::Subset(items) => {
                write!(f, "set")?;
                write_list(f, items)
            }
            State::Tagged(tag, s) => write!(f, "u{tag}.{s}"),
        }
    }
}
