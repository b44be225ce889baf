//! Decide whether a deterministic linear top-down data tree transducer
//! preserves a run-based n-ary query, and when it does, construct the
//! corresponding query on transformed trees.
//!
//! The crate is organized bottom-up:
//!
//! * [`tree`] — ranked alphabets, data trees, positions, linear contexts;
//! * [`automaton`] — root-directed tree automata and their boolean algebra;
//! * [`transducer`] — the transducer class, application, and forward/inverse
//!   type inference;
//! * [`query`] — run-based queries, evaluation, normalization, and the
//!   coverage/marking constructions;
//! * [`preservation`] — the weak and strong preservation decision procedures
//!   and target-query construction;
//! * [`oracle`] — brute-force ground truth on small trees, used by the test
//!   suite and exposed on the command line;
//! * [`report`] — serializable decision reports shared by the CLI.

pub mod automaton;
pub mod oracle;
pub mod preservation;
pub mod query;
pub mod report;
pub mod state;
mod syntax;
pub mod transducer;
pub mod tree;

pub use syntax::ParseError;
