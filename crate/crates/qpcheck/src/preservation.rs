//! Decision procedures for query preservation under transduction: does the
//! transformed document still support the query, weakly (values recoverable
//! per image, pooled over all sources) or strongly (values recoverable per
//! source), and when weak preservation holds, which target-side query
//! recovers them.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::automaton::{BudgetExceeded, DiffSide, TreeAutomaton};
use crate::query::{
    coverage_automaton, index_automaton, mark_once_automaton, mark_query_automaton, Query,
};
use crate::state::State;
use crate::transducer::{image_automaton_raw, Transducer};
use crate::tree::{DataTree, Position, SymbolName};

#[derive(Debug, Error)]
pub enum CheckError {
    #[error(transparent)]
    Budget(#[from] BudgetExceeded),
    /// The query and transducer cannot be checked together as given, for
    /// example because their alphabets disagree on a symbol's rank.
    #[error("{0}")]
    Invalid(String),
}

/// How a selected input position loses its value under the transducer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum WitnessKind {
    /// The position sits inside a subtree the transducer deletes.
    Deleted,
    /// The position is consumed by a value-erasing rule on this symbol.
    ValueErased { symbol: SymbolName },
}

/// A concrete refutation of weak preservation: an input tree, a position in
/// it that some selection reaches, and the way its value is lost.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct WeakWitness {
    pub tuple: Vec<State>,
    pub state: State,
    pub kind: WitnessKind,
    /// Valueless input tree; the loss is independent of the values.
    pub tree: DataTree,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeakDecision {
    pub preserved: bool,
    pub witnesses: Vec<WeakWitness>,
    /// State counts of the intermediate automata, keyed by construction.
    pub sizes: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrongWitnessKind {
    /// A marked selection that no transformed output matches: its values
    /// cannot all be recovered from the image.
    SelectionUnmatched,
    /// A marking accepted on the output side that is not a selection: two
    /// sources with the same image disagree on the selected values.
    SpuriousMarking,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrongWitness {
    pub kind: StrongWitnessKind,
    /// Marked input tree separating the selection language from the
    /// round-trip language.
    pub tree: DataTree,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrongDecision {
    pub preserved: bool,
    /// The weak check that ran first; when it already fails, its witnesses
    /// are the explanation and `witness` stays empty.
    pub weak: WeakDecision,
    pub witness: Option<StrongWitness>,
    pub sizes: BTreeMap<String, usize>,
}

/// The outcome of asking for a target-side query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Construction {
    Built { query: Query, weak: WeakDecision },
    NotPreserved(WeakDecision),
}

fn guard(a: &TreeAutomaton, what: &str, budget: usize) -> Result<(), BudgetExceeded> {
    if a.states.len() > budget {
        Err(BudgetExceeded { what: format!("{what} ({} states)", a.states.len()), limit: budget })
    } else {
        Ok(())
    }
}

fn bump(sizes: &mut BTreeMap<String, usize>, key: &str, value: usize) {
    let slot = sizes.entry(key.to_string()).or_insert(0);
    *slot = (*slot).max(value);
}

/// One endangered selected state together with its certificate.
struct Endangerment {
    state: State,
    kind: WitnessKind,
    tree: DataTree,
    position: Position,
}

/// The single-state core shared by the unary and general checks: pairs the
/// automaton with the transducer's deletion automaton and reports every
/// selected state that some accepting run puts at a deleted or value-erased
/// position.
fn endangered_states(
    a: &TreeAutomaton,
    selected: &BTreeSet<State>,
    tr: &Transducer,
    budget: usize,
    sizes: &mut BTreeMap<String, usize>,
) -> Result<Vec<Endangerment>, CheckError> {
    let a = a.reduce();
    let deletion = tr.deletion_automaton();
    bump(sizes, "deletion_automaton", deletion.states.len());
    let prod = a.product(&deletion).map_err(CheckError::Invalid)?.reduce();
    guard(&prod, "selection product", budget)?;
    bump(sizes, "selection_product", prod.states.len());
    let mut out = Vec::new();
    for pair in &prod.states {
        let State::Pair(p, p_t) = pair else { continue };
        if !selected.contains(p) {
            continue;
        }
        if **p_t == State::Bottom {
            let (tree, position) = prod
                .certificate_for_state(pair)
                .expect("reduced automata certify every state");
            out.push(Endangerment {
                state: (**p).clone(),
                kind: WitnessKind::Deleted,
                tree,
                position,
            });
            continue;
        }
        let erasing: BTreeSet<SymbolName> = prod
            .rules
            .iter()
            .filter(|r| &r.lhs == pair)
            .map(|r| r.symbol.clone())
            .filter(|sym| {
                tr.rule_for(p_t, sym).map(|tr_rule| tr_rule.is_value_erasing()).unwrap_or(false)
            })
            .collect();
        for symbol in erasing {
            let (tree, position) = prod
                .certificate_for_state_rule(pair, &symbol)
                .expect("reduced automata certify every rule");
            out.push(Endangerment {
                state: (**p).clone(),
                kind: WitnessKind::ValueErased { symbol },
                tree,
                position,
            });
        }
    }
    Ok(out)
}

/// Weak preservation for arity-1 queries, checked directly on the query
/// automaton: preserved unless some selected state can sit at a deleted or
/// value-erased position of an accepted tree.
pub fn weak_preserves_unary(
    q: &Query,
    tr: &Transducer,
    budget: usize,
) -> Result<WeakDecision, CheckError> {
    assert_eq!(q.arity, 1, "weak_preserves_unary expects an arity-1 query");
    let selected: BTreeSet<State> = q.selections.iter().map(|s| s[0].clone()).collect();
    let mut sizes = BTreeMap::new();
    bump(&mut sizes, "query_automaton", q.automaton.states.len());
    let found = endangered_states(&q.automaton, &selected, tr, budget, &mut sizes)?;
    let mut witnesses: Vec<WeakWitness> = found
        .into_iter()
        .map(|e| WeakWitness {
            tuple: vec![e.state.clone()],
            state: e.state,
            kind: e.kind,
            tree: e.tree,
            position: e.position,
        })
        .collect();
    witnesses.sort();
    witnesses.dedup();
    Ok(WeakDecision { preserved: witnesses.is_empty(), witnesses, sizes })
}

/// Weak preservation for any arity. Each selection tuple is checked through
/// its coverage automaton, whose accepting runs are exactly the runs
/// realizing the whole tuple; the tuple survives transformation unless one of
/// its states is endangered within such a run.
pub fn weak_preserves(q: &Query, tr: &Transducer, budget: usize) -> Result<WeakDecision, CheckError> {
    if q.arity == 1 {
        return weak_preserves_unary(q, tr, budget);
    }
    let mut sizes = BTreeMap::new();
    bump(&mut sizes, "query_automaton", q.automaton.states.len());
    let mut witnesses: Vec<WeakWitness> = Vec::new();
    for s in &q.selections {
        let cov = coverage_automaton(&q.automaton, s).reduce();
        guard(&cov, "coverage automaton", budget)?;
        bump(&mut sizes, "coverage_automaton", cov.states.len());
        let tuple_states: BTreeSet<&State> = s.iter().collect();
        let selected: BTreeSet<State> = cov
            .states
            .iter()
            .filter(|st| matches!(st, State::Cover(base, _) if tuple_states.contains(base.as_ref())))
            .cloned()
            .collect();
        let found = endangered_states(&cov, &selected, tr, budget, &mut sizes)?;
        witnesses.extend(found.into_iter().map(|e| {
            let base = match &e.state {
                State::Cover(base, _) => (**base).clone(),
                other => other.clone(),
            };
            WeakWitness {
                tuple: s.clone(),
                state: base,
                kind: e.kind,
                tree: e.tree,
                position: e.position,
            }
        }));
    }
    witnesses.sort();
    witnesses.dedup();
    Ok(WeakDecision { preserved: witnesses.is_empty(), witnesses, sizes })
}

/// Builds the target-side query over the transducer's output alphabet, if
/// weak preservation holds.
///
/// The automaton is the image of the query automaton under the transducer;
/// its states remember which query rule and transducer rule produced each
/// output node. A state selects for tuple slot i exactly when the node it
/// stands for receives the value of a source node whose run state is the
/// slot's state: either a context node at the rule's designated value
/// position, or an image root whose transducer state can designate the
/// consumed node itself.
pub fn construct_weak_query(
    q: &Query,
    tr: &Transducer,
    budget: usize,
) -> Result<Construction, CheckError> {
    let weak = weak_preserves(q, tr, budget)?;
    if !weak.preserved {
        return Ok(Construction::NotPreserved(weak));
    }
    let mut weak = weak;
    let image = image_automaton_raw(&q.automaton, tr).eliminate_epsilon();
    guard(&image, "image automaton", budget)?;
    bump(&mut weak.sizes, "image_automaton", image.states.len());
    let class_for = |slot_state: &State| -> Vec<State> {
        image
            .states
            .iter()
            .filter(|st| match st {
                State::Ctx { arule, trule, at } => {
                    q.automaton.rules[*arule].lhs == *slot_state
                        && !at.is_root()
                        && tr.rules[*trule].value_position.as_ref() == Some(at)
                }
                State::Pair(p, p_t) => {
                    **p == *slot_state
                        && tr.rules.iter().any(|r| {
                            r.state == **p_t
                                && r.value_position.as_ref() == Some(&Position::root())
                        })
                }
                _ => false,
            })
            .cloned()
            .collect()
    };
    let mut selections: Vec<Vec<State>> = Vec::new();
    for s in &q.selections {
        let classes: Vec<Vec<State>> = s.iter().map(|p| class_for(p)).collect();
        selections.extend(crate::automaton::cartesian(&classes));
    }
    let query =
        Query::new(image, q.arity, selections).map_err(CheckError::Invalid)?;
    Ok(Construction::Built { query, weak })
}

/// The languages whose equality decides strong preservation, all over the
/// marked input alphabet.
#[derive(Debug, Clone)]
pub struct StrongLanguages {
    /// Marked selections restricted to the transducer's domain: each mark
    /// sits where an accepting run selects its tuple slot, and the erasure
    /// is a domain shape.
    pub selections: TreeAutomaton,
    /// Transforms of `selections`, the marks riding the copied values.
    pub output_type: TreeAutomaton,
    /// Domain shapes, marked anyhow, whose transforms land in `output_type`.
    pub round_trip: TreeAutomaton,
    /// `round_trip` restricted to trees carrying each mark exactly once; the
    /// decision compares this side against `selections`.
    pub comparison: TreeAutomaton,
    /// State counts of the intermediate automata, keyed by construction.
    pub sizes: BTreeMap<String, usize>,
}

/// Builds the two sides of the strong-preservation equality for a query with
/// at least one selection tuple.
///
/// Beyond weak preservation, strong preservation asks that any two domain
/// trees with the same transform agree on the selected values. Marks turn
/// that into a language equality: transforming the marked selections and
/// pulling the result back through the transducer yields every exactly-once
/// marking of a domain shape that the transform cannot tell apart from a
/// selection. The pulled-back side (`comparison`) equals `selections` exactly
/// when no such marking selects anything new.
pub fn strong_languages(
    q: &Query,
    tr: &Transducer,
    budget: usize,
) -> Result<StrongLanguages, CheckError> {
    if q.selections.is_empty() {
        return Err(CheckError::Invalid(
            "the marked-language comparison needs at least one selection tuple".into(),
        ));
    }
    let n = q.arity as u32;
    let mut sizes = BTreeMap::new();
    let mut normals = Vec::new();
    for s in &q.selections {
        let single = Query::new(q.automaton.clone(), q.arity, [s.clone()])
            .expect("tuples of a valid query stay valid");
        normals.push(single.normalize().map_err(CheckError::Invalid)?);
    }
    for nf in &normals {
        bump(&mut sizes, "normalized_query", nf.automaton.states.len());
    }
    let marked = mark_query_automaton(&normals).map_err(CheckError::Invalid)?;
    guard(&marked, "marked query automaton", budget)?;
    bump(&mut sizes, "marked_query", marked.states.len());
    let domain = tr.domain_automaton();
    let blind = index_automaton(&domain, n);
    bump(&mut sizes, "mark_blind_domain", blind.states.len());
    let selections = marked.product(&blind).map_err(CheckError::Invalid)?.reduce();
    guard(&selections, "marked selections", budget)?;
    bump(&mut sizes, "marked_selections", selections.states.len());
    let marked_tr = tr.mark_transducer(n);
    let output_type = marked_tr.forward_type(&selections);
    guard(&output_type, "marked output type", budget)?;
    bump(&mut sizes, "marked_output_type", output_type.states.len());
    let round_trip = marked_tr.inverse_type(&output_type);
    guard(&round_trip, "marked round trip", budget)?;
    bump(&mut sizes, "marked_round_trip", round_trip.states.len());
    let once = mark_once_automaton(&domain, n);
    guard(&once, "mark counting automaton", budget)?;
    bump(&mut sizes, "mark_once_domain", once.states.len());
    let comparison =
        once.product(&round_trip).map_err(CheckError::Invalid)?.reduce();
    guard(&comparison, "marked intersection", budget)?;
    bump(&mut sizes, "marked_intersection", comparison.states.len());
    Ok(StrongLanguages { selections, output_type, round_trip, comparison, sizes })
}

/// Strong preservation: weak preservation plus the guarantee that domain
/// trees with the same transform agree on the selected values. The second
/// part is the language equality of [`StrongLanguages`].
pub fn strong_preserves(
    q: &Query,
    tr: &Transducer,
    budget: usize,
) -> Result<StrongDecision, CheckError> {
    let weak = weak_preserves(q, tr, budget)?;
    if !weak.preserved {
        let sizes = weak.sizes.clone();
        return Ok(StrongDecision { preserved: false, weak, witness: None, sizes });
    }
    let mut sizes = weak.sizes.clone();
    if q.selections.is_empty() {
        return Ok(StrongDecision { preserved: true, weak, witness: None, sizes });
    }
    let langs = strong_languages(q, tr, budget)?;
    for (key, value) in &langs.sizes {
        bump(&mut sizes, key, *value);
    }
    let eq = langs.selections.equivalent(&langs.comparison, budget)?;
    let witness = eq.witness.map(|(side, tree)| StrongWitness {
        kind: match side {
            DiffSide::FirstOnly => StrongWitnessKind::SelectionUnmatched,
            DiffSide::SecondOnly => StrongWitnessKind::SpuriousMarking,
        },
        tree,
    });
    Ok(StrongDecision { preserved: eq.equal, weak, witness, sizes })
}
