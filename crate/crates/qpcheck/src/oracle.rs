//! Brute-force oracles: exhaustive enumeration of small trees, reference
//! evaluation of the preservation equations, and counterexample search. The
//! decision procedures are checked against these on every fixture and on
//! randomized instances.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;

use crate::automaton::{cartesian, TreeAutomaton};
use crate::query::Query;
use crate::transducer::{Fate, Transducer};
use crate::tree::{DataTree, RankedAlphabet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationBudget {
    /// Largest tree size (node count) to enumerate.
    pub max_nodes: usize,
    /// Hard cap on the number of enumerated trees.
    pub max_trees: usize,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget { max_nodes: 8, max_trees: 500_000 }
    }
}

impl EnumerationBudget {
    pub fn with_max_nodes(max_nodes: usize) -> Self {
        EnumerationBudget { max_nodes, ..Default::default() }
    }
}

/// Every valueless tree over the alphabet with at most `max_nodes` nodes, in
/// a fixed order: by size, then by symbol and child sizes.
pub fn enumerate_shapes(
    alphabet: &RankedAlphabet,
    budget: &EnumerationBudget,
) -> Result<Vec<DataTree>, String> {
    if !alphabet.has_nullary() {
        return Err("the alphabet has no nullary symbol, so there are no finite trees".to_string());
    }
    let mut by_size: Vec<Vec<DataTree>> = vec![Vec::new(); budget.max_nodes + 1];
    let mut total = 0usize;
    for size in 1..=budget.max_nodes {
        let mut bucket = Vec::new();
        for (symbol, rank) in alphabet.symbols() {
            if rank == 0 {
                if size == 1 {
                    bucket.push(DataTree::leaf(symbol.clone()));
                }
                continue;
            }
            if size < rank + 1 {
                continue;
            }
            for split in compositions(size - 1, rank) {
                let options: Vec<Vec<DataTree>> =
                    split.iter().map(|s| by_size[*s].clone()).collect();
                for children in cartesian(&options) {
                    bucket.push(DataTree::new(symbol.clone(), None, children));
                }
            }
        }
        total += bucket.len();
        if total > budget.max_trees {
            return Err(format!(
                "enumeration exceeds {} trees at size {size}",
                budget.max_trees
            ));
        }
        by_size[size] = bucket;
    }
    Ok(by_size.into_iter().flatten().collect())
}

/// Every proper tree over the alphabet with at most `max_nodes` nodes, each
/// shape valued 1..k in preorder.
pub fn enumerate_trees(
    alphabet: &RankedAlphabet,
    budget: &EnumerationBudget,
) -> Result<Vec<DataTree>, String> {
    Ok(enumerate_shapes(alphabet, budget)?
        .iter()
        .map(DataTree::with_preorder_values)
        .collect())
}

/// The accepted valueless trees with at most `max_nodes` nodes.
pub fn language_up_to(
    a: &TreeAutomaton,
    budget: &EnumerationBudget,
) -> Result<Vec<DataTree>, String> {
    Ok(enumerate_shapes(&a.alphabet, budget)?
        .into_iter()
        .filter(|t| a.accepts(t))
        .collect())
}

/// Ordered compositions of `total` into `parts` positive summands.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 0 {
        return if total == 0 { vec![Vec::new()] } else { Vec::new() };
    }
    let mut out = Vec::new();
    for first in 1..=total.saturating_sub(parts - 1) {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OracleReport {
    /// How many trees or images the oracle examined.
    pub checked: usize,
    pub discrepancies: Vec<String>,
    pub warnings: Vec<String>,
}

impl OracleReport {
    pub fn ok(&self) -> bool {
        self.discrepancies.is_empty()
    }
}

/// Compares the production evaluator against explicit run enumeration on
/// every enumerated proper tree.
pub fn check_eval_equivalence(
    q: &Query,
    budget: &EnumerationBudget,
) -> Result<OracleReport, String> {
    let mut report = OracleReport::default();
    for t in enumerate_trees(&q.automaton.alphabet, budget)? {
        report.checked += 1;
        let fast = q.eval(&t);
        match q.eval_by_runs(&t, 1_000_000) {
            Ok(slow) => {
                if fast != slow {
                    report.discrepancies.push(format!(
                        "evaluators disagree on {t}: direct {} vs by-runs {} tuples",
                        fast.len(),
                        slow.len()
                    ));
                }
            }
            Err(b) => report.warnings.push(format!("run enumeration on {t} gave up: {b}")),
        }
    }
    Ok(report)
}

fn render_value_tuple(vs: &[BigUint]) -> String {
    let inner = vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    format!("({inner})")
}

fn render_value_set(set: &BTreeSet<Vec<BigUint>>) -> String {
    let inner = set.iter().map(|vs| render_value_tuple(vs)).collect::<Vec<_>>().join(", ");
    format!("{{{inner}}}")
}

/// Checks the pooled-values equation on every image of an enumerated source:
/// the target query's values on the image must equal the union of the source
/// query's values over the image's preimages.
///
/// When an image's preimage fits inside the enumeration budget, the union is
/// computed exactly and compared in both directions. Otherwise only the
/// sampled sources bound it from below, extra target tuples cannot be judged,
/// and a warning says so.
pub fn check_weak_equation(
    q: &Query,
    target: &Query,
    tr: &Transducer,
    budget: &EnumerationBudget,
) -> Result<OracleReport, String> {
    let alphabet = tr.input_alphabet.union(&q.automaton.alphabet)?;
    let shapes = enumerate_shapes(&alphabet, budget)?;
    let stripped = tr.strip_transducer();
    let mut pooled: BTreeMap<DataTree, BTreeSet<Vec<BigUint>>> = BTreeMap::new();
    for shape in &shapes {
        let t = shape.with_preorder_values();
        if let Ok(img) = tr.apply(&t) {
            pooled.entry(img).or_default().extend(q.eval_values(&t));
        }
    }
    let mut report = OracleReport::default();
    let mut unbounded_images = 0usize;
    for (img, sampled) in &pooled {
        report.checked += 1;
        let got = target.eval_values(img);
        let img_shape = img.strip_values();
        let shape_preimage = stripped
            .inverse_type(&TreeAutomaton::singleton(&img_shape, &stripped.output_alphabet));
        let complete =
            shape_preimage.max_tree_size().map(|k| k <= budget.max_nodes).unwrap_or(false);
        if complete {
            let mut exact: BTreeSet<Vec<BigUint>> = BTreeSet::new();
            let mut free_value = false;
            for shape in shapes.iter().filter(|s| shape_preimage.accepts(s)) {
                let Ok((_, trace)) = tr.apply_traced(&shape.with_preorder_values()) else {
                    continue;
                };
                // Values forced by the image at copied positions; filler
                // elsewhere. A mismatch in value presence rules the shape
                // out of the preimage.
                let mut candidate = shape.clone();
                let mut in_preimage = true;
                for (pos, fate) in &trace {
                    let v = match fate {
                        Fate::Copied(out) => match img.value_at(out) {
                            Some(v) => v.clone(),
                            None => {
                                in_preimage = false;
                                break;
                            }
                        },
                        Fate::Erased | Fate::Deleted => BigUint::from(1u32),
                    };
                    candidate = candidate.set_value(pos, v).expect("trace positions exist");
                }
                if !in_preimage || tr.apply(&candidate).as_ref() != Ok(img) {
                    continue;
                }
                for tuple in q.eval(shape) {
                    let values: Option<Vec<BigUint>> = tuple
                        .iter()
                        .map(|pos| match trace.get(pos) {
                            Some(Fate::Copied(out)) => img.value_at(out).cloned(),
                            _ => None,
                        })
                        .collect();
                    match values {
                        Some(vs) => {
                            exact.insert(vs);
                        }
                        None => {
                            free_value = true;
                            report.discrepancies.push(format!(
                                "image {img}: source {candidate} selects a position whose \
                                 value the transform drops, so the pooled values are unbounded"
                            ));
                        }
                    }
                }
            }
            if !free_value {
                for missing in exact.difference(&got) {
                    report.discrepancies.push(format!(
                        "image {img}: pooled source values contain {} but the target query \
                         does not select it",
                        render_value_tuple(missing)
                    ));
                }
                for extra in got.difference(&exact) {
                    report.discrepancies.push(format!(
                        "image {img}: target query selects {} but no source supplies it",
                        render_value_tuple(extra)
                    ));
                }
            }
        } else {
            unbounded_images += 1;
            for missing in sampled.difference(&got) {
                report.discrepancies.push(format!(
                    "image {img}: sampled source values contain {} but the target query \
                     does not select it",
                    render_value_tuple(missing)
                ));
            }
            let extra: BTreeSet<&Vec<BigUint>> = got.difference(sampled).collect();
            if !extra.is_empty() {
                report.warnings.push(format!(
                    "image {img}: target selects {} tuples beyond the sampled sources; \
                     its preimage exceeds the enumeration budget, so they were not judged",
                    extra.len()
                ));
            }
        }
    }
    if unbounded_images > 0 {
        report.warnings.push(format!(
            "{unbounded_images} of {} images have preimages beyond the enumeration budget; \
             their checks are one-sided",
            report.checked
        ));
    }
    Ok(report)
}

/// Checks the per-source equation on every enumerated domain tree: the
/// target query's values on the transform must equal the source query's
/// values on the source.
pub fn check_strong_equation(
    q: &Query,
    target: &Query,
    tr: &Transducer,
    budget: &EnumerationBudget,
) -> Result<OracleReport, String> {
    let alphabet = tr.input_alphabet.union(&q.automaton.alphabet)?;
    let mut report = OracleReport::default();
    for t in enumerate_trees(&alphabet, budget)? {
        let Ok(img) = tr.apply(&t) else { continue };
        report.checked += 1;
        let want = q.eval_values(&t);
        let got = target.eval_values(&img);
        if want != got {
            report.discrepancies.push(format!(
                "source {t}: source query selects {} but target query selects {} on {img}",
                render_value_set(&want),
                render_value_set(&got)
            ));
        }
    }
    Ok(report)
}

/// Compares a constructed automaton's membership against an independent
/// reference predicate on every enumerated valueless tree.
pub fn check_language_construction(
    built: &TreeAutomaton,
    mut predicate: impl FnMut(&DataTree) -> bool,
    budget: &EnumerationBudget,
) -> Result<OracleReport, String> {
    let mut report = OracleReport::default();
    for t in enumerate_shapes(&built.alphabet, budget)? {
        report.checked += 1;
        let got = built.accepts(&t);
        let want = predicate(&t);
        if got != want {
            report.discrepancies.push(format!(
                "membership of {t}: automaton says {got}, reference says {want}"
            ));
        }
    }
    Ok(report)
}

/// Searches the enumerated domain for two sources with the same transform
/// but different query values; such a pair refutes strong preservation
/// regardless of the target query. Returns the first pair in enumeration
/// order.
pub fn find_strong_counterexample(
    q: &Query,
    tr: &Transducer,
    budget: &EnumerationBudget,
) -> Result<Option<(DataTree, DataTree)>, String> {
    let alphabet = tr.input_alphabet.union(&q.automaton.alphabet)?;
    let mut seen: Vec<(DataTree, DataTree, BTreeSet<Vec<BigUint>>)> = Vec::new();
    for t in enumerate_trees(&alphabet, budget)? {
        let Ok(img) = tr.apply(&t) else { continue };
        let values = q.eval_values(&t);
        for (prev, prev_img, prev_values) in &seen {
            if *prev_img == img && *prev_values != values {
                return Ok(Some((prev.clone(), t)));
            }
        }
        seen.push((t, img, values));
    }
    Ok(None)
}
