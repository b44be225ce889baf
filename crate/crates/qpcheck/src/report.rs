//! Deterministic report assembly for the command-line tool: the same
//! content rendered as plain text lines or as a JSON document. Given equal
//! inputs the rendered bytes are equal; anything nondeterministic (timing)
//! stays out of reports.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use serde_json::{json, Map, Value};

use crate::oracle::OracleReport;
use crate::preservation::{
    StrongDecision, StrongWitnessKind, WeakDecision, WeakWitness, WitnessKind,
};
use crate::state::State;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
}

/// An ordered, renderer-agnostic report: one optional verdict, labeled fact
/// lines, intermediate automaton sizes, and free-form body lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    pub command: String,
    pub verdict: Option<(String, String)>,
    pub facts: Vec<(String, String)>,
    pub sizes: BTreeMap<String, usize>,
    pub body: Vec<String>,
}

impl Report {
    pub fn new(command: impl Into<String>) -> Report {
        Report { command: command.into(), ..Report::default() }
    }

    pub fn verdict(&mut self, question: impl Into<String>, answer: impl Into<String>) {
        self.verdict = Some((question.into(), answer.into()));
    }

    pub fn fact(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.facts.push((key.into(), value.into()));
    }

    pub fn body_line(&mut self, line: impl Into<String>) {
        self.body.push(line.into());
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Text => self.render_text(),
            Format::Json => self.render_json(),
        }
    }

    fn render_text(&self) -> String {
        let mut lines = Vec::new();
        if let Some((question, answer)) = &self.verdict {
            lines.push(format!("{question}: {answer}"));
        }
        for (key, value) in &self.facts {
            lines.push(format!("{key}: {value}"));
        }
        if !self.sizes.is_empty() {
            let parts: Vec<String> =
                self.sizes.iter().map(|(k, v)| format!("{k}={v}")).collect();
            lines.push(format!("intermediate states: {}", parts.join(" ")));
        }
        lines.extend(self.body.iter().cloned());
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    fn render_json(&self) -> String {
        let mut doc = Map::new();
        doc.insert("command".to_string(), json!(self.command));
        doc.insert(
            "verdict".to_string(),
            match &self.verdict {
                Some((question, answer)) => json!({ question.clone(): answer }),
                None => Value::Null,
            },
        );
        let facts: Vec<Value> =
            self.facts.iter().map(|(k, v)| json!([k, v])).collect();
        doc.insert("facts".to_string(), Value::Array(facts));
        doc.insert("sizes".to_string(), json!(self.sizes));
        doc.insert("body".to_string(), json!(self.body));
        let mut out = serde_json::to_string_pretty(&Value::Object(doc))
            .expect("reports serialize");
        out.push('\n');
        out
    }
}

/// Value tuples in query-result notation: singletons bare, wider tuples
/// parenthesized, the whole set in braces.
pub fn format_value_tuples(values: &BTreeSet<Vec<BigUint>>) -> String {
    let rendered: Vec<String> = values
        .iter()
        .map(|tuple| {
            if tuple.len() == 1 {
                tuple[0].to_string()
            } else {
                let inner: Vec<String> = tuple.iter().map(BigUint::to_string).collect();
                format!("({})", inner.join(","))
            }
        })
        .collect();
    format!("{{{}}}", rendered.join(","))
}

fn state_tuple(states: &[State]) -> String {
    states.iter().map(State::to_string).collect::<Vec<_>>().join(", ")
}

fn describe_weak_witness(w: &WeakWitness) -> String {
    let loss = match &w.kind {
        WitnessKind::Deleted => "lies in a deleted subtree".to_string(),
        WitnessKind::ValueErased { symbol } => {
            format!("is consumed by the value-erasing rule for '{symbol}'")
        }
    };
    format!(
        "state {} at position {} of {} {loss} (selection tuple: {})",
        w.state,
        w.position,
        w.tree,
        state_tuple(&w.tuple)
    )
}

pub fn weak_report(command: &str, d: &WeakDecision) -> Report {
    let mut r = Report::new(command);
    r.verdict("weakly preserves", if d.preserved { "yes" } else { "no" });
    for w in &d.witnesses {
        r.fact("witness", describe_weak_witness(w));
    }
    r.sizes = d.sizes.clone();
    r
}

pub fn strong_report(command: &str, d: &StrongDecision) -> Report {
    let mut r = Report::new(command);
    r.verdict("strongly preserves", if d.preserved { "yes" } else { "no" });
    if !d.weak.preserved {
        r.fact("reason", "weak preservation already fails");
        for w in &d.weak.witnesses {
            r.fact("witness", describe_weak_witness(w));
        }
    } else if let Some(w) = &d.witness {
        r.fact("witness", w.tree.to_string());
        r.fact(
            "witness kind",
            match w.kind {
                StrongWitnessKind::SpuriousMarking => {
                    "a marking accepted by the transformed side that is not a selection"
                }
                StrongWitnessKind::SelectionUnmatched => {
                    "a marked selection that no transformed output matches"
                }
            },
        );
    }
    r.sizes = d.sizes.clone();
    r
}

pub fn oracle_summary(command: &str, question: &str, o: &OracleReport) -> Report {
    let mut r = Report::new(command);
    r.verdict(question, if o.ok() { "pass" } else { "fail" });
    r.fact("checked", o.checked.to_string());
    for d in &o.discrepancies {
        r.fact("discrepancy", d);
    }
    for w in &o.warnings {
        r.fact("warning", w);
    }
    r
}
