//! Def-use edges for the dataflow component of CodeBLEU.
//!
//! A definition is the identifier on the left of an assignment operator (`=`,
//! or a compound form such as `+=`). Every later identifier occurrence of a
//! defined name is a use of its nearest prior definition. Variables are renamed
//! `v0, v1, ...` in order of first definition, so consistent renames produce
//! identical edge sets.

use std::collections::HashMap;

use super::tokenize::{is_identifier, tokenize_code};
use super::Language;

/// `(used variable, which definition of it, variable defined by the using
/// statement)`, all anonymised.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DefUseEdge {
    pub variable: String,
    pub definition: usize,
    pub flows_into: Option<String>,
}

const COMPOUND_PREFIX: &[&str] = &["+", "-", "*", "/", "%", "&", "|", "^"];

/// Index of the assigned identifier if `tokens[op]` is an assignment `=`.
fn assignment_target(tokens: &[String], op: usize, language: Language) -> Option<usize> {
    if tokens[op] != "=" {
        return None;
    }
    let next = tokens.get(op + 1).map(String::as_str);
    if matches!(next, Some("=") | Some(">")) {
        return None;
    }
    let mut lhs = op.checked_sub(1)?;
    match tokens[lhs].as_str() {
        "=" | "!" | "<" | ">" => return None,
        t if COMPOUND_PREFIX.contains(&t) => lhs = lhs.checked_sub(1)?,
        _ => {}
    }
    let t = &tokens[lhs];
    (is_identifier(t) && !language.is_keyword(t)).then_some(lhs)
}

pub fn extract_edges(code: &str, language: Language) -> Vec<DefUseEdge> {
    let tokens = tokenize_code(code);
    let mut anon: HashMap<&str, String> = HashMap::new();
    let mut def_count: HashMap<&str, usize> = HashMap::new();
    let mut edges = Vec::new();

    let mut start = 0;
    while start < tokens.len() {
        let mut end = start;
        while end < tokens.len() && !matches!(tokens[end].as_str(), ";" | "{" | "}") {
            end += 1;
        }
        let stmt = start..end;

        let mut targets = Vec::new();
        for op in stmt.clone() {
            if let Some(t) = assignment_target(&tokens, op, language) {
                targets.push(t);
            }
        }
        let into = targets.first().map(|&t| tokens[t].as_str());

        for i in stmt.clone() {
            let tok = tokens[i].as_str();
            if targets.contains(&i) || !is_identifier(tok) || language.is_keyword(tok) {
                continue;
            }
            if i > 0 && tokens[i - 1] == "." {
                continue;
            }
            if let Some(&count) = def_count.get(tok) {
                let flows_into = into.map(|name| {
                    let next = anon.len();
                    anon.get(name)
                        .cloned()
                        .unwrap_or_else(|| format!("v{next}"))
                });
                edges.push(DefUseEdge {
                    variable: anon[tok].clone(),
                    definition: count - 1,
                    flows_into,
                });
            }
        }
        for &t in &targets {
            let name = tokens[t].as_str();
            let next = anon.len();
            anon.entry(name).or_insert_with(|| format!("v{next}"));
            *def_count.entry(name).or_insert(0) += 1;
        }
        // compound assignment also reads the old value
        for &t in &targets {
            let name = tokens[t].as_str();
            if COMPOUND_PREFIX.contains(&tokens[t + 1].as_str()) && def_count[name] > 1 {
                edges.push(DefUseEdge {
                    variable: anon[name].clone(),
                    definition: def_count[name] - 2,
                    flows_into: Some(anon[name].clone()),
                });
            }
        }
        start = end + 1;
    }
    edges
}

/// Fraction of reference edges (as a multiset) found in the candidate. A
/// reference without edges scores 1.
pub fn dataflow_match(candidate: &str, reference: &str, language: Language) -> f64 {
    let reference_edges = extract_edges(reference, language);
    if reference_edges.is_empty() {
        return 1.0;
    }
    let mut available: HashMap<DefUseEdge, usize> = HashMap::new();
    for e in extract_edges(candidate, language) {
        *available.entry(e).or_insert(0) += 1;
    }
    let matched = reference_edges
        .iter()
        .filter(|e| match available.get_mut(*e) {
            Some(c) if *c > 0 => {
                *c -= 1;
                true
            }
            _ => false,
        })
        .count();
    matched as f64 / reference_edges.len() as f64
}
