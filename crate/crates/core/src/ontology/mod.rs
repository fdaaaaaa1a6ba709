//! Phenotype knowledge graph: terms, is-a edges and textual attributes.

mod attribute;
mod parse;

pub use attribute::{
    attributes_of, attributes_of_with, sample_attribute_pair, sample_attribute_pair_with,
    AttributeKind, AttributeOptions, AttributeText,
};
pub use parse::{parse_obo, ParseReport};

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One phenotype term. `parent_ids` holds the is-a targets in source order;
/// edges point child to parent, so a term nobody lists as a parent is
/// terminal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhenotypeTerm {
    #[serde(rename = "id")]
    pub term_id: String,
    pub name: String,
    #[serde(rename = "def", skip_serializing_if = "Option::is_none", default)]
    pub definition: Option<String>,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(rename = "is_a", default)]
    pub parent_ids: Vec<String>,
}

/// Validated, acyclic is-a graph over phenotype terms.
#[derive(Debug, Clone)]
pub struct PhenotypeGraph {
    terms: BTreeMap<String, PhenotypeTerm>,
    /// parent id -> child ids, sorted. Terms with no entry have no children.
    children: BTreeMap<String, Vec<String>>,
    edge_count: usize,
}

impl PhenotypeGraph {
    /// Build and validate a graph. Rejects duplicate ids, empty names,
    /// dangling or duplicated parent references, self loops and cycles.
    pub fn from_terms(term_list: Vec<PhenotypeTerm>) -> Result<Self> {
        let mut terms: BTreeMap<String, PhenotypeTerm> = BTreeMap::new();
        for term in term_list {
            if term.term_id.is_empty() {
                return Err(Error::Structural("term with empty id".into()));
            }
            if term.name.is_empty() {
                return Err(Error::Structural(format!("term {} has empty name", term.term_id)));
            }
            let id = term.term_id.clone();
            if terms.insert(id.clone(), term).is_some() {
                return Err(Error::Structural(format!("duplicate term id {id}")));
            }
        }

        let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut edge_count = 0usize;
        for term in terms.values() {
            let mut seen = BTreeSet::new();
            for parent in &term.parent_ids {
                if parent == &term.term_id {
                    return Err(Error::Structural(format!(
                        "term {} lists itself as parent",
                        term.term_id
                    )));
                }
                if !terms.contains_key(parent) {
                    return Err(Error::Structural(format!(
                        "term {} references missing parent {parent}",
                        term.term_id
                    )));
                }
                if !seen.insert(parent.clone()) {
                    return Err(Error::Structural(format!(
                        "term {} lists parent {parent} twice",
                        term.term_id
                    )));
                }
                children.entry(parent.clone()).or_default().push(term.term_id.clone());
                edge_count += 1;
            }
        }
        for kids in children.values_mut() {
            kids.sort();
        }

        let graph = PhenotypeGraph { terms, children, edge_count };
        graph.check_acyclic()?;
        Ok(graph)
    }

    /// Kahn's algorithm over child->parent edges; leftover nodes form a cycle.
    fn check_acyclic(&self) -> Result<()> {
        let mut remaining_parents: BTreeMap<&str, usize> = self
            .terms
            .values()
            .map(|t| (t.term_id.as_str(), t.parent_ids.len()))
            .collect();
        let mut queue: Vec<&str> = remaining_parents
            .iter()
            .filter(|(_, n)| **n == 0)
            .map(|(id, _)| *id)
            .collect();
        let mut removed = 0usize;
        while let Some(id) = queue.pop() {
            removed += 1;
            if let Some(kids) = self.children.get(id) {
                for kid in kids {
                    let n = remaining_parents.get_mut(kid.as_str()).unwrap();
                    *n -= 1;
                    if *n == 0 {
                        queue.push(kid);
                    }
                }
            }
        }
        if removed != self.terms.len() {
            let stuck: Vec<&str> = remaining_parents
                .iter()
                .filter(|(_, n)| **n > 0)
                .map(|(id, _)| *id)
                .collect();
            return Err(Error::Structural(format!(
                "is-a cycle involving {} term(s), e.g. {}",
                stuck.len(),
                stuck.first().copied().unwrap_or("?")
            )));
        }
        Ok(())
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn contains(&self, term_id: &str) -> bool {
        self.terms.contains_key(term_id)
    }

    pub fn term(&self, term_id: &str) -> Result<&PhenotypeTerm> {
        self.terms
            .get(term_id)
            .ok_or_else(|| Error::Lookup(format!("unknown term id {term_id}")))
    }

    /// All terms in ascending id order.
    pub fn terms(&self) -> impl Iterator<Item = &PhenotypeTerm> {
        self.terms.values()
    }

    /// Child ids of `term_id`, sorted. Empty when the term is terminal.
    pub fn children_of(&self, term_id: &str) -> &[String] {
        self.children.get(term_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Terms no other term lists as a parent, in ascending id order.
    pub fn terminal_nodes(&self) -> Vec<&PhenotypeTerm> {
        self.terms
            .values()
            .filter(|t| !self.children.contains_key(t.term_id.as_str()))
            .collect()
    }

    /// Non-terminal terms, i.e. terms with at least one child.
    pub fn group_nodes(&self) -> Vec<&PhenotypeTerm> {
        self.terms
            .values()
            .filter(|t| self.children.contains_key(t.term_id.as_str()))
            .collect()
    }

    /// Normalized (keyword, term id) pairs over the names and synonyms of all
    /// terminal terms. Keywords are deduplicated per term, not globally: two
    /// terms sharing a synonym both appear. Order: ascending term id, then
    /// name before synonyms in source order, duplicates within a term skipped.
    pub fn keyword_list(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for term in self.terminal_nodes() {
            let mut seen = BTreeSet::new();
            for raw in std::iter::once(&term.name).chain(term.synonyms.iter()) {
                let kw = normalize_keyword(raw);
                if kw.is_empty() || !seen.insert(kw.clone()) {
                    continue;
                }
                out.push((kw, term.term_id.clone()));
            }
        }
        out
    }

    /// Serialize one term per line, ascending id order.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for term in self.terms.values() {
            serde_json::to_writer(&mut w, term)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Inverse of [`write_jsonl`]: parse and re-validate.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut terms = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let term: PhenotypeTerm = serde_json::from_str(&line).map_err(|e| {
                Error::Parse(format!("graph jsonl line {}: {e}", lineno + 1))
            })?;
            terms.push(term);
        }
        Self::from_terms(terms)
    }
}

/// Casefold and collapse internal whitespace. Used for keyword matching on
/// both the graph and caption sides so the two agree on equality.
pub fn normalize_keyword(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for ch in word.chars() {
            out.extend(ch.to_lowercase());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn term(id: &str, name: &str, parents: &[&str]) -> PhenotypeTerm {
        PhenotypeTerm {
            term_id: id.into(),
            name: name.into(),
            definition: None,
            synonyms: vec![],
            parent_ids: parents.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn rejects_cycle() {
        let err = PhenotypeGraph::from_terms(vec![
            term("A", "a", &["B"]),
            term("B", "b", &["A"]),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Structural(_)), "{err}");
    }

    #[test]
    fn rejects_dangling_parent() {
        let err = PhenotypeGraph::from_terms(vec![term("A", "a", &["ZZ"])]).unwrap_err();
        assert!(err.to_string().contains("missing parent"), "{err}");
    }

    #[test]
    fn rejects_duplicate_id() {
        let err =
            PhenotypeGraph::from_terms(vec![term("A", "a", &[]), term("A", "b", &[])]).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn rejects_self_loop_and_duplicate_edge() {
        let err = PhenotypeGraph::from_terms(vec![term("A", "a", &["A"])]).unwrap_err();
        assert!(err.to_string().contains("itself"), "{err}");
        let err = PhenotypeGraph::from_terms(vec![
            term("P", "p", &[]),
            term("A", "a", &["P", "P"]),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("twice"), "{err}");
    }

    #[test]
    fn terminal_and_group_partition() {
        let g = PhenotypeGraph::from_terms(vec![
            term("R", "root", &[]),
            term("M", "mid", &["R"]),
            term("L", "leaf", &["M"]),
        ])
        .unwrap();
        let terminal: Vec<&str> =
            g.terminal_nodes().iter().map(|t| t.term_id.as_str()).collect();
        assert_eq!(terminal, ["L"]);
        let groups: Vec<&str> = g.group_nodes().iter().map(|t| t.term_id.as_str()).collect();
        assert_eq!(groups, ["M", "R"]);
        assert_eq!(g.children_of("R"), ["M".to_string()]);
        assert_eq!(g.children_of("L"), Vec::<String>::new());
    }

    #[test]
    fn normalize_folds_case_and_whitespace() {
        assert_eq!(normalize_keyword("  Spider\t Fingers \n"), "spider fingers");
        assert_eq!(normalize_keyword("ABC"), "abc");
        assert_eq!(normalize_keyword(""), "");
    }
}
