//! Textual attributes of a term: the sentences the knowledge encoder trains
//! on. Two attributes of the same term form a positive pair.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::PhenotypeGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Name,
    Definition,
    Synonym,
    Relation,
}

/// One attribute sentence, tagged with the term it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeText {
    pub term_id: String,
    pub kind: AttributeKind,
    pub text: String,
}

/// Which attribute families to emit. Name is always included so every term
/// has at least one attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeOptions {
    pub definitions: bool,
    pub synonyms: bool,
    pub relations: bool,
}

impl Default for AttributeOptions {
    fn default() -> Self {
        AttributeOptions { definitions: true, synonyms: true, relations: true }
    }
}

/// Hierarchy sentence shared by both endpoints of an is-a edge.
fn relation_sentence(child_name: &str, parent_name: &str) -> String {
    format!("{child_name} is a child phenotype of {parent_name}")
}

/// All attributes of a term, in a fixed order: name, definition, synonyms in
/// source order, then hierarchy sentences (edges to parents in source order,
/// edges from children in ascending child id order). Both endpoints of an
/// edge receive the same sentence.
pub fn attributes_of_with(
    graph: &PhenotypeGraph,
    term_id: &str,
    opts: AttributeOptions,
) -> Result<Vec<AttributeText>> {
    let term = graph.term(term_id)?;
    let tag = |kind, text: String| AttributeText { term_id: term_id.to_string(), kind, text };

    let mut out = vec![tag(AttributeKind::Name, term.name.clone())];
    if opts.definitions {
        if let Some(def) = &term.definition {
            out.push(tag(AttributeKind::Definition, def.clone()));
        }
    }
    if opts.synonyms {
        for syn in &term.synonyms {
            out.push(tag(AttributeKind::Synonym, syn.clone()));
        }
    }
    if opts.relations {
        for parent_id in &term.parent_ids {
            let parent = graph.term(parent_id)?;
            out.push(tag(AttributeKind::Relation, relation_sentence(&term.name, &parent.name)));
        }
        for child_id in graph.children_of(term_id) {
            let child = graph.term(child_id)?;
            out.push(tag(AttributeKind::Relation, relation_sentence(&child.name, &term.name)));
        }
    }
    Ok(out)
}

/// [`attributes_of_with`] with every family enabled.
pub fn attributes_of(graph: &PhenotypeGraph, term_id: &str) -> Result<Vec<AttributeText>> {
    attributes_of_with(graph, term_id, AttributeOptions::default())
}

/// Draw two distinct attributes of a term uniformly without replacement.
/// A term with a single attribute pairs it with itself.
pub fn sample_attribute_pair<R: Rng>(
    graph: &PhenotypeGraph,
    term_id: &str,
    rng: &mut R,
) -> Result<(AttributeText, AttributeText)> {
    sample_attribute_pair_with(graph, term_id, AttributeOptions::default(), rng)
}

/// [`sample_attribute_pair`] restricted to the chosen attribute families.
pub fn sample_attribute_pair_with<R: Rng>(
    graph: &PhenotypeGraph,
    term_id: &str,
    opts: AttributeOptions,
    rng: &mut R,
) -> Result<(AttributeText, AttributeText)> {
    let attrs = attributes_of_with(graph, term_id, opts)?;
    debug_assert!(!attrs.is_empty(), "name attribute is unconditional");
    if attrs.len() == 1 {
        let only = attrs.into_iter().next().unwrap();
        return Ok((only.clone(), only));
    }
    let i = rng.gen_range(0..attrs.len());
    let mut j = rng.gen_range(0..attrs.len() - 1);
    if j >= i {
        j += 1;
    }
    Ok((attrs[i].clone(), attrs[j].clone()))
}
