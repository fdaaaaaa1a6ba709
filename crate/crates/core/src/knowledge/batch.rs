//! Batch assembly for attribute contrastive training.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ontology::{sample_attribute_pair_with, AttributeOptions, PhenotypeGraph};

/// B distinct terms with two attribute sentences each. `texts` interleaves
/// the views: rows 2i and 2i+1 belong to `term_ids[i]`.
#[derive(Debug, Clone)]
pub struct KnowledgeBatch {
    pub term_ids: Vec<String>,
    pub texts: Vec<String>,
}

impl KnowledgeBatch {
    pub fn len(&self) -> usize {
        self.term_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.term_ids.is_empty()
    }
}

/// Draw `batch_size` distinct terms uniformly (over all terms, groups
/// included: hierarchy sentences give every term at least one attribute)
/// and an attribute pair for each.
pub fn build_knowledge_batch<R: Rng>(
    graph: &PhenotypeGraph,
    batch_size: usize,
    rng: &mut R,
) -> Result<KnowledgeBatch> {
    build_knowledge_batch_with(graph, batch_size, AttributeOptions::default(), rng)
}

/// [`build_knowledge_batch`] drawing pairs from the chosen attribute
/// families only.
pub fn build_knowledge_batch_with<R: Rng>(
    graph: &PhenotypeGraph,
    batch_size: usize,
    opts: AttributeOptions,
    rng: &mut R,
) -> Result<KnowledgeBatch> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch_size must be positive".into()));
    }
    let all: Vec<&str> = graph.terms().map(|t| t.term_id.as_str()).collect();
    if batch_size > all.len() {
        return Err(Error::Parameter(format!(
            "batch_size {batch_size} exceeds the {} terms available",
            all.len()
        )));
    }
    let picks = rand::seq::index::sample(rng, all.len(), batch_size);
    let mut term_ids = Vec::with_capacity(batch_size);
    let mut texts = Vec::with_capacity(2 * batch_size);
    for idx in picks {
        let id = all[idx];
        let (a, b) = sample_attribute_pair_with(graph, id, opts, rng)?;
        term_ids.push(id.to_string());
        texts.push(a.text);
        texts.push(b.text);
    }
    Ok(KnowledgeBatch { term_ids, texts })
}
