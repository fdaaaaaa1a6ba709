//! Phenotype knowledge-graph guided vision-language pretraining.
//!
//! The crate covers the full pipeline: building a phenotype knowledge graph
//! from an OBO ontology, curating image-caption pairs from figure corpora,
//! training a knowledge encoder on graph attributes, training a
//! knowledge-distilled dual encoder on the curated pairs, and evaluating the
//! result on zero-shot classification, retrieval, matching and linear-probe
//! tasks.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod knowledge;
pub mod nn;
pub mod ontology;
pub mod pipeline;
pub mod synth;
pub mod vlp;

pub use error::{Error, Result};
