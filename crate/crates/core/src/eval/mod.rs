//! Evaluation: zero-shot classification with prompt ensembling,
//! cross-modal retrieval (I2T/T2I/I2P/P2I) by R@K, set-based phenotype
//! matching, and linear probing at data fractions. Ranking ties always
//! break toward the lower gallery index so every metric is deterministic.

mod metrics;
mod probe;
mod prompts;
mod report;
mod zeroshot;

pub use metrics::{
    matching_metrics, paired_retrieval, predict_topk_sets, recall_report, retrieval_recall_at_k,
    top_k_indices, MatchingMetrics, RetrievalReport,
};
pub use probe::{linear_probe, LabeledFeatureSet, ProbeConfig, ProbeResult};
pub use prompts::{PromptTemplateSet, CLASS_PLACEHOLDER, DEFAULT_TEMPLATES};
pub use report::EvalReport;
pub use zeroshot::{
    class_embedding, class_embeddings, phenotype_retrieval, phenotype_retrieval_from_embeddings,
    zero_shot_classify, zero_shot_from_embeddings, ZeroShotReport,
};
