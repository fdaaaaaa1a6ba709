//! Image-caption curation: article records in, filtered and aligned
//! subfigure-level training pairs out.
//!
//! Stages run in a fixed order: keyword matching against the graph's
//! terminal terms, embedding-cluster filtering against a reviewed keep
//! list, compound-figure splitting, caption refinement, subfigure
//! alignment, and final pair emission with a leakage-free benchmark
//! split. Every model-backed stage degrades to the whole figure with the
//! whole caption when its output cannot be trusted.

mod align;
mod detect;
mod filter;
pub mod fixture;
mod http;
mod integrate;
mod matching;
mod records;
mod refine;

pub use align::{
    align_subfigures, build_align_prompt, AlignOutcome, AlignedPanel, MockAligner, VisionAligner,
    SUBFIGURE_ALIGN_PROMPT,
};
pub use detect::{
    split_compound, GutterDetector, MockDetector, RawDetection, SubfigureDetector,
    DEFAULT_CONFIDENCE_THRESHOLD,
};
pub use filter::{
    apply_cluster_filter, fit_cluster_filter, kmeans, read_keep_list, write_keep_list,
    ClusterFilterModel, ImageEmbedder, PixelStatEmbedder,
};
pub use http::{HttpModelClient, HttpModelConfig, API_KEY_ENV, ENDPOINT_ENV};
pub use integrate::{
    benchmark_split, curate_corpus, sample_holdout, CurateConfig, CurateOutput, ModelClients,
};
pub use matching::{match_figures, KeywordMatcher, MatchedFigure};
pub use records::{
    read_articles_jsonl, read_pairs_jsonl, write_articles_jsonl, write_pairs_jsonl, ArticleRecord,
    AuditEvent, AuditLog, FigureRecord, ImageCaptionPair, SubfigureBox,
};
pub use refine::{
    build_refine_prompt, refine_captions, truncate_caption, MockRefiner, RefinedCaption,
    TextRefiner, CAPTION_REFINE_PROMPT, MAX_CAPTION_TOKENS,
};
