//! End-to-end orchestration: a TOML run configuration, a hash-keyed stage
//! manifest, the six-stage pipeline, and the ablation grid driver.

mod ablate;
mod config;
mod manifest;
mod run;

pub use ablate::{run_ablations, AblationAxes, AblationRun, InitMode, KgVariant};
pub use config::{
    demo_config, CliOverrides, CorpusSection, EvalSection, EvalTask, KnowledgeSection,
    ModelBackend, OntologySection, RunConfig, SplitSection, VlpSection,
};
pub use manifest::{
    sha256_file, sha256_hex, Manifest, StageRecord, StageStatus,
};
pub use run::{
    evaluate_pairs, load_pair_images, run_pipeline, run_pipeline_until, write_demo_workspace,
    EvalData, PipelineOutcome, STAGE_NAMES,
};
