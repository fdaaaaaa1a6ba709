//! Run configuration: one TOML document describing an end-to-end
//! experiment, from ontology file to evaluation report.
//!
//! Every knob has a default matching the reference training recipe, so a
//! minimal file only names the input paths. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{CurateConfig, DEFAULT_CONFIDENCE_THRESHOLD};
use crate::error::{Error, Result};
use crate::knowledge::KnowledgeTrainConfig;
use crate::nn::{AdamWConfig, TextEncoderConfig, VisionEncoderConfig};
use crate::ontology::AttributeOptions;
use crate::vlp::{VlModelConfig, VlpTrainConfig};

/// Which refine and align services curation talks to. Panel detection is
/// always local.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelBackend {
    /// Deterministic built-in stand-ins; no network.
    #[default]
    Mock,
    /// JSON-over-HTTP clients configured through `PHENOVLP_MODEL_ENDPOINT`
    /// and `PHENOVLP_MODEL_API_KEY`.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OntologySection {
    pub obo_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// JSONL of article records (one per line).
    pub articles_path: PathBuf,
    /// Directory the records' image references are relative to.
    pub corpus_root: PathBuf,
    /// Cluster keep-list; omitting it skips the image filter.
    #[serde(default)]
    pub keep_list_path: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub split_enabled: bool,
    #[serde(default)]
    pub strict_keywords: bool,
    #[serde(default = "default_confidence")]
    pub confidence_threshold: f64,
    #[serde(default = "default_filter_k")]
    pub filter_k1: usize,
    #[serde(default = "default_filter_k")]
    pub filter_k2: usize,
    #[serde(default = "default_filter_embed_dim")]
    pub filter_embed_dim: usize,
    #[serde(default)]
    pub backend: ModelBackend,
}

/// How articles are held out for the benchmark. Exactly one of the two
/// fields must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default)]
    pub holdout_pmcids: Vec<String>,
    #[serde(default)]
    pub holdout_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeSection {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_total_steps")]
    pub total_steps: u64,
    #[serde(default = "default_warmup_steps")]
    pub warmup_steps: u64,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub attributes: AttributeOptions,
    #[serde(default)]
    pub encoder: TextEncoderConfig,
    #[serde(default)]
    pub optimizer: AdamWConfig,
}

impl Default for KnowledgeSection {
    fn default() -> Self {
        KnowledgeSection {
            batch_size: default_batch_size(),
            total_steps: default_total_steps(),
            warmup_steps: default_warmup_steps(),
            base_lr: default_base_lr(),
            tau: default_tau(),
            attributes: AttributeOptions::default(),
            encoder: TextEncoderConfig::default(),
            optimizer: AdamWConfig::default(),
        }
    }
}

impl KnowledgeSection {
    pub fn train_config(&self, seed: u64) -> KnowledgeTrainConfig {
        KnowledgeTrainConfig {
            seed,
            batch_size: self.batch_size,
            total_steps: self.total_steps,
            warmup_steps: self.warmup_steps,
            base_lr: self.base_lr,
            tau: self.tau,
            attributes: self.attributes,
            encoder: self.encoder,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VlpSection {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: u64,
    #[serde(default = "default_warmup_steps")]
    pub warmup_steps: u64,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_tau")]
    pub tau_multimodal: f64,
    #[serde(default = "default_tau")]
    pub tau_distill: f64,
    /// Distillation weight; zero trains without a teacher.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub model: VlModelConfig,
    #[serde(default)]
    pub optimizer: AdamWConfig,
}

impl Default for VlpSection {
    fn default() -> Self {
        VlpSection {
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            warmup_steps: default_warmup_steps(),
            base_lr: default_base_lr(),
            tau_multimodal: default_tau(),
            tau_distill: default_tau(),
            alpha: default_alpha(),
            model: VlModelConfig::default(),
            optimizer: AdamWConfig::default(),
        }
    }
}

impl VlpSection {
    pub fn train_config(&self, seed: u64) -> VlpTrainConfig {
        VlpTrainConfig {
            seed,
            batch_size: self.batch_size,
            epochs: self.epochs,
            warmup_steps: self.warmup_steps,
            base_lr: self.base_lr,
            tau_multimodal: self.tau_multimodal,
            tau_distill: self.tau_distill,
            alpha: self.alpha,
            model: self.model,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    ZeroShot,
    Retrieval,
    PhenotypeRetrieval,
    Matching,
    Probe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_tasks")]
    pub tasks: Vec<EvalTask>,
    #[serde(default = "default_k_values")]
    pub k_values: Vec<usize>,
    #[serde(default = "default_probe_ratios")]
    pub probe_ratios: Vec<f64>,
    /// Prompt template file, one template per line; omitted means the
    /// built-in set.
    #[serde(default)]
    pub templates_path: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            tasks: default_tasks(),
            k_values: default_k_values(),
            probe_ratios: default_probe_ratios(),
            templates_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub ontology: OntologySection,
    pub corpus: CorpusSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub knowledge: KnowledgeSection,
    #[serde(default)]
    pub vlp: VlpSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_true() -> bool {
    true
}
fn default_confidence() -> f64 {
    DEFAULT_CONFIDENCE_THRESHOLD
}
fn default_filter_k() -> usize {
    20
}
fn default_filter_embed_dim() -> usize {
    32
}
fn default_batch_size() -> usize {
    256
}
fn default_total_steps() -> u64 {
    1000
}
fn default_warmup_steps() -> u64 {
    500
}
fn default_base_lr() -> f64 {
    1e-5
}
fn default_tau() -> f64 {
    0.07
}
fn default_epochs() -> u64 {
    10
}
fn default_alpha() -> f64 {
    0.3
}
fn default_tasks() -> Vec<EvalTask> {
    vec![
        EvalTask::ZeroShot,
        EvalTask::Retrieval,
        EvalTask::PhenotypeRetrieval,
        EvalTask::Matching,
        EvalTask::Probe,
    ]
}
fn default_k_values() -> Vec<usize> {
    vec![10, 50]
}
fn default_probe_ratios() -> Vec<f64> {
    vec![0.01, 0.1, 1.0]
}

/// Command-line switches that override the loaded file.
#[derive(Debug, Clone, Copy, Default)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub mock_models: bool,
    pub no_split: bool,
    pub strict_keywords: bool,
}

impl RunConfig {
    /// Parse, resolve relative paths against `base_dir`, validate.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent().unwrap_or_else(|| Path::new(".")))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(format!("serialize config: {e}")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        fix(&mut self.ontology.obo_path);
        fix(&mut self.corpus.articles_path);
        fix(&mut self.corpus.corpus_root);
        if let Some(p) = self.corpus.keep_list_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.eval.templates_path.as_mut() {
            fix(p);
        }
    }

    pub fn apply(&mut self, ov: &CliOverrides) {
        if let Some(seed) = ov.seed {
            self.seed = seed;
        }
        if ov.mock_models {
            self.corpus.backend = ModelBackend::Mock;
        }
        if ov.no_split {
            self.corpus.split_enabled = false;
        }
        if ov.strict_keywords {
            self.corpus.strict_keywords = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.corpus.confidence_threshold) {
            return Err(Error::Parameter(format!(
                "confidence_threshold {} outside [0, 1]",
                self.corpus.confidence_threshold
            )));
        }
        if self.corpus.filter_k1 == 0 || self.corpus.filter_k2 == 0 {
            return Err(Error::Parameter("filter cluster counts must be positive".into()));
        }
        if self.corpus.filter_embed_dim == 0 {
            return Err(Error::Parameter("filter_embed_dim must be positive".into()));
        }
        let explicit = !self.split.holdout_pmcids.is_empty();
        match (explicit, self.split.holdout_fraction) {
            (true, Some(_)) => {
                return Err(Error::Parameter(
                    "give either holdout_pmcids or holdout_fraction, not both".into(),
                ));
            }
            (false, None) => {
                return Err(Error::Parameter(
                    "the split needs holdout_pmcids or holdout_fraction".into(),
                ));
            }
            (false, Some(f)) if !(0.0..=1.0).contains(&f) => {
                return Err(Error::Parameter(format!("holdout_fraction {f} outside [0, 1]")));
            }
            _ => {}
        }
        if self.knowledge.batch_size == 0 || self.knowledge.total_steps == 0 {
            return Err(Error::Parameter(
                "knowledge batch_size and total_steps must be positive".into(),
            ));
        }
        if self.knowledge.warmup_steps > self.knowledge.total_steps {
            return Err(Error::Parameter("knowledge warmup exceeds total steps".into()));
        }
        if self.knowledge.tau <= 0.0 || self.knowledge.base_lr <= 0.0 {
            return Err(Error::Parameter("knowledge tau and base_lr must be positive".into()));
        }
        if self.vlp.batch_size == 0 || self.vlp.epochs == 0 {
            return Err(Error::Parameter("vlp batch_size and epochs must be positive".into()));
        }
        if self.vlp.tau_multimodal <= 0.0 || self.vlp.tau_distill <= 0.0 {
            return Err(Error::Parameter("vlp temperatures must be positive".into()));
        }
        if self.vlp.alpha < 0.0 || !self.vlp.alpha.is_finite() {
            return Err(Error::Parameter("vlp alpha must be non-negative".into()));
        }
        if self.vlp.base_lr <= 0.0 {
            return Err(Error::Parameter("vlp base_lr must be positive".into()));
        }
        self.vlp.model.validate()?;
        if self.vlp.model.vision.in_channels != 1 {
            return Err(Error::Parameter(
                "the image loader is grayscale; vision.in_channels must be 1".into(),
            ));
        }
        if self.eval.tasks.is_empty() {
            return Err(Error::Parameter("eval.tasks is empty".into()));
        }
        if self.eval.k_values.is_empty() || self.eval.k_values.contains(&0) {
            return Err(Error::Parameter("eval.k_values must be positive and non-empty".into()));
        }
        if self.eval.tasks.contains(&EvalTask::Probe)
            && (self.eval.probe_ratios.is_empty()
                || self.eval.probe_ratios.iter().any(|r| !(0.0 < *r && *r <= 1.0)))
        {
            return Err(Error::Parameter("probe_ratios must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn curate_config(&self) -> CurateConfig {
        CurateConfig {
            seed: self.seed,
            confidence_threshold: self.corpus.confidence_threshold,
            split_enabled: self.corpus.split_enabled,
            strict_keywords: self.corpus.strict_keywords,
            filter_k1: self.corpus.filter_k1,
            filter_k2: self.corpus.filter_k2,
            filter_embed_dim: self.corpus.filter_embed_dim,
        }
    }
}

/// Configuration sized for the built-in demo workspace: the bundled toy
/// ontology, the rendered demo corpus, and encoders small enough to train
/// in seconds. Paths are relative to the workspace directory.
pub fn demo_config() -> RunConfig {
    RunConfig {
        seed: 7,
        ontology: OntologySection { obo_path: PathBuf::from("demo.obo") },
        corpus: CorpusSection {
            articles_path: PathBuf::from("corpus/corpus.jsonl"),
            corpus_root: PathBuf::from("corpus"),
            keep_list_path: Some(PathBuf::from("corpus/keep.list")),
            split_enabled: true,
            strict_keywords: false,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            filter_k1: 2,
            filter_k2: 2,
            filter_embed_dim: 32,
            backend: ModelBackend::Mock,
        },
        split: SplitSection {
            holdout_pmcids: vec!["PMC_C".to_string()],
            holdout_fraction: None,
        },
        knowledge: KnowledgeSection {
            batch_size: 7,
            total_steps: 80,
            warmup_steps: 8,
            base_lr: 3e-3,
            tau: 0.07,
            attributes: AttributeOptions::default(),
            encoder: TextEncoderConfig {
                vocab_size: 192,
                max_tokens: 16,
                model_dim: 16,
                blocks: 2,
                output_dim: 16,
            },
            optimizer: AdamWConfig::default(),
        },
        vlp: VlpSection {
            batch_size: 4,
            epochs: 24,
            warmup_steps: 4,
            base_lr: 2e-3,
            tau_multimodal: 0.07,
            tau_distill: 0.07,
            alpha: 0.3,
            model: VlModelConfig {
                vision: VisionEncoderConfig {
                    in_channels: 1,
                    image_size: 32,
                    channels: [4, 4, 8, 8],
                    output_dim: 16,
                },
                text: TextEncoderConfig {
                    vocab_size: 192,
                    max_tokens: 32,
                    model_dim: 16,
                    blocks: 2,
                    output_dim: 16,
                },
            },
            optimizer: AdamWConfig::default(),
        },
        eval: EvalSection {
            tasks: default_tasks(),
            k_values: vec![1, 5],
            probe_ratios: vec![0.5, 1.0],
            templates_path: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> &'static str {
        r#"
[ontology]
obo_path = "/data/hp.obo"

[corpus]
articles_path = "/data/corpus.jsonl"
corpus_root = "/data"

[split]
holdout_fraction = 0.2
"#
    }

    #[test]
    fn minimal_file_takes_reference_defaults() {
        let cfg = RunConfig::from_toml_str(minimal_toml(), Path::new("/")).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.knowledge.batch_size, 256);
        assert_eq!(cfg.knowledge.total_steps, 1000);
        assert_eq!(cfg.knowledge.warmup_steps, 500);
        assert_eq!(cfg.knowledge.base_lr, 1e-5);
        assert_eq!(cfg.knowledge.tau, 0.07);
        assert_eq!(cfg.vlp.epochs, 10);
        assert_eq!(cfg.vlp.alpha, 0.3);
        assert_eq!(cfg.vlp.tau_multimodal, 0.07);
        assert_eq!(cfg.vlp.tau_distill, 0.07);
        assert_eq!(cfg.corpus.confidence_threshold, 0.5);
        assert_eq!((cfg.corpus.filter_k1, cfg.corpus.filter_k2), (20, 20));
        assert_eq!(cfg.eval.k_values, vec![10, 50]);
        assert_eq!(cfg.eval.probe_ratios, vec![0.01, 0.1, 1.0]);
        assert_eq!(cfg.eval.tasks.len(), 5);
        assert_eq!(cfg.corpus.backend, ModelBackend::Mock);
        assert!(cfg.corpus.split_enabled);
    }

    #[test]
    fn toml_round_trip_is_lossless() {
        let mut cfg = demo_config();
        // Absolute paths survive resolution untouched.
        cfg.resolve_paths(Path::new("/work"));
        let text = cfg.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&text, Path::new("/elsewhere")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn relative_paths_resolve_against_the_config_directory() {
        let cfg = RunConfig::from_toml_str(
            r#"
[ontology]
obo_path = "onto/hp.obo"

[corpus]
articles_path = "corpus.jsonl"
corpus_root = "."
keep_list_path = "keep.list"

[split]
holdout_pmcids = ["PMC1"]
"#,
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.ontology.obo_path, Path::new("/base/onto/hp.obo"));
        assert_eq!(cfg.corpus.articles_path, Path::new("/base/corpus.jsonl"));
        assert_eq!(cfg.corpus.keep_list_path.as_deref(), Some(Path::new("/base/keep.list")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = minimal_toml().replace("[split]", "typo_key = 3\n[split]");
        let err = RunConfig::from_toml_str(&text, Path::new("/")).unwrap_err();
        assert!(err.to_string().contains("typo_key"), "{err}");

        let nested = minimal_toml().to_string() + "\n[vlp]\nlearning_rate = 0.1\n";
        assert!(RunConfig::from_toml_str(&nested, Path::new("/")).is_err());
    }

    #[test]
    fn validation_rejects_contradictions() {
        let both = minimal_toml().replace(
            "holdout_fraction = 0.2",
            "holdout_fraction = 0.2\nholdout_pmcids = [\"PMC1\"]",
        );
        assert!(RunConfig::from_toml_str(&both, Path::new("/")).is_err());

        let neither = minimal_toml().replace("holdout_fraction = 0.2", "");
        assert!(RunConfig::from_toml_str(&neither, Path::new("/")).is_err());

        let bad_tau = minimal_toml().to_string() + "\n[knowledge]\ntau = 0.0\n";
        assert!(RunConfig::from_toml_str(&bad_tau, Path::new("/")).is_err());

        let bad_ratio = minimal_toml().to_string() + "\n[eval]\nprobe_ratios = [0.0]\n";
        assert!(RunConfig::from_toml_str(&bad_ratio, Path::new("/")).is_err());
    }

    #[test]
    fn overrides_apply_in_place() {
        let mut cfg = RunConfig::from_toml_str(minimal_toml(), Path::new("/")).unwrap();
        cfg.corpus.backend = ModelBackend::Http;
        cfg.apply(&CliOverrides {
            seed: Some(42),
            mock_models: true,
            no_split: true,
            strict_keywords: true,
        });
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.corpus.backend, ModelBackend::Mock);
        assert!(!cfg.corpus.split_enabled);
        assert!(cfg.corpus.strict_keywords);

        let before = cfg.clone();
        cfg.apply(&CliOverrides::default());
        assert_eq!(cfg, before, "empty overrides change nothing");
    }

    #[test]
    fn demo_config_is_valid_and_serializable() {
        let cfg = demo_config();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert!(text.contains("holdout_pmcids"));
        // The curate view matches the corpus section.
        let cc = cfg.curate_config();
        assert_eq!(cc.seed, cfg.seed);
        assert_eq!((cc.filter_k1, cc.filter_k2), (2, 2));
    }
}
