//! The six-stage pipeline over one run directory.
//!
//! Stage order: build-kg, curate, split-bench, train-knowledge, train-vlp,
//! evaluate. Each stage owns one subdirectory of the run directory, wipes
//! it before executing, and records input and output hashes in
//! `manifest.json`. A stage is skipped when its recorded inputs match and
//! its recorded outputs are untouched on disk; the run directory is owned
//! by the pipeline, so a hand-edited artifact is simply rebuilt.
//!
//! A stage body failure surfaces as a stage error and leaves the manifest
//! describing every stage that completed before it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crate::corpus::{
    benchmark_split, curate_corpus, read_articles_jsonl, read_keep_list, read_pairs_jsonl,
    sample_holdout, write_pairs_jsonl, GutterDetector, HttpModelClient, HttpModelConfig,
    ImageCaptionPair, MockAligner, MockRefiner, ModelClients,
};
use crate::error::{Error, Result};
use crate::eval::{
    class_embeddings, linear_probe, matching_metrics, paired_retrieval,
    phenotype_retrieval_from_embeddings, predict_topk_sets, zero_shot_from_embeddings, EvalReport,
    LabeledFeatureSet, ProbeConfig, PromptTemplateSet,
};
use crate::imaging::{gray_to_matrix, load_gray};
use crate::knowledge::{train_knowledge_encoder, KnowledgeEncoder};
use crate::ontology::{parse_obo, PhenotypeGraph};
use crate::vlp::{train_vlp, TeacherHandle, VlModel};

use super::config::{EvalSection, EvalTask, ModelBackend, RunConfig};
use super::manifest::{
    files_under, hash_outputs, outputs_unchanged, sha256_file, sha256_hex, Manifest, StageRecord,
    StageStatus,
};

pub const STAGE_NAMES: [&str; 6] =
    ["build-kg", "curate", "split-bench", "train-knowledge", "train-vlp", "evaluate"];

#[derive(Debug)]
pub struct PipelineOutcome {
    pub manifest: Manifest,
    /// Stage name and what the orchestrator did with it, in run order.
    pub statuses: Vec<(String, StageStatus)>,
}

/// Run every stage.
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<PipelineOutcome> {
    run_pipeline_until(cfg, out_dir, STAGE_NAMES[STAGE_NAMES.len() - 1])
}

/// Run stages from the start through `last` inclusive.
pub fn run_pipeline_until(cfg: &RunConfig, out_dir: &Path, last: &str) -> Result<PipelineOutcome> {
    let upto = STAGE_NAMES
        .iter()
        .position(|s| *s == last)
        .ok_or_else(|| Error::Parameter(format!("unknown stage '{last}'")))?;
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let prev = Manifest::read_from(&out_dir.join("manifest.json"))?;
    let mut ctx = Ctx {
        cfg,
        out_dir,
        prev,
        manifest: Manifest::default(),
        statuses: Vec::new(),
    };

    for name in &STAGE_NAMES[..=upto] {
        let inputs = match *name {
            "build-kg" => BTreeMap::from([(
                "ontology.obo".to_string(),
                sha256_file(&cfg.ontology.obo_path)?,
            )]),
            "curate" => {
                let mut inputs = BTreeMap::new();
                inputs.insert("stage:build-kg".to_string(), ctx.digest("build-kg")?);
                inputs.insert(
                    "corpus.articles".to_string(),
                    sha256_file(&cfg.corpus.articles_path)?,
                );
                if let Some(p) = &cfg.corpus.keep_list_path {
                    inputs.insert("corpus.keep_list".to_string(), sha256_file(p)?);
                }
                inputs.insert(
                    "config".to_string(),
                    fingerprint(&serde_json::json!({
                        "seed": cfg.seed,
                        "backend": cfg.corpus.backend,
                        "split_enabled": cfg.corpus.split_enabled,
                        "strict_keywords": cfg.corpus.strict_keywords,
                        "confidence_threshold": cfg.corpus.confidence_threshold,
                        "filter_k1": cfg.corpus.filter_k1,
                        "filter_k2": cfg.corpus.filter_k2,
                        "filter_embed_dim": cfg.corpus.filter_embed_dim,
                        "keep_list": cfg.corpus.keep_list_path.is_some(),
                    })),
                );
                let articles = read_articles_jsonl(BufReader::new(open(&cfg.corpus.articles_path)?))?;
                for a in &articles {
                    for f in &a.figures {
                        inputs.insert(
                            format!("image:{}", f.image_ref),
                            sha256_file(&cfg.corpus.corpus_root.join(&f.image_ref))?,
                        );
                    }
                }
                inputs
            }
            "split-bench" => BTreeMap::from([
                ("stage:curate".to_string(), ctx.digest("curate")?),
                (
                    "config".to_string(),
                    fingerprint(&serde_json::json!({
                        "seed": cfg.seed,
                        "holdout_pmcids": cfg.split.holdout_pmcids,
                        "holdout_fraction": cfg.split.holdout_fraction,
                    })),
                ),
            ]),
            "train-knowledge" => BTreeMap::from([
                ("stage:build-kg".to_string(), ctx.digest("build-kg")?),
                (
                    "config".to_string(),
                    fingerprint(&serde_json::json!({
                        "seed": cfg.seed,
                        "knowledge": cfg.knowledge,
                    })),
                ),
            ]),
            "train-vlp" => {
                let mut inputs = BTreeMap::from([
                    ("stage:curate".to_string(), ctx.digest("curate")?),
                    ("stage:split-bench".to_string(), ctx.digest("split-bench")?),
                    (
                        "config".to_string(),
                        fingerprint(&serde_json::json!({
                            "seed": cfg.seed,
                            "vlp": cfg.vlp,
                        })),
                    ),
                ]);
                if cfg.vlp.alpha > 0.0 {
                    inputs.insert(
                        "stage:train-knowledge".to_string(),
                        ctx.digest("train-knowledge")?,
                    );
                }
                inputs
            }
            "evaluate" => {
                let mut inputs = BTreeMap::from([
                    ("stage:build-kg".to_string(), ctx.digest("build-kg")?),
                    ("stage:curate".to_string(), ctx.digest("curate")?),
                    ("stage:split-bench".to_string(), ctx.digest("split-bench")?),
                    ("stage:train-vlp".to_string(), ctx.digest("train-vlp")?),
                    (
                        "config".to_string(),
                        fingerprint(&serde_json::json!({
                            "seed": cfg.seed,
                            "tasks": cfg.eval.tasks,
                            "k_values": cfg.eval.k_values,
                            "probe_ratios": cfg.eval.probe_ratios,
                            "templates": cfg.eval.templates_path.is_some(),
                        })),
                    ),
                ]);
                if let Some(p) = &cfg.eval.templates_path {
                    inputs.insert("eval.templates".to_string(), sha256_file(p)?);
                }
                inputs
            }
            other => return Err(Error::Invariant(format!("unhandled stage {other}"))),
        };
        let body = match *name {
            "build-kg" => body_build_kg,
            "curate" => body_curate,
            "split-bench" => body_split_bench,
            "train-knowledge" => body_train_knowledge,
            "train-vlp" => body_train_vlp,
            "evaluate" => body_evaluate,
            other => return Err(Error::Invariant(format!("unhandled stage {other}"))),
        };
        ctx.run(name, inputs, body)?;
    }
    Ok(PipelineOutcome { manifest: ctx.manifest, statuses: ctx.statuses })
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out_dir: &'a Path,
    prev: Option<Manifest>,
    manifest: Manifest,
    statuses: Vec<(String, StageStatus)>,
}

impl Ctx<'_> {
    fn digest(&self, name: &str) -> Result<String> {
        self.manifest
            .stage(name)
            .map(StageRecord::digest)
            .ok_or_else(|| Error::Invariant(format!("stage {name} has not run yet")))
    }

    fn run(
        &mut self,
        name: &str,
        inputs: BTreeMap<String, String>,
        body: fn(&RunConfig, &Path) -> Result<Vec<String>>,
    ) -> Result<()> {
        let manifest_path = self.out_dir.join("manifest.json");
        if let Some(prev_rec) = self.prev.as_ref().and_then(|m| m.stage(name)) {
            if prev_rec.inputs == inputs && outputs_unchanged(self.out_dir, &prev_rec.outputs) {
                self.manifest.stages.push(prev_rec.clone());
                self.statuses.push((name.to_string(), StageStatus::Skipped));
                self.manifest.write_to(&manifest_path)?;
                return Ok(());
            }
        }
        let rel_outputs = body(self.cfg, self.out_dir).map_err(|e| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        })?;
        let outputs = hash_outputs(self.out_dir, &rel_outputs)?;
        self.manifest.stages.push(StageRecord { name: name.to_string(), inputs, outputs });
        self.statuses.push((name.to_string(), StageStatus::Executed));
        self.manifest.write_to(&manifest_path)?;
        Ok(())
    }
}

fn fingerprint<T: Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("config value serializes").as_bytes())
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::Lookup(format!("open {}: {e}", path.display())))
}

fn wipe_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_file<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
{
    let mut w = BufWriter::new(fs::File::create(path)?);
    fill(&mut w)?;
    w.flush()?;
    Ok(())
}

fn read_graph(out_dir: &Path) -> Result<PhenotypeGraph> {
    PhenotypeGraph::read_jsonl(BufReader::new(open(&out_dir.join("kg/graph.jsonl"))?))
}

fn read_pairs_file(path: &Path) -> Result<Vec<ImageCaptionPair>> {
    read_pairs_jsonl(BufReader::new(open(path)?))
}

/// Decode each pair's image to the square grayscale matrix the vision
/// encoder consumes. `images_root` is the curated corpus directory.
pub fn load_pair_images(
    pairs: &[ImageCaptionPair],
    images_root: &Path,
    image_size: usize,
) -> Result<Vec<Array2<f64>>> {
    pairs
        .iter()
        .map(|p| Ok(gray_to_matrix(&load_gray(&images_root.join(&p.image_ref))?, image_size)))
        .collect()
}

fn body_build_kg(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<String>> {
    let dir = out_dir.join("kg");
    wipe_dir(&dir)?;
    let (graph, report) = parse_obo(BufReader::new(open(&cfg.ontology.obo_path)?))?;
    write_file(&dir.join("graph.jsonl"), |w| graph.write_jsonl(w))?;
    fs::write(dir.join("parse_report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(vec!["kg/graph.jsonl".into(), "kg/parse_report.json".into()])
}

fn body_curate(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<String>> {
    let dir = out_dir.join("corpus");
    wipe_dir(&dir)?;
    let graph = read_graph(out_dir)?;
    let articles = read_articles_jsonl(BufReader::new(open(&cfg.corpus.articles_path)?))?;
    let keep = match &cfg.corpus.keep_list_path {
        Some(p) => Some(read_keep_list(
            BufReader::new(open(p)?),
            cfg.corpus.filter_k1,
            cfg.corpus.filter_k2,
        )?),
        None => None,
    };
    let detector = GutterDetector::default();
    let http;
    let clients = match cfg.corpus.backend {
        ModelBackend::Mock => ModelClients {
            detector: &detector,
            refiner: &MockRefiner,
            aligner: &MockAligner,
        },
        ModelBackend::Http => {
            http = HttpModelClient::new(HttpModelConfig::from_env()?);
            ModelClients { detector: &detector, refiner: &http, aligner: &http }
        }
    };
    let result = curate_corpus(
        &articles,
        &graph,
        &clients,
        keep.as_ref(),
        &cfg.curate_config(),
        &cfg.corpus.corpus_root,
        &dir,
    )?;
    write_file(&dir.join("pairs.jsonl"), |w| write_pairs_jsonl(&result.pairs, w))?;
    write_file(&dir.join("audit.jsonl"), |w| result.audit.write_jsonl(w))?;
    let mut outputs = vec!["corpus/pairs.jsonl".to_string(), "corpus/audit.jsonl".to_string()];
    if let Some(model) = &result.filter_model {
        write_file(&dir.join("filter_model.json"), |w| model.save_json(w))?;
        outputs.push("corpus/filter_model.json".into());
    }
    if dir.join("images").exists() {
        outputs.extend(files_under(out_dir, &dir.join("images"))?);
    }
    outputs.sort();
    Ok(outputs)
}

fn body_split_bench(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<String>> {
    let dir = out_dir.join("splits");
    wipe_dir(&dir)?;
    let pairs = read_pairs_file(&out_dir.join("corpus/pairs.jsonl"))?;
    let holdout: BTreeSet<String> = if cfg.split.holdout_pmcids.is_empty() {
        let fraction = cfg
            .split
            .holdout_fraction
            .ok_or_else(|| Error::Parameter("no holdout specification".into()))?;
        sample_holdout(&pairs, fraction, cfg.seed)?
    } else {
        cfg.split.holdout_pmcids.iter().cloned().collect()
    };
    let (train, bench) = benchmark_split(&pairs, &holdout)?;
    if train.is_empty() || bench.is_empty() {
        return Err(Error::Parameter(format!(
            "split produced {} training and {} benchmark pairs; both sides must be non-empty",
            train.len(),
            bench.len()
        )));
    }
    write_file(&dir.join("train.jsonl"), |w| write_pairs_jsonl(&train, w))?;
    write_file(&dir.join("bench.jsonl"), |w| write_pairs_jsonl(&bench, w))?;
    let held: Vec<&String> = holdout.iter().collect();
    fs::write(dir.join("holdout.json"), serde_json::to_string_pretty(&held)? + "\n")?;
    Ok(vec![
        "splits/bench.jsonl".into(),
        "splits/holdout.json".into(),
        "splits/train.jsonl".into(),
    ])
}

fn body_train_knowledge(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<String>> {
    let dir = out_dir.join("kenc");
    wipe_dir(&dir)?;
    let graph = read_graph(out_dir)?;
    let kcfg = cfg.knowledge.train_config(cfg.seed);
    train_knowledge_encoder(&graph, &kcfg, Some(&dir))?;
    Ok(vec![
        "kenc/loss_history.csv".into(),
        "kenc/meta.json".into(),
        "kenc/weights.json".into(),
    ])
}

fn body_train_vlp(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<String>> {
    let dir = out_dir.join("vlp");
    wipe_dir(&dir)?;
    let train_pairs = read_pairs_file(&out_dir.join("splits/train.jsonl"))?;
    let vcfg = cfg.vlp.train_config(cfg.seed);
    let images =
        load_pair_images(&train_pairs, &out_dir.join("corpus"), vcfg.model.vision.image_size)?;
    let pairs: Vec<crate::vlp::VlpPair> = train_pairs
        .iter()
        .zip(images)
        .map(|(p, image)| crate::vlp::VlpPair { image, caption: p.caption.clone() })
        .collect();
    let teacher = if vcfg.alpha > 0.0 {
        Some(KnowledgeEncoder::load(&out_dir.join("kenc"))?)
    } else {
        None
    };
    let teacher_ref = teacher.as_ref().map(|t| t as &dyn TeacherHandle);
    train_vlp(&pairs, teacher_ref, &vcfg, Some(&dir))?;
    Ok(vec![
        "vlp/loss_history.csv".into(),
        "vlp/meta.json".into(),
        "vlp/weights.json".into(),
    ])
}

fn body_evaluate(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<String>> {
    let dir = out_dir.join("eval");
    wipe_dir(&dir)?;
    let graph = read_graph(out_dir)?;
    let model = VlModel::load(&out_dir.join("vlp"))?;
    let train_pairs = read_pairs_file(&out_dir.join("splits/train.jsonl"))?;
    let bench_pairs = read_pairs_file(&out_dir.join("splits/bench.jsonl"))?;
    let data = EvalData {
        model: &model,
        graph: &graph,
        train_pairs: &train_pairs,
        bench_pairs: &bench_pairs,
        images_root: &out_dir.join("corpus"),
    };
    let report = evaluate_pairs(&data, &cfg.eval, cfg.seed)?;
    write_file(&dir.join("report.json"), |w| report.write_json(w))?;
    write_file(&dir.join("report.csv"), |w| report.write_csv(w))?;
    Ok(vec!["eval/report.csv".into(), "eval/report.json".into()])
}

/// Everything the evaluation suite needs: a trained model, the graph for
/// class names, the two splits, and where their images live.
pub struct EvalData<'a> {
    pub model: &'a VlModel,
    pub graph: &'a PhenotypeGraph,
    pub train_pairs: &'a [ImageCaptionPair],
    pub bench_pairs: &'a [ImageCaptionPair],
    pub images_root: &'a Path,
}

/// Drop requested cutoffs above the gallery size; when none survive, fall
/// back to the gallery size itself.
fn usable_ks(requested: &[usize], gallery: usize, task: &str, warnings: &mut Vec<String>) -> Vec<usize> {
    let kept: Vec<usize> = requested.iter().copied().filter(|&k| k >= 1 && k <= gallery).collect();
    if kept.len() < requested.len() {
        warnings.push(format!("{task}: dropped k values above the gallery size {gallery}"));
    }
    if kept.is_empty() {
        vec![gallery]
    } else {
        kept
    }
}

/// Run the configured evaluation tasks on a benchmark split. The label
/// space is the sorted set of phenotype ids present in the benchmark; the
/// probe additionally labels every pair by its lowest phenotype id.
pub fn evaluate_pairs(data: &EvalData, section: &EvalSection, seed: u64) -> Result<EvalReport> {
    if data.bench_pairs.is_empty() {
        return Err(Error::Parameter("no benchmark pairs".into()));
    }
    let mut warnings = Vec::new();
    let image_size = data.model.vision.config().image_size;
    let bench_images = load_pair_images(data.bench_pairs, data.images_root, image_size)?;
    let v = data.model.embed_images(&bench_images);

    let class_ids: Vec<String> = data
        .bench_pairs
        .iter()
        .flat_map(|p| p.phenotype_ids.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let class_names: Vec<String> = class_ids
        .iter()
        .map(|id| Ok(data.graph.term(id)?.name.clone()))
        .collect::<Result<_>>()?;
    let templates = match &section.templates_path {
        Some(p) => PromptTemplateSet::from_reader(BufReader::new(open(p)?))?,
        None => PromptTemplateSet::default(),
    };
    let class_embeds = class_embeddings(data.model, &class_names, &templates)?;
    let truth: Vec<BTreeSet<usize>> = data
        .bench_pairs
        .iter()
        .map(|p| {
            p.phenotype_ids
                .iter()
                .map(|id| class_ids.binary_search(id).expect("id drawn from this set"))
                .collect()
        })
        .collect();

    let mut seen = BTreeSet::new();
    let mut report = EvalReport::default();
    for task in &section.tasks {
        if !seen.insert(*task) {
            continue;
        }
        match task {
            EvalTask::ZeroShot => {
                report.zero_shot = Some(zero_shot_from_embeddings(&v, &class_embeds, &truth)?);
            }
            EvalTask::Retrieval => {
                let captions: Vec<String> =
                    data.bench_pairs.iter().map(|p| p.caption.clone()).collect();
                let t = data.model.embed_texts(&captions);
                let ks =
                    usable_ks(&section.k_values, data.bench_pairs.len(), "retrieval", &mut warnings);
                let (i2t, t2i) = paired_retrieval(&v, &t, &ks)?;
                report.retrieval.push(i2t);
                report.retrieval.push(t2i);
            }
            EvalTask::PhenotypeRetrieval => {
                let gallery = class_ids.len().min(data.bench_pairs.len());
                let ks =
                    usable_ks(&section.k_values, gallery, "phenotype_retrieval", &mut warnings);
                let (i2p, p2i) =
                    phenotype_retrieval_from_embeddings(&v, &class_embeds, &truth, &ks)?;
                report.retrieval.push(i2p);
                report.retrieval.push(p2i);
            }
            EvalTask::Matching => {
                let s = v.dot(&class_embeds.t());
                let k_per_query: Vec<usize> = truth.iter().map(BTreeSet::len).collect();
                let pred = predict_topk_sets(&s, &k_per_query)?;
                report.matching = Some(matching_metrics(&pred, &truth, &mut warnings)?);
            }
            EvalTask::Probe => {
                if data.train_pairs.is_empty() {
                    return Err(Error::Parameter("probe needs training pairs".into()));
                }
                let label_of = |p: &ImageCaptionPair| {
                    p.phenotype_ids.iter().min().expect("pairs carry phenotype ids").clone()
                };
                let label_space: Vec<String> = data
                    .train_pairs
                    .iter()
                    .chain(data.bench_pairs.iter())
                    .map(|p| label_of(p))
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let to_set = |pairs: &[ImageCaptionPair], features: Array2<f64>| {
                    LabeledFeatureSet {
                        features,
                        labels: pairs
                            .iter()
                            .map(|p| {
                                label_space
                                    .binary_search(&label_of(p))
                                    .expect("label drawn from this set")
                            })
                            .collect(),
                        class_names: label_space.clone(),
                    }
                };
                let train_images =
                    load_pair_images(data.train_pairs, data.images_root, image_size)?;
                let train_set =
                    to_set(data.train_pairs, data.model.embed_images(&train_images));
                let bench_set = to_set(data.bench_pairs, v.clone());
                for &ratio in &section.probe_ratios {
                    report.probe.push(linear_probe(
                        &train_set,
                        &bench_set,
                        ratio,
                        seed,
                        &ProbeConfig::default(),
                        &mut warnings,
                    )?);
                }
            }
        }
    }
    report.warnings = warnings;
    Ok(report)
}

/// Write a ready-to-run demo workspace: the bundled toy ontology, the
/// rendered demo corpus, and a matching `config.toml`. Returns the config
/// path.
pub fn write_demo_workspace(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("demo.obo"), include_str!("../../tests/fixtures/toy.obo"))?;
    crate::corpus::fixture::write_demo_corpus(&dir.join("corpus"))?;
    let path = dir.join("config.toml");
    fs::write(&path, super::config::demo_config().to_toml_string()?)?;
    Ok(path)
}
