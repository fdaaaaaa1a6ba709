//! Ablation grid: retrain the dual encoder with individual ingredients
//! removed and evaluate every variant on the same benchmark split.
//!
//! Four axes can be varied. `init` contrasts training from scratch with
//! warm-starting from a short contrastive-only base run. `kd` toggles the
//! knowledge distillation term. `curation` contrasts the full curation
//! pipeline with a raw corpus that skips subfigure splitting and cluster
//! filtering. `kg` removes one attribute family (definitions, synonyms or
//! hierarchy sentences) from the teacher's training text.
//!
//! Expensive intermediates are shared across the grid: one curated corpus
//! per curation arm, one teacher per graph variant, one base checkpoint
//! per curation arm for the warm starts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::corpus::{
    benchmark_split, curate_corpus, read_articles_jsonl, read_keep_list, sample_holdout,
    write_pairs_jsonl, GutterDetector, ImageCaptionPair, MockAligner, MockRefiner, ModelClients,
};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::knowledge::{train_knowledge_encoder, KnowledgeEncoder};
use crate::ontology::{parse_obo, AttributeOptions, PhenotypeGraph};
use crate::vlp::{train_vlp, train_vlp_from, TeacherHandle, VlModel, VlpPair};

use super::config::{ModelBackend, RunConfig};
use super::run::{evaluate_pairs, load_pair_images, EvalData};

use std::io::BufReader;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationAxes {
    pub init: bool,
    pub kd: bool,
    pub curation: bool,
    pub kg: bool,
}

impl AblationAxes {
    pub fn all() -> Self {
        AblationAxes { init: true, kd: true, curation: true, kg: true }
    }

    /// Parse a comma-separated axis list such as `"kd,curation"`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut axes = AblationAxes::default();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "init" => axes.init = true,
                "kd" => axes.kd = true,
                "curation" => axes.curation = true,
                "kg" => axes.kg = true,
                "all" => axes = AblationAxes::all(),
                other => {
                    return Err(Error::Parameter(format!(
                        "unknown ablation axis '{other}' (expected init, kd, curation, kg or all)"
                    )));
                }
            }
        }
        if axes == AblationAxes::default() {
            return Err(Error::Parameter("no ablation axes selected".into()));
        }
        Ok(axes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Scratch,
    Pretrained,
}

impl InitMode {
    pub fn label(self) -> &'static str {
        match self {
            InitMode::Scratch => "scratch",
            InitMode::Pretrained => "pretrained",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum KgVariant {
    Full,
    NoDefinitions,
    NoSynonyms,
    NoRelations,
}

impl KgVariant {
    pub fn label(self) -> &'static str {
        match self {
            KgVariant::Full => "full",
            KgVariant::NoDefinitions => "no-def",
            KgVariant::NoSynonyms => "no-syn",
            KgVariant::NoRelations => "no-rel",
        }
    }

    pub fn options(self) -> AttributeOptions {
        let mut opts = AttributeOptions::default();
        match self {
            KgVariant::Full => {}
            KgVariant::NoDefinitions => opts.definitions = false,
            KgVariant::NoSynonyms => opts.synonyms = false,
            KgVariant::NoRelations => opts.relations = false,
        }
        opts
    }
}

/// One grid cell: the axis settings and the evaluation it produced.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub name: String,
    pub init: InitMode,
    pub kd: bool,
    pub curation: bool,
    pub kg: KgVariant,
    pub report: EvalReport,
}

struct CorpusArm {
    images_root: PathBuf,
    train_pairs: Vec<ImageCaptionPair>,
    bench_pairs: Vec<ImageCaptionPair>,
    vlp_pairs: Vec<VlpPair>,
}

/// Run the grid under `out_dir`. Per-variant checkpoints and reports land
/// in `ablations/<name>/`, shared intermediates in `shared/`, and the
/// long-form summary table in `ablations/summary.csv`.
pub fn run_ablations(
    cfg: &RunConfig,
    out_dir: &Path,
    axes: &AblationAxes,
) -> Result<Vec<AblationRun>> {
    cfg.validate()?;
    if cfg.corpus.backend != ModelBackend::Mock {
        return Err(Error::Parameter(
            "ablations retrain many variants; use the mock backend".into(),
        ));
    }
    if axes.kd && cfg.vlp.alpha <= 0.0 {
        return Err(Error::Parameter(
            "cannot ablate distillation when vlp.alpha is zero".into(),
        ));
    }

    let init_values: &[InitMode] = if axes.init {
        &[InitMode::Scratch, InitMode::Pretrained]
    } else {
        &[InitMode::Scratch]
    };
    let kd_baseline = cfg.vlp.alpha > 0.0;
    let kd_values: &[bool] = if axes.kd { &[true, false] } else { &[kd_baseline] };
    let curation_values: &[bool] = if axes.curation { &[true, false] } else { &[true] };
    let kg_values: &[KgVariant] = if axes.kg {
        &[KgVariant::Full, KgVariant::NoDefinitions, KgVariant::NoSynonyms, KgVariant::NoRelations]
    } else {
        &[KgVariant::Full]
    };

    let shared = out_dir.join("shared");
    fs::create_dir_all(&shared)?;
    let (graph, _) = parse_obo(BufReader::new(fs::File::open(&cfg.ontology.obo_path).map_err(
        |e| Error::Lookup(format!("open {}: {e}", cfg.ontology.obo_path.display())),
    )?))?;

    let image_size = cfg.vlp.model.vision.image_size;
    let mut corpus_arms: BTreeMap<bool, CorpusArm> = BTreeMap::new();
    for &curated in curation_values {
        corpus_arms.insert(curated, prepare_corpus(cfg, &graph, &shared, curated, image_size)?);
    }

    // Teachers are only trained for graph variants some kd-on cell uses.
    let mut teachers: BTreeMap<KgVariant, KnowledgeEncoder> = BTreeMap::new();
    if kd_values.contains(&true) {
        for &kg in kg_values {
            let dir = shared.join(format!("kenc-{}", kg.label()));
            fs::create_dir_all(&dir)?;
            let mut kcfg = cfg.knowledge.train_config(cfg.seed);
            kcfg.attributes = kg.options();
            let (enc, _) = train_knowledge_encoder(&graph, &kcfg, Some(&dir))?;
            teachers.insert(kg, enc);
        }
    }

    // Warm starts come from a short contrastive-only run on the same corpus
    // arm; the full run then continues from that checkpoint.
    let mut base_dirs: BTreeMap<bool, PathBuf> = BTreeMap::new();
    if init_values.contains(&InitMode::Pretrained) {
        for &curated in curation_values {
            let dir = shared.join(format!("base-{}", curation_label(curated)));
            fs::create_dir_all(&dir)?;
            let mut bcfg = cfg.vlp.train_config(cfg.seed);
            bcfg.alpha = 0.0;
            bcfg.epochs = (cfg.vlp.epochs / 2).max(1);
            // The shortened run has at least one step per epoch, so this
            // keeps warmup within the schedule.
            bcfg.warmup_steps = cfg.vlp.warmup_steps.min(bcfg.epochs);
            train_vlp(&corpus_arms[&curated].vlp_pairs, None, &bcfg, Some(&dir))?;
            base_dirs.insert(curated, dir);
        }
    }

    let grid_dir = out_dir.join("ablations");
    fs::create_dir_all(&grid_dir)?;
    let mut runs = Vec::new();
    for &init in init_values {
        for &kd in kd_values {
            for &curated in curation_values {
                for &kg in kg_values {
                    // Without distillation the graph variant is inert; keep
                    // only the full-graph cell to avoid duplicate rows.
                    if !kd && kg != KgVariant::Full {
                        continue;
                    }
                    let name = format!(
                        "{}_{}_{}_{}",
                        init.label(),
                        if kd { "kd" } else { "no-kd" },
                        curation_label(curated),
                        kg.label()
                    );
                    let dir = grid_dir.join(&name);
                    fs::create_dir_all(&dir)?;
                    let arm = &corpus_arms[&curated];
                    let mut vcfg = cfg.vlp.train_config(cfg.seed);
                    let teacher = if kd {
                        vcfg.alpha = cfg.vlp.alpha;
                        Some(&teachers[&kg] as &dyn TeacherHandle)
                    } else {
                        vcfg.alpha = 0.0;
                        None
                    };
                    let (model, _) = match init {
                        InitMode::Scratch => {
                            train_vlp(&arm.vlp_pairs, teacher, &vcfg, Some(&dir))?
                        }
                        InitMode::Pretrained => {
                            let base = VlModel::load(&base_dirs[&curated])?;
                            train_vlp_from(base, &arm.vlp_pairs, teacher, &vcfg, Some(&dir))?
                        }
                    };
                    let data = EvalData {
                        model: &model,
                        graph: &graph,
                        train_pairs: &arm.train_pairs,
                        bench_pairs: &arm.bench_pairs,
                        images_root: &arm.images_root,
                    };
                    let report = evaluate_pairs(&data, &cfg.eval, cfg.seed)?;
                    let mut w = std::io::BufWriter::new(fs::File::create(dir.join("report.json"))?);
                    report.write_json(&mut w)?;
                    w.flush()?;
                    runs.push(AblationRun { name, init, kd, curation: curated, kg, report });
                }
            }
        }
    }

    let mut csv = String::from("name,init,kd,curation,kg,task,metric,value\n");
    for run in &runs {
        for (task, metric, value) in run.report.rows() {
            csv.push_str(&format!(
                "{},{},{},{},{},{task},{metric},{value}\n",
                run.name,
                run.init.label(),
                if run.kd { "on" } else { "off" },
                curation_label(run.curation),
                run.kg.label()
            ));
        }
    }
    fs::write(grid_dir.join("summary.csv"), csv)?;
    Ok(runs)
}

fn curation_label(curated: bool) -> &'static str {
    if curated {
        "curated"
    } else {
        "raw"
    }
}

/// Curate (or, for the raw arm, keyword-match only) and split one corpus,
/// loading the training images once.
fn prepare_corpus(
    cfg: &RunConfig,
    graph: &PhenotypeGraph,
    shared: &Path,
    curated: bool,
    image_size: usize,
) -> Result<CorpusArm> {
    let dir = shared.join(format!("corpus-{}", curation_label(curated)));
    fs::create_dir_all(&dir)?;
    let articles = read_articles_jsonl(BufReader::new(
        fs::File::open(&cfg.corpus.articles_path).map_err(|e| {
            Error::Lookup(format!("open {}: {e}", cfg.corpus.articles_path.display()))
        })?,
    ))?;
    let keep = match (&cfg.corpus.keep_list_path, curated) {
        (Some(p), true) => Some(read_keep_list(
            BufReader::new(
                fs::File::open(p)
                    .map_err(|e| Error::Lookup(format!("open {}: {e}", p.display())))?,
            ),
            cfg.corpus.filter_k1,
            cfg.corpus.filter_k2,
        )?),
        _ => None,
    };
    let mut ccfg = cfg.curate_config();
    if !curated {
        ccfg.split_enabled = false;
    }
    let detector = GutterDetector::default();
    let clients =
        ModelClients { detector: &detector, refiner: &MockRefiner, aligner: &MockAligner };
    let output = curate_corpus(
        &articles,
        graph,
        &clients,
        keep.as_ref(),
        &ccfg,
        &cfg.corpus.corpus_root,
        &dir,
    )?;
    let mut w = std::io::BufWriter::new(fs::File::create(dir.join("pairs.jsonl"))?);
    write_pairs_jsonl(&output.pairs, &mut w)?;
    w.flush()?;
    let holdout = if cfg.split.holdout_pmcids.is_empty() {
        let fraction = cfg
            .split
            .holdout_fraction
            .ok_or_else(|| Error::Parameter("no holdout specification".into()))?;
        sample_holdout(&output.pairs, fraction, cfg.seed)?
    } else {
        cfg.split.holdout_pmcids.iter().cloned().collect()
    };
    let (train_pairs, bench_pairs) = benchmark_split(&output.pairs, &holdout)?;
    if train_pairs.is_empty() || bench_pairs.is_empty() {
        return Err(Error::Parameter(format!(
            "{} split produced {} training and {} benchmark pairs",
            curation_label(curated),
            train_pairs.len(),
            bench_pairs.len()
        )));
    }
    let images = load_pair_images(&train_pairs, &dir, image_size)?;
    let vlp_pairs = train_pairs
        .iter()
        .zip(images)
        .map(|(p, image)| VlpPair { image, caption: p.caption.clone() })
        .collect();
    Ok(CorpusArm { images_root: dir, train_pairs, bench_pairs, vlp_pairs })
}
