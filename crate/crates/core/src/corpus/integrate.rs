//! End-to-end curation: keyword matching, cluster filtering, splitting,
//! refinement, alignment, and emission of image-caption pairs, plus the
//! leakage-free benchmark split.
//!
//! The output directory is self-contained: every emitted pair's image_ref
//! is relative to it, with whole figures re-encoded and subfigure crops
//! written under `images/`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{crop_gray, gray_to_matrix, load_gray, save_gray_png};
use crate::ontology::PhenotypeGraph;

use super::align::{align_subfigures, AlignOutcome, VisionAligner};
use super::detect::{split_compound, SubfigureDetector};
use super::filter::{apply_cluster_filter, fit_cluster_filter, ClusterFilterModel, ImageEmbedder, PixelStatEmbedder};
use super::matching::{match_figures, KeywordMatcher, MatchedFigure};
use super::records::{ArticleRecord, AuditLog, ImageCaptionPair};
use super::refine::{refine_captions, TextRefiner};

/// Side length used when embedding images for the cluster filter.
const FILTER_EMBED_SIZE: usize = 64;

pub struct ModelClients<'a> {
    pub detector: &'a dyn SubfigureDetector,
    pub refiner: &'a dyn TextRefiner,
    pub aligner: &'a dyn VisionAligner,
}

#[derive(Debug, Clone)]
pub struct CurateConfig {
    pub seed: u64,
    pub confidence_threshold: f64,
    /// Compound figures are split unless this is off.
    pub split_enabled: bool,
    /// Drop subfigures whose captions lose every parent keyword instead of
    /// inheriting the parent's terms.
    pub strict_keywords: bool,
    pub filter_k1: usize,
    pub filter_k2: usize,
    pub filter_embed_dim: usize,
}

impl Default for CurateConfig {
    fn default() -> Self {
        CurateConfig {
            seed: 0,
            confidence_threshold: super::detect::DEFAULT_CONFIDENCE_THRESHOLD,
            split_enabled: true,
            strict_keywords: false,
            filter_k1: 20,
            filter_k2: 20,
            filter_embed_dim: 32,
        }
    }
}

pub struct CurateOutput {
    pub pairs: Vec<ImageCaptionPair>,
    pub audit: AuditLog,
    /// Present when a keep-list was supplied and the filter ran.
    pub filter_model: Option<ClusterFilterModel>,
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-') { c } else { '_' })
        .collect()
}

/// Keep the parent term ids whose keywords still occur in `caption`; an
/// empty survivor set falls back to the full parent list (or, in strict
/// mode, signals a drop by returning None).
fn surviving_terms(
    matcher: &KeywordMatcher,
    caption: &str,
    parent_ids: &[String],
    strict: bool,
) -> Option<(Vec<String>, bool)> {
    let rematched = matcher.match_text(caption);
    let survivors: Vec<String> =
        parent_ids.iter().filter(|id| rematched.binary_search(id).is_ok()).cloned().collect();
    if !survivors.is_empty() {
        return Some((survivors, false));
    }
    if strict {
        None
    } else {
        Some((parent_ids.to_vec(), true))
    }
}

pub fn curate_corpus(
    articles: &[ArticleRecord],
    graph: &PhenotypeGraph,
    clients: &ModelClients,
    keep_list: Option<&BTreeSet<(usize, usize)>>,
    cfg: &CurateConfig,
    corpus_root: &Path,
    out_dir: &Path,
) -> Result<CurateOutput> {
    let keywords = graph.keyword_list();
    let matcher = KeywordMatcher::new(&keywords)?;
    let terminal_ids: BTreeSet<&str> =
        graph.terminal_nodes().iter().map(|t| t.term_id.as_str()).collect();
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir)?;
    let mut audit = AuditLog::new();

    // Stage 1: keyword matching, then load every matched image up front so
    // unresolvable refs fail the run before any output is written.
    let mut matched: Vec<(String, MatchedFigure, image::GrayImage)> = Vec::new();
    for article in articles {
        for m in match_figures(article, &matcher) {
            let img = load_gray(&corpus_root.join(&m.figure.image_ref))?;
            matched.push((article.pmcid.clone(), m, img));
        }
    }

    // Stage 2: cluster filter, when a keep-list stands in for the audit.
    let mut filter_model = None;
    let kept: Vec<usize> = if let Some(keep) = keep_list {
        let embedder = PixelStatEmbedder::new(cfg.seed, cfg.filter_embed_dim);
        let mats: Vec<_> =
            matched.iter().map(|(_, _, img)| gray_to_matrix(img, FILTER_EMBED_SIZE)).collect();
        let embeddings = embedder.embed(&mats)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 1);
        let mut model = fit_cluster_filter(&embeddings, cfg.filter_k1, cfg.filter_k2, &mut rng)?;
        model.keep_set = keep.clone();
        if model.keep_set.is_empty() {
            audit.push("filter_warning", "", None, "empty keep set filters out every image".into());
        }
        let kept = apply_cluster_filter(&model, &embeddings);
        let kept_set: BTreeSet<usize> = kept.iter().copied().collect();
        for (i, (pmcid, m, _)) in matched.iter().enumerate() {
            if !kept_set.contains(&i) {
                let leaf = model.assign(embeddings.row(i));
                audit.push(
                    "filter_dropped",
                    pmcid,
                    Some(&m.figure.figure_id),
                    format!("leaf cluster {}:{} not in keep list", leaf.0, leaf.1),
                );
            }
        }
        filter_model = Some(model);
        kept
    } else {
        (0..matched.len()).collect()
    };

    // Stages 3-6 per surviving figure.
    let mut pairs = Vec::new();
    for &i in &kept {
        let (pmcid, m, img) = &matched[i];
        let fig = &m.figure;
        let base_name = format!("{}_{}", safe_name(pmcid), safe_name(&fig.figure_id));

        let mut warnings = Vec::new();
        let boxes = if cfg.split_enabled {
            split_compound(img, clients.detector, cfg.confidence_threshold, &mut warnings)
        } else {
            Vec::new()
        };
        for w in warnings.drain(..) {
            audit.push("detector_warning", pmcid, Some(&fig.figure_id), w);
        }

        let mut emit_whole = boxes.len() < 2;
        if !emit_whole {
            let subcaps =
                refine_captions(clients.refiner, &fig.caption, &fig.ref_paragraphs, &boxes, &mut warnings);
            for w in warnings.drain(..) {
                audit.push("refine_fallback", pmcid, Some(&fig.figure_id), w);
            }
            match align_subfigures(img, &boxes, &subcaps, clients.aligner) {
                AlignOutcome::Aligned(panels) => {
                    for (n, panel) in panels.iter().enumerate() {
                        let b = &boxes[n];
                        debug_assert_eq!(b.box_id, panel.box_id);
                        let index = (n + 1) as u32;
                        match surviving_terms(&matcher, &panel.caption, &m.term_ids, cfg.strict_keywords)
                        {
                            Some((ids, inherited)) => {
                                if inherited {
                                    audit.push(
                                        "inherited_terms",
                                        pmcid,
                                        Some(&fig.figure_id),
                                        format!("subfigure {index} kept no keyword, inherits parent terms"),
                                    );
                                }
                                let crop = crop_gray(img, b.x, b.y, b.width, b.height)?;
                                let rel = format!("images/{base_name}_sub{index}.png");
                                save_gray_png(&crop, &out_dir.join(&rel))?;
                                pairs.push(ImageCaptionPair {
                                    pair_id: format!("{pmcid}:{}:sub{index}", fig.figure_id),
                                    pmcid: pmcid.clone(),
                                    figure_id: fig.figure_id.clone(),
                                    subfigure_index: Some(index),
                                    image_ref: rel,
                                    caption: panel.caption.clone(),
                                    phenotype_ids: ids,
                                    modality_tag: panel.modality.clone(),
                                });
                            }
                            None => {
                                audit.push(
                                    "pair_dropped_strict",
                                    pmcid,
                                    Some(&fig.figure_id),
                                    format!("subfigure {index} kept no keyword under strict mode"),
                                );
                            }
                        }
                    }
                }
                AlignOutcome::Fallback(reason) => {
                    audit.push("align_fallback", pmcid, Some(&fig.figure_id), reason);
                    emit_whole = true;
                }
            }
        }

        if emit_whole {
            let rel = format!("images/{base_name}.png");
            save_gray_png(img, &out_dir.join(&rel))?;
            pairs.push(ImageCaptionPair {
                pair_id: format!("{pmcid}:{}", fig.figure_id),
                pmcid: pmcid.clone(),
                figure_id: fig.figure_id.clone(),
                subfigure_index: None,
                image_ref: rel,
                caption: fig.caption.clone(),
                phenotype_ids: m.term_ids.clone(),
                modality_tag: None,
            });
        }
    }

    pairs.sort_by(|a, b| {
        (&a.pmcid, &a.figure_id, a.subfigure_index).cmp(&(&b.pmcid, &b.figure_id, b.subfigure_index))
    });

    let mut keys = BTreeSet::new();
    for p in &pairs {
        if !keys.insert((p.pmcid.clone(), p.figure_id.clone(), p.subfigure_index)) {
            return Err(Error::Invariant(format!("duplicate pair key for {}", p.pair_id)));
        }
        for id in &p.phenotype_ids {
            if !terminal_ids.contains(id.as_str()) {
                return Err(Error::Invariant(format!(
                    "pair {} carries non-terminal phenotype {id}",
                    p.pair_id
                )));
            }
        }
    }

    Ok(CurateOutput { pairs, audit, filter_model })
}

/// Partition pairs by held-out article id and verify no article or figure
/// leaks across the boundary.
pub fn benchmark_split(
    pairs: &[ImageCaptionPair],
    holdout: &BTreeSet<String>,
) -> Result<(Vec<ImageCaptionPair>, Vec<ImageCaptionPair>)> {
    let mut train = Vec::new();
    let mut bench = Vec::new();
    for p in pairs {
        if holdout.contains(&p.pmcid) {
            bench.push(p.clone());
        } else {
            train.push(p.clone());
        }
    }
    let train_articles: BTreeSet<&str> = train.iter().map(|p| p.pmcid.as_str()).collect();
    let bench_articles: BTreeSet<&str> = bench.iter().map(|p| p.pmcid.as_str()).collect();
    if train_articles.intersection(&bench_articles).next().is_some() {
        return Err(Error::Invariant("article sets overlap after split".into()));
    }
    let train_figs: BTreeSet<(&str, &str)> =
        train.iter().map(|p| (p.pmcid.as_str(), p.figure_id.as_str())).collect();
    let bench_figs: BTreeSet<(&str, &str)> =
        bench.iter().map(|p| (p.pmcid.as_str(), p.figure_id.as_str())).collect();
    if train_figs.intersection(&bench_figs).next().is_some() {
        return Err(Error::Invariant("figure sets overlap after split".into()));
    }
    Ok((train, bench))
}

/// Seeded choice of article ids to hold out at roughly the given fraction
/// (rounded up, never the whole corpus unless fraction is 1).
pub fn sample_holdout(
    pairs: &[ImageCaptionPair],
    fraction: f64,
    seed: u64,
) -> Result<BTreeSet<String>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Parameter(format!("holdout fraction {fraction} outside [0, 1]")));
    }
    let mut ids: Vec<&str> = pairs
        .iter()
        .map(|p| p.pmcid.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let take = if fraction == 1.0 {
        ids.len()
    } else {
        ((ids.len() as f64 * fraction).ceil() as usize).min(ids.len().saturating_sub(1))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    Ok(ids.into_iter().take(take).map(str::to_string).collect())
}
