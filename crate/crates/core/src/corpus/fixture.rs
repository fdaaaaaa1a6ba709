//! A small self-contained demo corpus: three articles, ten figures, four
//! of them carrying phenotype keywords. Rendered deterministically so
//! end-to-end runs are reproducible down to the byte.
//!
//! The layout exercises every curation path: a six-panel grid that splits
//! and aligns cleanly, a three-panel figure whose caption only describes
//! two panels (alignment falls back to the whole figure), single-panel
//! matched figures, keyword near-misses, and an obsolete-term mention
//! that must not match.

use std::collections::BTreeSet;
use std::fs;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::GrayImage;

use crate::error::Result;
use crate::imaging::save_gray_png;

use super::filter::write_keep_list;
use super::integrate::CurateConfig;
use super::records::{write_articles_jsonl, ArticleRecord, FigureRecord};

pub const DEMO_FILTER_K1: usize = 2;
pub const DEMO_FILTER_K2: usize = 2;

pub struct DemoCorpus {
    pub articles: Vec<ArticleRecord>,
    pub corpus_path: PathBuf,
    pub keep_list_path: PathBuf,
    pub keep_list: BTreeSet<(usize, usize)>,
}

/// Curation settings sized for the demo corpus: a 2x2 cluster grid instead
/// of the full 20x20, everything else at defaults.
pub fn demo_curate_config() -> CurateConfig {
    CurateConfig {
        filter_k1: DEMO_FILTER_K1,
        filter_k2: DEMO_FILTER_K2,
        ..CurateConfig::default()
    }
}

enum Layout {
    Single,
    Row3,
    Grid6,
    Grid5,
}

impl Layout {
    fn canvas(&self) -> (u32, u32) {
        match self {
            Layout::Single => (100, 80),
            Layout::Row3 => (200, 70),
            Layout::Grid6 | Layout::Grid5 => (200, 140),
        }
    }

    fn panels(&self) -> Vec<(u32, u32, u32, u32)> {
        match self {
            Layout::Single => vec![(5, 5, 90, 70)],
            Layout::Row3 => vec![(5, 5, 60, 60), (70, 5, 60, 60), (135, 5, 60, 60)],
            Layout::Grid6 => vec![
                (5, 5, 60, 60),
                (70, 5, 60, 60),
                (135, 5, 60, 60),
                (5, 75, 60, 60),
                (70, 75, 60, 60),
                (135, 75, 60, 60),
            ],
            Layout::Grid5 => vec![
                (5, 5, 85, 60),
                (110, 5, 85, 60),
                (5, 75, 60, 60),
                (70, 75, 60, 60),
                (135, 75, 60, 60),
            ],
        }
    }
}

fn stripe_panel(img: &mut GrayImage, rect: (u32, u32, u32, u32), phase: u32) {
    let (x, y, w, h) = rect;
    for py in y..y + h {
        for px in x..x + w {
            if (px + 2 * py + phase) % 7 < 2 {
                img.put_pixel(px, py, image::Luma([30]));
            }
        }
    }
}

fn render(layout: &Layout, figure_index: u32) -> GrayImage {
    let (w, h) = layout.canvas();
    let mut img = GrayImage::from_pixel(w, h, image::Luma([255]));
    for (i, rect) in layout.panels().into_iter().enumerate() {
        stripe_panel(&mut img, rect, figure_index * 11 + i as u32 * 5);
    }
    img
}

struct FigureSpec {
    figure_id: &'static str,
    layout: Layout,
    caption: &'static str,
    ref_paragraphs: &'static [&'static str],
}

struct ArticleSpec {
    pmcid: &'static str,
    figures: &'static [FigureSpec],
}

const DEMO: &[ArticleSpec] = &[
    ArticleSpec {
        pmcid: "PMC_A",
        figures: &[
            FigureSpec {
                figure_id: "f1",
                layout: Layout::Grid6,
                caption: "Arachnodactyly and camptodactyly in a 12 year old proband. \
                          Panel A: Clinical photograph of the left hand showing arachnodactyly. \
                          Panel B: Radiograph of the same hand with camptodactyly of the fifth finger. \
                          Panel C: Close-up photograph of the affected digits. \
                          Panel D: Radiograph of the right hand showing arachnodactyly. \
                          Panel E: Photograph of the feet for comparison. \
                          Panel F: Pedigree of the family with affected members marked.",
                ref_paragraphs: &[
                    "Both hands showed the elongated slender digits typical of the condition, \
                     with flexion contractures of the fifth fingers bilaterally.",
                ],
            },
            FigureSpec {
                figure_id: "f2",
                layout: Layout::Row3,
                caption: "Brachydactyly in two siblings. Panel A: dorsal view of the left hand. \
                          Panel B: dorsal view of the right hand.",
                ref_paragraphs: &[],
            },
            FigureSpec {
                figure_id: "f3",
                layout: Layout::Single,
                caption: "Pseudomacrodactyly can mimic true overgrowth and is excluded here.",
                ref_paragraphs: &[],
            },
            FigureSpec {
                figure_id: "f4",
                layout: Layout::Single,
                caption: "Operative planning schematic for digit reconstruction.",
                ref_paragraphs: &[],
            },
        ],
    },
    ArticleSpec {
        pmcid: "PMC_B",
        figures: &[
            FigureSpec {
                figure_id: "f1",
                layout: Layout::Grid5,
                caption: "Macrodactyly with tapering fingers of the left hand. \
                          Panel A: Clinical photograph showing a tapered finger on the left hand. \
                          Panel B: Radiograph showing macrodactyly of the index finger. \
                          Panel C: Ultrasound of the soft tissue overgrowth. \
                          Panel D: CT reconstruction of the bony skeleton. \
                          Panel E: Clinical photo at one year follow-up.",
                ref_paragraphs: &[
                    "Progressive enlargement of the second ray was documented over three visits.",
                ],
            },
            FigureSpec {
                figure_id: "f2",
                layout: Layout::Single,
                caption: "Elongated digits were described in earlier reports of this family.",
                ref_paragraphs: &[],
            },
            FigureSpec {
                figure_id: "f3",
                layout: Layout::Single,
                caption: "Histology of the resected fibrofatty tissue.",
                ref_paragraphs: &[],
            },
        ],
    },
    ArticleSpec {
        pmcid: "PMC_C",
        figures: &[
            FigureSpec {
                figure_id: "f1",
                layout: Layout::Grid5,
                caption: "Brachydactyly and camptodactyly in the index patient. \
                          Panel A: Radiograph demonstrating brachydactyly of both hands. \
                          Panel B: Photograph demonstrating camptodactyly of the little finger. \
                          Panel C: Standing x-ray of the feet. \
                          Panel D: MRI of the carpal bones. \
                          Panel E: Fundus examination performed to exclude ocular involvement.",
                ref_paragraphs: &[],
            },
            FigureSpec {
                figure_id: "f2",
                layout: Layout::Single,
                caption: "Timeline of clinical interventions.",
                ref_paragraphs: &[],
            },
            FigureSpec {
                figure_id: "f3",
                layout: Layout::Single,
                caption: "Workflow of the genetic testing pipeline.",
                ref_paragraphs: &[],
            },
        ],
    },
];

fn image_name(pmcid: &str, figure_id: &str) -> String {
    format!("images_src/{pmcid}_{figure_id}.png")
}

/// The demo articles with image refs relative to the corpus root.
pub fn demo_articles() -> Vec<ArticleRecord> {
    DEMO.iter()
        .map(|a| ArticleRecord {
            pmcid: a.pmcid.to_string(),
            figures: a
                .figures
                .iter()
                .map(|f| FigureRecord {
                    figure_id: f.figure_id.to_string(),
                    image_ref: image_name(a.pmcid, f.figure_id),
                    caption: f.caption.to_string(),
                    ref_paragraphs: f.ref_paragraphs.iter().map(|s| s.to_string()).collect(),
                })
                .collect(),
        })
        .collect()
}

/// Render the demo corpus under `dir`: figure images, the article JSONL,
/// and a keep-list accepting every leaf of the demo cluster grid.
pub fn write_demo_corpus(dir: &Path) -> Result<DemoCorpus> {
    fs::create_dir_all(dir.join("images_src"))?;
    let mut fig_index = 0;
    for a in DEMO {
        for f in a.figures {
            save_gray_png(&render(&f.layout, fig_index), &dir.join(image_name(a.pmcid, f.figure_id)))?;
            fig_index += 1;
        }
    }
    let articles = demo_articles();
    let corpus_path = dir.join("corpus.jsonl");
    write_articles_jsonl(&articles, BufWriter::new(File::create(&corpus_path)?))?;

    let mut keep_list = BTreeSet::new();
    for l1 in 0..DEMO_FILTER_K1 {
        for l2 in 0..DEMO_FILTER_K2 {
            keep_list.insert((l1, l2));
        }
    }
    let keep_list_path = dir.join("keep.list");
    write_keep_list(&keep_list, BufWriter::new(File::create(&keep_list_path)?))?;

    Ok(DemoCorpus { articles, corpus_path, keep_list_path, keep_list })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::align::MockAligner;
    use crate::corpus::detect::GutterDetector;
    use crate::corpus::integrate::{benchmark_split, curate_corpus, ModelClients};
    use crate::corpus::records::read_articles_jsonl;
    use crate::ontology::parse_obo;

    #[test]
    fn demo_corpus_shape() {
        let articles = demo_articles();
        assert_eq!(articles.len(), 3);
        assert_eq!(articles.iter().map(|a| a.figures.len()).sum::<usize>(), 10);
    }

    #[test]
    fn written_corpus_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let demo = write_demo_corpus(dir.path()).unwrap();
        let back =
            read_articles_jsonl(std::io::BufReader::new(File::open(&demo.corpus_path).unwrap()))
                .unwrap();
        assert_eq!(back, demo.articles);
        assert_eq!(demo.keep_list.len(), 4);
        for a in &demo.articles {
            for f in &a.figures {
                assert!(dir.path().join(&f.image_ref).is_file(), "{}", f.image_ref);
            }
        }
    }

    #[test]
    fn end_to_end_demo_curation_counts_and_split() {
        let dir = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let demo = write_demo_corpus(dir.path()).unwrap();
        let graph = parse_obo(include_str!("../../tests/fixtures/toy.obo").as_bytes())
            .unwrap()
            .0;
        let detector = GutterDetector::default();
        let clients = ModelClients {
            detector: &detector,
            refiner: &super::super::refine::MockRefiner,
            aligner: &MockAligner,
        };
        let got = curate_corpus(
            &demo.articles,
            &graph,
            &clients,
            Some(&demo.keep_list),
            &demo_curate_config(),
            dir.path(),
            out.path(),
        )
        .unwrap();

        assert_eq!(got.pairs.len(), 17, "audit: {:?}", got.audit.events());
        assert_eq!(got.audit.count("align_fallback"), 1);
        assert_eq!(got.audit.count("inherited_terms"), 9);
        assert_eq!(got.audit.count("filter_dropped"), 0);

        // The six-panel figure splits cleanly with per-panel terms.
        let a1 = &got.pairs[0];
        assert_eq!(a1.pair_id, "PMC_A:f1:sub1");
        assert_eq!(a1.phenotype_ids, vec!["HP:0001166"]);
        assert_eq!(a1.modality_tag.as_deref(), Some("photograph"));
        let a2 = &got.pairs[1];
        assert_eq!(a2.phenotype_ids, vec!["HP:0012385"]);
        assert_eq!(a2.modality_tag.as_deref(), Some("radiograph"));
        // Panel C mentions no keyword and inherits both parent terms.
        let a3 = &got.pairs[2];
        assert_eq!(a3.phenotype_ids, vec!["HP:0001166", "HP:0012385"]);

        // The under-described three-panel figure stayed whole.
        let f2 = got.pairs.iter().find(|p| p.figure_id == "f2" && p.pmcid == "PMC_A").unwrap();
        assert_eq!(f2.subfigure_index, None);
        assert_eq!(f2.phenotype_ids, vec!["HP:0001156"]);

        let prefix_counts = ["PMC_A", "PMC_B", "PMC_C"]
            .map(|id| got.pairs.iter().filter(|p| p.pmcid == id).count());
        assert_eq!(prefix_counts, [7, 5, 5]);

        let holdout: BTreeSet<String> = ["PMC_C".to_string()].into_iter().collect();
        let (train, bench) = benchmark_split(&got.pairs, &holdout).unwrap();
        assert_eq!((train.len(), bench.len()), (12, 5));

        for p in &got.pairs {
            assert!(out.path().join(&p.image_ref).is_file(), "{}", p.image_ref);
        }
    }
}
