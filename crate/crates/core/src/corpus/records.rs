//! Corpus record types and their JSONL wire format.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One figure as extracted from an article: the caption plus the paragraphs
/// that reference the figure in the running text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRecord {
    pub figure_id: String,
    /// Path to the image, relative to the corpus root.
    pub image_ref: String,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ref_paragraphs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub pmcid: String,
    pub figures: Vec<FigureRecord>,
}

/// One curated training sample. `subfigure_index` is present only for panels
/// cut out of a compound figure; whole figures (including conservative
/// fallbacks) leave it absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageCaptionPair {
    pub pair_id: String,
    pub pmcid: String,
    pub figure_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subfigure_index: Option<u32>,
    pub image_ref: String,
    pub caption: String,
    pub phenotype_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality_tag: Option<String>,
}

/// A detected panel within a compound figure. Bounds are pixel coordinates
/// in the parent image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubfigureBox {
    /// Always of the form `box_{n}`, n starting at 1 in reading order.
    pub box_id: String,
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    pub confidence: f64,
}

pub fn read_articles_jsonl<R: BufRead>(r: R) -> Result<Vec<ArticleRecord>> {
    let mut out: Vec<ArticleRecord> = Vec::new();
    let mut seen_pmcids = BTreeSet::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let article: ArticleRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("corpus line {}: {e}", lineno + 1)))?;
        if !seen_pmcids.insert(article.pmcid.clone()) {
            return Err(Error::Structural(format!("duplicate pmcid {}", article.pmcid)));
        }
        let mut fig_ids = BTreeSet::new();
        for fig in &article.figures {
            if !fig_ids.insert(fig.figure_id.as_str()) {
                return Err(Error::Structural(format!(
                    "article {}: duplicate figure id {}",
                    article.pmcid, fig.figure_id
                )));
            }
        }
        out.push(article);
    }
    Ok(out)
}

pub fn write_articles_jsonl<W: Write>(articles: &[ArticleRecord], mut w: W) -> Result<()> {
    for a in articles {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pairs_jsonl<R: BufRead>(r: R) -> Result<Vec<ImageCaptionPair>> {
    let mut out: Vec<ImageCaptionPair> = Vec::new();
    let mut keys = BTreeSet::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: ImageCaptionPair = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("pairs line {}: {e}", lineno + 1)))?;
        if pair.phenotype_ids.is_empty() {
            return Err(Error::Structural(format!("pair {} has no phenotype ids", pair.pair_id)));
        }
        let key = (pair.pmcid.clone(), pair.figure_id.clone(), pair.subfigure_index);
        if !keys.insert(key) {
            return Err(Error::Structural(format!(
                "duplicate pair for {}/{} index {:?}",
                pair.pmcid, pair.figure_id, pair.subfigure_index
            )));
        }
        out.push(pair);
    }
    Ok(out)
}

pub fn write_pairs_jsonl<W: Write>(pairs: &[ImageCaptionPair], mut w: W) -> Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Append-only record of curation decisions that dropped or downgraded data:
/// detector failures, refinement fallbacks, alignment fallbacks, filtered
/// images. Serialized as JSONL for offline review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub event: String,
    pub pmcid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure_id: Option<String>,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct AuditLog {
    events: Vec<AuditEvent>,
}

impl AuditLog {
    pub fn new() -> Self {
        AuditLog::default()
    }

    pub fn push(&mut self, event: &str, pmcid: &str, figure_id: Option<&str>, detail: String) {
        self.events.push(AuditEvent {
            event: event.to_string(),
            pmcid: pmcid.to_string(),
            figure_id: figure_id.map(str::to_string),
            detail,
        });
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    pub fn count(&self, event: &str) -> usize {
        self.events.iter().filter(|e| e.event == event).count()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn article(pmcid: &str, fig_ids: &[&str]) -> ArticleRecord {
        ArticleRecord {
            pmcid: pmcid.into(),
            figures: fig_ids
                .iter()
                .map(|id| FigureRecord {
                    figure_id: (*id).into(),
                    image_ref: format!("{id}.png"),
                    caption: "a caption".into(),
                    ref_paragraphs: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn article_round_trip_and_uniqueness() {
        let arts = vec![article("PMC1", &["f1", "f2"]), article("PMC2", &["f1"])];
        let mut buf = Vec::new();
        write_articles_jsonl(&arts, &mut buf).unwrap();
        let back = read_articles_jsonl(&buf[..]).unwrap();
        assert_eq!(arts, back);

        let dup = vec![article("PMC1", &["f1"]), article("PMC1", &["f1"])];
        let mut buf = Vec::new();
        write_articles_jsonl(&dup, &mut buf).unwrap();
        assert!(read_articles_jsonl(&buf[..]).is_err());

        let dup_fig = vec![article("PMC1", &["f1", "f1"])];
        let mut buf = Vec::new();
        write_articles_jsonl(&dup_fig, &mut buf).unwrap();
        assert!(read_articles_jsonl(&buf[..]).is_err());
    }

    #[test]
    fn pair_jsonl_rejects_duplicates_and_empty_ids() {
        let pair = ImageCaptionPair {
            pair_id: "PMC1:f1".into(),
            pmcid: "PMC1".into(),
            figure_id: "f1".into(),
            subfigure_index: None,
            image_ref: "f1.png".into(),
            caption: "cap".into(),
            phenotype_ids: vec!["HP:0000001".into()],
            modality_tag: None,
        };
        let mut buf = Vec::new();
        write_pairs_jsonl(&[pair.clone(), pair.clone()], &mut buf).unwrap();
        assert!(read_pairs_jsonl(&buf[..]).is_err());

        let empty = ImageCaptionPair { phenotype_ids: vec![], ..pair.clone() };
        let mut buf = Vec::new();
        write_pairs_jsonl(&[empty], &mut buf).unwrap();
        assert!(read_pairs_jsonl(&buf[..]).is_err());

        // Distinct subfigure indexes of the same figure coexist.
        let a = ImageCaptionPair { subfigure_index: Some(1), ..pair.clone() };
        let b = ImageCaptionPair { subfigure_index: Some(2), ..pair };
        let mut buf = Vec::new();
        write_pairs_jsonl(&[a, b], &mut buf).unwrap();
        assert_eq!(read_pairs_jsonl(&buf[..]).unwrap().len(), 2);
    }

    #[test]
    fn audit_log_counts_and_serializes() {
        let mut log = AuditLog::new();
        log.push("align_fallback", "PMC1", Some("f1"), "2 boxes, 3 captions".into());
        log.push("detector_failed", "PMC2", Some("f9"), "io error".into());
        log.push("align_fallback", "PMC2", None, "unparseable".into());
        assert_eq!(log.count("align_fallback"), 2);
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
