//! Exact keyword matching of captions against the phenotype keyword list.
//!
//! Matching is case-insensitive on whitespace-normalized text and requires
//! word boundaries on both sides, so "microaneurysm" does not fire inside
//! "microaneurysms" and "arm" does not fire inside "harm".

use std::collections::{BTreeMap, BTreeSet};

use aho_corasick::AhoCorasick;

use crate::error::Result;
use crate::ontology::normalize_keyword;

use super::records::{ArticleRecord, FigureRecord};

pub struct KeywordMatcher {
    automaton: AhoCorasick,
    /// Per pattern: the term ids that keyword belongs to.
    pattern_terms: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedFigure {
    pub figure: FigureRecord,
    /// Sorted, deduplicated.
    pub term_ids: Vec<String>,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

impl KeywordMatcher {
    /// `keywords` as produced by the graph's keyword list: already
    /// normalized (keyword, term_id) entries.
    pub fn new(keywords: &[(String, String)]) -> Result<Self> {
        let mut by_keyword: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (kw, term) in keywords {
            by_keyword.entry(kw).or_default().insert(term);
        }
        let patterns: Vec<&str> = by_keyword.keys().copied().collect();
        let pattern_terms: Vec<Vec<String>> = by_keyword
            .values()
            .map(|set| set.iter().map(|s| s.to_string()).collect())
            .collect();
        let automaton = AhoCorasick::new(&patterns)
            .map_err(|e| crate::error::Error::Parameter(format!("keyword automaton: {e}")))?;
        Ok(KeywordMatcher { automaton, pattern_terms })
    }

    /// Term ids whose keywords occur in `text` as whole words. Sorted.
    pub fn match_text(&self, text: &str) -> Vec<String> {
        let hay = normalize_keyword(text);
        let mut terms = BTreeSet::new();
        for m in self.automaton.find_overlapping_iter(&hay) {
            let before_ok = hay[..m.start()].chars().next_back().map_or(true, |c| !is_word_char(c));
            let after_ok = hay[m.end()..].chars().next().map_or(true, |c| !is_word_char(c));
            if before_ok && after_ok {
                for t in &self.pattern_terms[m.pattern().as_usize()] {
                    terms.insert(t.clone());
                }
            }
        }
        terms.into_iter().collect()
    }
}

/// Figures of `article` whose captions contain at least one keyword,
/// in the article's figure order.
pub fn match_figures(article: &ArticleRecord, matcher: &KeywordMatcher) -> Vec<MatchedFigure> {
    article
        .figures
        .iter()
        .filter_map(|fig| {
            let term_ids = matcher.match_text(&fig.caption);
            if term_ids.is_empty() {
                None
            } else {
                Some(MatchedFigure { figure: fig.clone(), term_ids })
            }
        })
        .collect()
}
