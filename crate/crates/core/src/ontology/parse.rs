//! Parser for the OBO flat-file subset needed to build the graph: `[Term]`
//! stanzas with id, name, def, synonym, is_a and is_obsolete tags. Everything
//! else (headers, other stanza types, unknown tags) is skipped.

use std::collections::BTreeSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{PhenotypeGraph, PhenotypeTerm};

/// Counters describing what the parser kept and dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub terms: usize,
    pub edges: usize,
    pub synonyms: usize,
    /// Terms marked `is_obsolete: true`, dropped.
    pub obsolete_dropped: usize,
    /// Synonyms with scopes other than EXACT or RELATED, dropped.
    pub synonyms_excluded: usize,
    /// is-a edges whose target is an obsolete term, dropped with the target.
    pub edges_to_obsolete_dropped: usize,
}

#[derive(Default)]
struct Stanza {
    id: Option<String>,
    name: Option<String>,
    definition: Option<String>,
    synonyms: Vec<String>,
    parent_ids: Vec<String>,
    obsolete: bool,
}

/// Parse an OBO document into a validated graph plus a report.
pub fn parse_obo<R: BufRead>(reader: R) -> Result<(PhenotypeGraph, ParseReport)> {
    let mut report = ParseReport::default();
    let mut stanzas: Vec<Stanza> = Vec::new();
    // None until the first [Term]; Some(None) inside a non-term stanza.
    let mut current: Option<Option<Stanza>> = None;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end();
        let lineno = lineno + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(stanza_type) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            if let Some(Some(stanza)) = current.take() {
                stanzas.push(stanza);
            }
            current = Some((stanza_type == "Term").then(Stanza::default));
            continue;
        }
        let Some(Some(stanza)) = current.as_mut() else {
            continue; // header or non-term stanza body
        };
        let Some((tag, value)) = line.split_once(':') else {
            return Err(Error::Parse(format!("obo line {lineno}: expected 'tag: value'")));
        };
        let value = value.trim();
        match tag.trim() {
            "id" => stanza.id = Some(value.to_string()),
            "name" => stanza.name = Some(value.to_string()),
            "def" => {
                let (text, _) = parse_quoted(value)
                    .ok_or_else(|| Error::Parse(format!("obo line {lineno}: malformed def")))?;
                stanza.definition = Some(text);
            }
            "synonym" => {
                let (text, rest) = parse_quoted(value).ok_or_else(|| {
                    Error::Parse(format!("obo line {lineno}: malformed synonym"))
                })?;
                let scope = rest.split_whitespace().next().unwrap_or("");
                if scope == "EXACT" || scope == "RELATED" {
                    stanza.synonyms.push(text);
                } else {
                    report.synonyms_excluded += 1;
                }
            }
            "is_a" => {
                let target = value.split('!').next().unwrap_or("").trim();
                if target.is_empty() {
                    return Err(Error::Parse(format!("obo line {lineno}: empty is_a target")));
                }
                stanza.parent_ids.push(target.to_string());
            }
            "is_obsolete" => stanza.obsolete = value == "true",
            _ => {}
        }
    }
    if let Some(Some(stanza)) = current.take() {
        stanzas.push(stanza);
    }

    let obsolete_ids: BTreeSet<String> = stanzas
        .iter()
        .filter(|s| s.obsolete)
        .filter_map(|s| s.id.clone())
        .collect();

    let mut terms = Vec::new();
    for stanza in stanzas {
        if stanza.obsolete {
            report.obsolete_dropped += 1;
            continue;
        }
        let id = stanza
            .id
            .ok_or_else(|| Error::Parse("term stanza without id".into()))?;
        let name = stanza
            .name
            .ok_or_else(|| Error::Parse(format!("term {id} has no name")))?;
        let mut seen = BTreeSet::new();
        let synonyms: Vec<String> = stanza
            .synonyms
            .into_iter()
            .filter(|s| seen.insert(s.clone()))
            .collect();
        let mut parent_ids = Vec::new();
        let mut seen_parents = BTreeSet::new();
        for p in stanza.parent_ids {
            if obsolete_ids.contains(&p) {
                report.edges_to_obsolete_dropped += 1;
            } else if seen_parents.insert(p.clone()) {
                parent_ids.push(p);
            }
        }
        report.synonyms += synonyms.len();
        terms.push(PhenotypeTerm {
            term_id: id,
            name,
            definition: stanza.definition,
            synonyms,
            parent_ids,
        });
    }

    let graph = PhenotypeGraph::from_terms(terms)?;
    report.terms = graph.term_count();
    report.edges = graph.edge_count();
    Ok((graph, report))
}

/// Extract a leading double-quoted string (honoring backslash escapes) and
/// return it with the remainder of the line.
fn parse_quoted(value: &str) -> Option<(String, &str)> {
    let rest = value.strip_prefix('"')?;
    let mut out = String::new();
    let mut chars = rest.char_indices();
    while let Some((i, ch)) = chars.next() {
        match ch {
            '\\' => {
                let (_, escaped) = chars.next()?;
                out.push(escaped);
            }
            '"' => return Some((out, rest[i + ch.len_utf8()..].trim_start())),
            _ => out.push(ch),
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoted_extraction_handles_escapes() {
        let (text, rest) = parse_quoted(r#""Spider \"long\" fingers" EXACT []"#).unwrap();
        assert_eq!(text, r#"Spider "long" fingers"#);
        assert_eq!(rest, "EXACT []");
        assert!(parse_quoted("no quote").is_none());
        assert!(parse_quoted("\"unterminated").is_none());
    }

    #[test]
    fn skips_header_and_typedef_stanzas() {
        let doc = "format-version: 1.2\n\n[Typedef]\nid: part_of\n\n[Term]\nid: X:1\nname: solo\n";
        let (graph, report) = parse_obo(doc.as_bytes()).unwrap();
        assert_eq!(graph.term_count(), 1);
        assert_eq!(report.terms, 1);
        assert_eq!(report.edges, 0);
    }

    #[test]
    fn drops_obsolete_terms_and_edges_to_them() {
        let doc = "\
[Term]
id: X:1
name: alive

[Term]
id: X:2
name: dead
is_obsolete: true

[Term]
id: X:3
name: child
is_a: X:1 ! alive
is_a: X:2 ! dead
";
        let (graph, report) = parse_obo(doc.as_bytes()).unwrap();
        assert_eq!(graph.term_count(), 2);
        assert_eq!(graph.edge_count(), 1);
        assert_eq!(report.obsolete_dropped, 1);
        assert_eq!(report.edges_to_obsolete_dropped, 1);
    }

    #[test]
    fn keeps_exact_and_related_synonyms_only() {
        let doc = "\
[Term]
id: X:1
name: n
synonym: \"keep one\" EXACT []
synonym: \"keep two\" RELATED []
synonym: \"drop one\" NARROW []
synonym: \"drop two\" BROAD []
";
        let (graph, report) = parse_obo(doc.as_bytes()).unwrap();
        let term = graph.term("X:1").unwrap();
        assert_eq!(term.synonyms, ["keep one", "keep two"]);
        assert_eq!(report.synonyms, 2);
        assert_eq!(report.synonyms_excluded, 2);
    }
}
