//! Caption refinement: ask a text model to decompose a compound figure's
//! caption into per-panel descriptions, each tagged with an imaging
//! modality. Every failure path falls back to the original caption under
//! the key "main" so no figure loses its text.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::records::SubfigureBox;

/// Hard cap on stored caption length, in whitespace tokens.
pub const MAX_CAPTION_TOKENS: usize = 256;

/// Instruction template for the refiner. `{main_caption}` and
/// `{reference_para}` are substituted before sending.
pub const CAPTION_REFINE_PROMPT: &str = r#"System:
You are a medical AI expert specializing in precise analysis of medical sub-figures. Your task is to create accurate, sub-figure-specific descriptions by carefully distinguishing the unique content of each individual sub-figure.

**You are given:**
1. **Main Caption:**
    ---
    {main_caption}
    ---
2. **Reference Paragraph:**
    ---
    {reference_para}
    ---

**Critical Requirements:**

**Principle 1: Strict Content Separation**
- Each sub-figure must ONLY describe visual elements present in THAT specific sub-figure
- NEVER attribute findings from one sub-figure to another
- If uncertain about which sub-figure contains a specific finding, describe it generally or omit it

**Principle 2: Minimal Shared Context**
- Start with ONLY essential background (1 sentence): patient condition, anatomical region, or study purpose
- Do NOT repeat detailed findings that apply to other sub-figures

**Principle 3: Precise Visual Localization**
- Use positional language: "upper left image shows...", "right panel demonstrates...", "lower image reveals..."
- Reference specific sub-figure identifiers when provided: "Sub-figure A displays...", "Panel B indicates..."

**Step-by-Step Process:**

**Step 1: Sub-figure Mapping**
- Identify each sub-figure using letters (A, B, C), numbers, or position (upper/lower/left/right)
- Note which specific visual content belongs to each sub-figure

**Step 2: Content Allocation**
- Carefully assign each visual finding to its correct sub-figure
- When in doubt, be conservative and describe only what's clearly visible

**Step 3: Focused Description Generation**
For each sub-figure, create descriptions that:
- Begin with minimal essential context only
- Focus exclusively on that sub-figure's unique visual content
- Use precise anatomical and imaging terminology
- Include specific imaging modality and view details
- **Length Constraint: Keep each enhanced_caption under 256 tokens (approximately 150-200 words)**

**Output Format:**
Return a single, valid JSON object. Each key should be the sub-figure identifier ("A", "B", "main", etc.), and the value should be an object containing the `enhanced_caption` and `modality`.

**Example Output Format:** :
```json
{
    "A": {
        "enhanced_caption": "Focused description of sub-figure A content only...",
        "modality": "MRI"
    },
    "B": {
        "enhanced_caption": "Specific description of sub-figure B content only...",
        "modality": "CT"
    }
}
```
Generate the JSON output now: /no_think"#;

/// A text completion backend: instruction in, raw text out.
pub trait TextRefiner {
    fn complete(&self, prompt: &str) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedCaption {
    pub enhanced_caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<String>,
}

pub fn build_refine_prompt(caption: &str, ref_paragraphs: &[String]) -> String {
    CAPTION_REFINE_PROMPT
        .replace("{main_caption}", caption)
        .replace("{reference_para}", &ref_paragraphs.join("\n"))
}

/// First `MAX_CAPTION_TOKENS` whitespace tokens, rejoined with single
/// spaces.
pub fn truncate_caption(text: &str) -> String {
    text.split_whitespace().take(MAX_CAPTION_TOKENS).collect::<Vec<_>>().join(" ")
}

/// Strip a Markdown code fence if the model wrapped its JSON in one.
fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.trim_end_matches('`').trim()
}

fn parse_refined(text: &str) -> Option<BTreeMap<String, RefinedCaption>> {
    let value: serde_json::Value = serde_json::from_str(strip_fences(text)).ok()?;
    let obj = value.as_object()?;
    if obj.is_empty() {
        return None;
    }
    let mut out = BTreeMap::new();
    for (key, v) in obj {
        let enhanced = v.get("enhanced_caption")?.as_str()?;
        if enhanced.trim().is_empty() {
            return None;
        }
        let modality = match v.get("modality") {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(s)) => Some(s.clone()),
            Some(_) => return None,
        };
        out.insert(
            key.clone(),
            RefinedCaption { enhanced_caption: truncate_caption(enhanced), modality },
        );
    }
    Some(out)
}

fn fallback(caption: &str) -> BTreeMap<String, RefinedCaption> {
    let mut map = BTreeMap::new();
    map.insert(
        "main".to_string(),
        RefinedCaption { enhanced_caption: truncate_caption(caption), modality: None },
    );
    map
}

/// Produce per-panel captions for a figure with `boxes` detected panels.
/// Unsplit figures (fewer than two boxes) skip the model entirely. A
/// malformed response earns one retry; a second failure or a transport
/// error falls back to the whole caption.
pub fn refine_captions(
    llm: &dyn TextRefiner,
    caption: &str,
    ref_paragraphs: &[String],
    boxes: &[SubfigureBox],
    warnings: &mut Vec<String>,
) -> BTreeMap<String, RefinedCaption> {
    if boxes.len() < 2 {
        return fallback(caption);
    }
    let prompt = build_refine_prompt(caption, ref_paragraphs);
    for attempt in 0..2 {
        match llm.complete(&prompt) {
            Ok(text) => match parse_refined(&text) {
                Some(map) => return map,
                None if attempt == 0 => {
                    warnings.push("refiner returned malformed JSON, retrying once".into());
                }
                None => {
                    warnings.push("refiner returned malformed JSON twice, using whole caption".into());
                    return fallback(caption);
                }
            },
            Err(e) => {
                warnings.push(format!("refiner transport failure, using whole caption: {e}"));
                return fallback(caption);
            }
        }
    }
    fallback(caption)
}

/// Deterministic offline refiner: reads the caption back out of the prompt
/// and splits it on `Panel X:` markers, emitting one entry per panel. With
/// no markers it returns the caption under "main". Modality is keyword
/// lookup on the panel text.
pub struct MockRefiner;

const MODALITY_WORDS: &[(&str, &str)] = &[
    ("radiograph", "radiograph"),
    ("x-ray", "radiograph"),
    ("mri", "MRI"),
    ("ct", "CT"),
    ("ultrasound", "ultrasound"),
    ("fundus", "fundus photograph"),
    ("photograph", "photograph"),
    ("photo", "photograph"),
];

fn detect_modality(text: &str) -> String {
    let lower = text.to_lowercase();
    for (needle, tag) in MODALITY_WORDS {
        if lower
            .split(|c: char| !c.is_alphanumeric() && c != '-')
            .any(|w| w == *needle)
        {
            return tag.to_string();
        }
    }
    "unspecified".to_string()
}

/// Positions of `Panel X:` markers and their single-character keys.
fn panel_markers(caption: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(rel) = caption[from..].find("Panel ") {
        let at = from + rel;
        let tail = &caption[at + 6..];
        let mut chars = tail.chars();
        match (chars.next(), chars.next()) {
            (Some(k), Some(':')) if k.is_ascii_alphanumeric() => {
                out.push((at, k.to_string()));
                from = at + 8;
            }
            _ => from = at + 6,
        }
    }
    out
}

impl TextRefiner for MockRefiner {
    fn complete(&self, prompt: &str) -> Result<String> {
        // Recover the substituted caption: first '---' block of the prompt.
        let caption = prompt
            .split("---")
            .nth(1)
            .map(str::trim)
            .unwrap_or("");
        let markers = panel_markers(caption);
        let mut map = serde_json::Map::new();
        if markers.is_empty() {
            map.insert(
                "main".to_string(),
                serde_json::json!({
                    "enhanced_caption": caption,
                    "modality": detect_modality(caption),
                }),
            );
        } else {
            for (i, (at, key)) in markers.iter().enumerate() {
                let start = at + 8;
                let end = markers.get(i + 1).map(|(next, _)| *next).unwrap_or(caption.len());
                let chunk = caption[start..end].trim().trim_end_matches(',').trim();
                map.insert(
                    key.clone(),
                    serde_json::json!({
                        "enhanced_caption": chunk,
                        "modality": detect_modality(chunk),
                    }),
                );
            }
        }
        Ok(serde_json::Value::Object(map).to_string())
    }
}
