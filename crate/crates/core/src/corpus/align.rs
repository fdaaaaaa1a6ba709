//! Subfigure-to-caption alignment.
//!
//! The panel boxes are burned into the image with red markers and the
//! multimodal model is asked to map each `box_n` identifier to a caption
//! segment. Anything short of a clean bijection keeps the original compound
//! figure and caption together (the conservative fallback).

use std::collections::{BTreeMap, BTreeSet};

use image::GrayImage;

use crate::error::Result;
use crate::imaging::{draw_box_overlay, rgb_to_png_base64};
use crate::ontology::normalize_keyword;

use super::records::SubfigureBox;
use super::refine::RefinedCaption;

/// Instruction template for the aligner. `{caption_text}` is substituted
/// before sending; the image travels alongside as base64 PNG.
pub const SUBFIGURE_ALIGN_PROMPT: &str = r#"System: System role (system)
You are an expert in scientific medical imaging text-image alignment.

Please align the detection boxes in the uploaded object-detection visualization image with the given caption at a precise subfigure- subcaption level.

User role (user)
[Task Description]

Input:
1. Object-detection visualization image: The image contains multiple detection boxes. At the center of each detection box, there is a red rectangular marker, with the detection box identifier displayed inside a circle (in the format 'box_X', where X may be a letter or a number). If there are no detection boxes and corresponding identifiers in the image, it means no objects were detected.
2. An English caption describing the image content: "{caption_text}"

Important notes:
- The image may contain original subfigure labels (such as A, B, C, a, b, c, 1, 2, etc.); these are original labels of the figure.
- The 'box_Z', 'box_Y', 'box_X', etc. inside the red boxes are the detection box identifiers that we need to align; be sure to distinguish them from the original labels.
- The 'Z' in the detection box identifier 'box_Z' does not correspond to the original subfigure labels.

Task requirements:
    1. Carefully identify each detection box identifier inside the circles (in the 'box_X' format).
    2. Observe the specific position of each detection box in the image.
    3. Analyze the content described in the caption.
    4. Based on the actual location and content of each detection box, align it with the most relevant sub-description in the caption.

Alignment principles:
- Use the actual anatomical location and pointing direction of the detection box as the basis, rather than a superficial mapping between letters.
- If multiple detection boxes point to the same anatomical structure or described region, they may correspond to the same caption segment.
- If you cannot determine a matching relationship, mark it as "unknown".

Output format:
Only output the alignment result in JSON format. Do not output any non-JSON explanatory content:
[
    {"bbox_id": "detection box identifier", "caption_chunk": "corresponding original description segment"},
    {"bbox_id": "detection box identifier", "caption_chunk": "corresponding original description segment"},
    ...
]"#;

/// A vision-text backend: instruction plus base64 PNG in, raw text out.
pub trait VisionAligner {
    fn align(&self, prompt: &str, image_png_b64: &str) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPanel {
    pub box_id: String,
    /// Key of the subcaption this panel was matched to.
    pub caption_key: String,
    pub caption: String,
    pub modality: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlignOutcome {
    /// One entry per box, in box order.
    Aligned(Vec<AlignedPanel>),
    /// Keep the compound figure whole; the string is the reason.
    Fallback(String),
}

pub fn build_align_prompt(subcaptions: &BTreeMap<String, RefinedCaption>) -> String {
    let caption_text: Vec<String> = subcaptions
        .iter()
        .map(|(k, v)| format!("{k}: {}", v.enhanced_caption))
        .collect();
    SUBFIGURE_ALIGN_PROMPT.replace("{caption_text}", &caption_text.join("\n"))
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.trim_end_matches('`').trim()
}

/// Resolve one reported chunk to the unique subcaption it came from:
/// exact text, exact "key: text" line, or normalized substring containment
/// in exactly one subcaption.
fn resolve_chunk(chunk: &str, subcaptions: &BTreeMap<String, RefinedCaption>) -> Option<String> {
    for (k, v) in subcaptions {
        if chunk == v.enhanced_caption || chunk == format!("{k}: {}", v.enhanced_caption) {
            return Some(k.clone());
        }
    }
    let needle = normalize_keyword(chunk);
    if needle.is_empty() {
        return None;
    }
    let mut hit = None;
    for (k, v) in subcaptions {
        if normalize_keyword(&v.enhanced_caption).contains(&needle) {
            if hit.is_some() {
                return None;
            }
            hit = Some(k.clone());
        }
    }
    hit
}

fn parse_mapping(text: &str) -> Option<Vec<(String, String)>> {
    let value: serde_json::Value = serde_json::from_str(strip_fences(text)).ok()?;
    let arr = value.as_array()?;
    let mut out = Vec::with_capacity(arr.len());
    for item in arr {
        let bbox = item.get("bbox_id")?.as_str()?;
        let chunk = item.get("caption_chunk")?.as_str()?;
        out.push((bbox.to_string(), chunk.to_string()));
    }
    Some(out)
}

pub fn align_subfigures(
    image: &GrayImage,
    boxes: &[SubfigureBox],
    subcaptions: &BTreeMap<String, RefinedCaption>,
    mllm: &dyn VisionAligner,
) -> AlignOutcome {
    if boxes.len() != subcaptions.len() {
        return AlignOutcome::Fallback(format!(
            "{} boxes but {} subcaptions",
            boxes.len(),
            subcaptions.len()
        ));
    }
    if boxes.len() == 1 {
        // Bijection is forced; no model call needed.
        let (key, cap) = subcaptions.iter().next().unwrap();
        return AlignOutcome::Aligned(vec![AlignedPanel {
            box_id: boxes[0].box_id.clone(),
            caption_key: key.clone(),
            caption: cap.enhanced_caption.clone(),
            modality: cap.modality.clone(),
        }]);
    }

    let labeled: Vec<(String, u32, u32, u32, u32)> = boxes
        .iter()
        .map(|b| (b.box_id.clone(), b.x, b.y, b.width, b.height))
        .collect();
    let overlay = draw_box_overlay(image, &labeled);
    let b64 = match rgb_to_png_base64(&overlay) {
        Ok(b64) => b64,
        Err(e) => return AlignOutcome::Fallback(format!("overlay encoding failed: {e}")),
    };
    let prompt = build_align_prompt(subcaptions);
    let response = match mllm.align(&prompt, &b64) {
        Ok(r) => r,
        Err(e) => return AlignOutcome::Fallback(format!("aligner transport failure: {e}")),
    };
    let Some(mapping) = parse_mapping(&response) else {
        return AlignOutcome::Fallback("unparseable aligner response".into());
    };

    let box_ids: BTreeSet<&str> = boxes.iter().map(|b| b.box_id.as_str()).collect();
    let mut by_box: BTreeMap<String, String> = BTreeMap::new();
    let mut used_keys = BTreeSet::new();
    for (bbox, chunk) in &mapping {
        if chunk == "unknown" || bbox == "unknown" {
            return AlignOutcome::Fallback(format!("aligner could not place {bbox}"));
        }
        if !box_ids.contains(bbox.as_str()) {
            return AlignOutcome::Fallback(format!("aligner invented box id {bbox}"));
        }
        let Some(key) = resolve_chunk(chunk, subcaptions) else {
            return AlignOutcome::Fallback(format!("chunk for {bbox} matches no subcaption"));
        };
        if by_box.insert(bbox.clone(), key.clone()).is_some() || !used_keys.insert(key) {
            return AlignOutcome::Fallback("non-bijective mapping".into());
        }
    }
    if by_box.len() != boxes.len() {
        return AlignOutcome::Fallback(format!(
            "aligner mapped {} of {} boxes",
            by_box.len(),
            boxes.len()
        ));
    }

    AlignOutcome::Aligned(
        boxes
            .iter()
            .map(|b| {
                let key = &by_box[&b.box_id];
                let cap = &subcaptions[key];
                AlignedPanel {
                    box_id: b.box_id.clone(),
                    caption_key: key.clone(),
                    caption: cap.enhanced_caption.clone(),
                    modality: cap.modality.clone(),
                }
            })
            .collect(),
    )
}

/// Deterministic offline aligner: maps box_n to the n-th subcaption line of
/// the prompt, in order. Stands in for the multimodal backend.
pub struct MockAligner;

impl VisionAligner for MockAligner {
    fn align(&self, prompt: &str, _image_png_b64: &str) -> Result<String> {
        let caption_text = prompt
            .split("the image content: \"")
            .nth(1)
            .and_then(|rest| rest.split("\"\n\nImportant notes:").next())
            .unwrap_or("");
        let items: Vec<serde_json::Value> = caption_text
            .lines()
            .enumerate()
            .map(|(i, line)| {
                serde_json::json!({
                    "bbox_id": format!("box_{}", i + 1),
                    "caption_chunk": line,
                })
            })
            .collect();
        Ok(serde_json::Value::Array(items).to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxes(n: usize) -> Vec<SubfigureBox> {
        (0..n)
            .map(|i| SubfigureBox {
                box_id: format!("box_{}", i + 1),
                x: 10 + 40 * i as u32,
                y: 10,
                width: 30,
                height: 30,
                confidence: 0.9,
            })
            .collect()
    }

    fn subcaptions(texts: &[(&str, &str)]) -> BTreeMap<String, RefinedCaption> {
        texts
            .iter()
            .map(|(k, t)| {
                (
                    k.to_string(),
                    RefinedCaption { enhanced_caption: t.to_string(), modality: None },
                )
            })
            .collect()
    }

    fn canvas() -> GrayImage {
        GrayImage::from_pixel(160, 60, image::Luma([250]))
    }

    struct Panicking;
    impl VisionAligner for Panicking {
        fn align(&self, _: &str, _: &str) -> Result<String> {
            panic!("aligner must not be called");
        }
    }

    struct Fixed(String);
    impl VisionAligner for Fixed {
        fn align(&self, _: &str, _: &str) -> Result<String> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn count_mismatch_falls_back_without_a_call() {
        let caps = subcaptions(&[("A", "first"), ("B", "second")]);
        let got = align_subfigures(&canvas(), &boxes(3), &caps, &Panicking);
        assert!(matches!(got, AlignOutcome::Fallback(ref r) if r.contains("3 boxes")));
    }

    #[test]
    fn single_box_aligns_trivially_without_a_call() {
        let caps = subcaptions(&[("A", "only panel")]);
        let got = align_subfigures(&canvas(), &boxes(1), &caps, &Panicking);
        match got {
            AlignOutcome::Aligned(panels) => {
                assert_eq!(panels.len(), 1);
                assert_eq!(panels[0].box_id, "box_1");
                assert_eq!(panels[0].caption, "only panel");
            }
            other => panic!("expected aligned, got {other:?}"),
        }
    }

    #[test]
    fn mock_identity_alignment_covers_three_boxes() {
        let caps =
            subcaptions(&[("A", "left radiograph"), ("B", "middle photo"), ("C", "right scan")]);
        let got = align_subfigures(&canvas(), &boxes(3), &caps, &MockAligner);
        match got {
            AlignOutcome::Aligned(panels) => {
                assert_eq!(panels.len(), 3);
                assert_eq!(panels[0].caption_key, "A");
                assert_eq!(panels[1].caption_key, "B");
                assert_eq!(panels[2].caption_key, "C");
                assert_eq!(panels[2].caption, "right scan");
            }
            other => panic!("expected aligned, got {other:?}"),
        }
    }

    #[test]
    fn unknown_and_nonbijective_responses_fall_back() {
        let caps = subcaptions(&[("A", "first"), ("B", "second")]);
        let unknown = Fixed(
            serde_json::json!([
                {"bbox_id": "box_1", "caption_chunk": "first"},
                {"bbox_id": "box_2", "caption_chunk": "unknown"},
            ])
            .to_string(),
        );
        assert!(matches!(
            align_subfigures(&canvas(), &boxes(2), &caps, &unknown),
            AlignOutcome::Fallback(_)
        ));

        let duplicated = Fixed(
            serde_json::json!([
                {"bbox_id": "box_1", "caption_chunk": "first"},
                {"bbox_id": "box_1", "caption_chunk": "second"},
            ])
            .to_string(),
        );
        assert!(matches!(
            align_subfigures(&canvas(), &boxes(2), &caps, &duplicated),
            AlignOutcome::Fallback(ref r) if r.contains("non-bijective")
        ));

        let same_chunk = Fixed(
            serde_json::json!([
                {"bbox_id": "box_1", "caption_chunk": "first"},
                {"bbox_id": "box_2", "caption_chunk": "first"},
            ])
            .to_string(),
        );
        assert!(matches!(
            align_subfigures(&canvas(), &boxes(2), &caps, &same_chunk),
            AlignOutcome::Fallback(_)
        ));

        let garbage = Fixed("the model refuses to answer in JSON".into());
        assert!(matches!(
            align_subfigures(&canvas(), &boxes(2), &caps, &garbage),
            AlignOutcome::Fallback(ref r) if r.contains("unparseable")
        ));

        let partial = Fixed(
            serde_json::json!([{"bbox_id": "box_1", "caption_chunk": "first"}]).to_string(),
        );
        assert!(matches!(
            align_subfigures(&canvas(), &boxes(2), &caps, &partial),
            AlignOutcome::Fallback(ref r) if r.contains("1 of 2")
        ));
    }

    #[test]
    fn chunks_resolve_by_substring_when_unambiguous() {
        let caps = subcaptions(&[
            ("A", "Left hand radiograph with arachnodactyly of all digits"),
            ("B", "Right hand photograph, normal appearance"),
        ]);
        let fragments = Fixed(
            serde_json::json!([
                {"bbox_id": "box_1", "caption_chunk": "radiograph with arachnodactyly"},
                {"bbox_id": "box_2", "caption_chunk": "B: Right hand photograph, normal appearance"},
            ])
            .to_string(),
        );
        match align_subfigures(&canvas(), &boxes(2), &caps, &fragments) {
            AlignOutcome::Aligned(panels) => {
                assert_eq!(panels[0].caption_key, "A");
                assert_eq!(panels[1].caption_key, "B");
            }
            other => panic!("expected aligned, got {other:?}"),
        }
    }

    #[test]
    fn transport_failure_falls_back() {
        struct Down;
        impl VisionAligner for Down {
            fn align(&self, _: &str, _: &str) -> Result<String> {
                Err(crate::error::Error::External("timeout".into()))
            }
        }
        let caps = subcaptions(&[("A", "first"), ("B", "second")]);
        assert!(matches!(
            align_subfigures(&canvas(), &boxes(2), &caps, &Down),
            AlignOutcome::Fallback(ref r) if r.contains("timeout")
        ));
    }
}
