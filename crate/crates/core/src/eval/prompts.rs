//! Prompt ensembling for zero-shot classification: each class name is
//! substituted into a fixed set of templates and the resulting text
//! embeddings are averaged into one class representation.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLASS_PLACEHOLDER: &str = "[CLASS_NAME]";

/// The default ensemble: twelve clinical phrasings of the same concept.
pub const DEFAULT_TEMPLATES: [&str; 12] = [
    "A medical image showing [CLASS_NAME].",
    "Diagnosis of [CLASS_NAME].",
    "Clinical signs of [CLASS_NAME].",
    "Image from a patient with [CLASS_NAME].",
    "This is a photo of [CLASS_NAME].",
    "Findings consistent with [CLASS_NAME].",
    "Evidence of [CLASS_NAME].",
    "A case of [CLASS_NAME].",
    "An example of [CLASS_NAME].",
    "This image displays features of [CLASS_NAME].",
    "Image confirms a diagnosis of [CLASS_NAME].",
    "Abnormal findings suggesting [CLASS_NAME].",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplateSet {
    templates: Vec<String>,
}

impl PromptTemplateSet {
    /// Every template must contain the class placeholder exactly once.
    pub fn new(templates: Vec<String>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::Parameter("empty template set".into()));
        }
        for t in &templates {
            let n = t.matches(CLASS_PLACEHOLDER).count();
            if n != 1 {
                return Err(Error::Parameter(format!(
                    "template {t:?} contains the placeholder {n} times, expected exactly once"
                )));
            }
        }
        Ok(PromptTemplateSet { templates })
    }

    /// One template per line; blank lines and `#` comments are skipped.
    pub fn from_reader<R: BufRead>(r: R) -> Result<Self> {
        let mut templates = Vec::new();
        for line in r.lines() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            templates.push(t.to_string());
        }
        Self::new(templates)
    }

    pub fn instantiate(&self, class_name: &str) -> Vec<String> {
        self.templates.iter().map(|t| t.replace(CLASS_PLACEHOLDER, class_name)).collect()
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

impl Default for PromptTemplateSet {
    fn default() -> Self {
        PromptTemplateSet { templates: DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_set_is_the_twelve_known_phrasings() {
        let set = PromptTemplateSet::default();
        assert_eq!(set.len(), 12);
        assert_eq!(set.templates()[0], "A medical image showing [CLASS_NAME].");
        assert_eq!(set.templates()[11], "Abnormal findings suggesting [CLASS_NAME].");
        let prompts = set.instantiate("melanoma");
        assert_eq!(prompts[0], "A medical image showing melanoma.");
        assert_eq!(prompts[10], "Image confirms a diagnosis of melanoma.");
        assert!(prompts.iter().all(|p| !p.contains(CLASS_PLACEHOLDER)));
    }

    #[test]
    fn rejects_missing_duplicate_or_no_templates() {
        assert!(PromptTemplateSet::new(vec![]).is_err());
        assert!(PromptTemplateSet::new(vec!["no placeholder here".into()]).is_err());
        assert!(PromptTemplateSet::new(vec![
            "[CLASS_NAME] next to [CLASS_NAME].".into()
        ])
        .is_err());
    }

    #[test]
    fn reader_skips_blanks_and_comments() {
        let text = "# ensemble\nA photo of [CLASS_NAME].\n\n  Signs of [CLASS_NAME].  \n";
        let set = PromptTemplateSet::from_reader(text.as_bytes()).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.templates()[1], "Signs of [CLASS_NAME].");
    }
}
