//! The prompt template set and its renderer.
//!
//! Template bodies live in `prompts/*.txt` and are used byte-for-byte.
//! Placeholders are `{name}` with `name` made of lowercase letters and
//! underscores; any other brace (the JSON format samples) is literal text.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Clustering,
    FeatureMatrix,
    Dimensions,
    DimensionAttributes,
    OverallAttributes,
    DimensionValue,
    Compose,
    Contrast,
    ColorCoding,
    Iterate,
    Baseline,
}

impl TemplateId {
    pub const ALL: [TemplateId; 11] = [
        TemplateId::Clustering,
        TemplateId::FeatureMatrix,
        TemplateId::Dimensions,
        TemplateId::DimensionAttributes,
        TemplateId::OverallAttributes,
        TemplateId::DimensionValue,
        TemplateId::Compose,
        TemplateId::Contrast,
        TemplateId::ColorCoding,
        TemplateId::Iterate,
        TemplateId::Baseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Clustering => "clustering",
            TemplateId::FeatureMatrix => "feature_matrix",
            TemplateId::Dimensions => "dimensions",
            TemplateId::DimensionAttributes => "dimension_attributes",
            TemplateId::OverallAttributes => "overall_attributes",
            TemplateId::DimensionValue => "dimension_value",
            TemplateId::Compose => "compose",
            TemplateId::Contrast => "contrast",
            TemplateId::ColorCoding => "color_coding",
            TemplateId::Iterate => "iterate",
            TemplateId::Baseline => "baseline",
        }
    }

    fn body(self) -> &'static str {
        match self {
            TemplateId::Clustering => include_str!("prompts/clustering.txt"),
            TemplateId::FeatureMatrix => include_str!("prompts/feature_matrix.txt"),
            TemplateId::Dimensions => include_str!("prompts/dimensions.txt"),
            TemplateId::DimensionAttributes => include_str!("prompts/dimension_attributes.txt"),
            TemplateId::OverallAttributes => include_str!("prompts/overall_attributes.txt"),
            TemplateId::DimensionValue => include_str!("prompts/dimension_value.txt"),
            TemplateId::Compose => include_str!("prompts/compose.txt"),
            TemplateId::Contrast => include_str!("prompts/contrast.txt"),
            TemplateId::ColorCoding => include_str!("prompts/color_coding.txt"),
            TemplateId::Iterate => include_str!("prompts/iterate.txt"),
            TemplateId::Baseline => include_str!("prompts/baseline.txt"),
        }
    }

    /// Documented bindings of each template.
    pub fn documented_bindings(self) -> &'static [&'static str] {
        match self {
            TemplateId::Clustering => &["content_type", "examples", "input_context"],
            TemplateId::FeatureMatrix => &["content_type", "cluster_name", "common_features", "examples"],
            TemplateId::Dimensions => &["user_goal", "cluster_name", "examples_str", "input_context"],
            TemplateId::DimensionAttributes => &[
                "user_goal",
                "cluster_name",
                "examples_full_text",
                "input_context",
                "dimensions_text",
                "example_ids_text",
            ],
            TemplateId::OverallAttributes => &["user_goal", "examples_full_text", "input_context", "example_ids_text"],
            TemplateId::DimensionValue => &[
                "current_user_goal",
                "input_text",
                "dim_name",
                "dim_description",
                "attributes_text",
            ],
            TemplateId::Compose => &[
                "current_user_goal",
                "input_text",
                "dimensions_text",
                "overall_arrtibutes",
            ],
            TemplateId::Contrast => &[
                "schema_text",
                "dimension_values_text",
                "generated_output",
                "gold_example",
            ],
            TemplateId::ColorCoding => &["generated_output", "gold_example", "schema_text"],
            TemplateId::Iterate => &[
                "user_goal",
                "context_text",
                "all_suggested_improvements",
                "original_schema",
            ],
            TemplateId::Baseline => &["content_type", "number_of_examples", "examples", "input_context"],
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("missing binding {0:?}")]
    MissingBinding(String),
    #[error("binding {0:?} is not a placeholder of this template")]
    UnknownPlaceholder(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: &'static str,
    pub required_bindings: BTreeSet<&'static str>,
}

impl PromptTemplate {
    pub fn get(id: TemplateId) -> Self {
        let body = id.body();
        let required_bindings = placeholders(body).into_iter().map(|(_, _, name)| name).collect();
        PromptTemplate {
            id,
            body,
            required_bindings,
        }
    }
}

/// Every `{name}` occurrence as (byte start, byte end, name).
fn placeholders(body: &str) -> Vec<(usize, usize, &str)> {
    let bytes = body.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' {
                out.push((i, j + 1, &body[i + 1..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Substitutes every placeholder in one pass. Bound values are inserted
/// literally, so braces inside them are never re-expanded.
pub fn render_prompt(template: &PromptTemplate, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
    for name in &template.required_bindings {
        if !bindings.contains_key(name) {
            return Err(TemplateError::MissingBinding(name.to_string()));
        }
    }
    for name in bindings.keys() {
        if !template.required_bindings.contains(name) {
            return Err(TemplateError::UnknownPlaceholder(name.to_string()));
        }
    }
    let mut out = String::with_capacity(template.body.len() + 1024);
    let mut last = 0;
    for (start, end, name) in placeholders(template.body) {
        out.push_str(&template.body[last..start]);
        out.push_str(&bindings[name]);
        last = end;
    }
    out.push_str(&template.body[last..]);
    Ok(out)
}
