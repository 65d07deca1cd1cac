//! Stage 3: apply a schema to inputs, contrast generations with their gold
//! examples, align the two texts, review suggestions and fold the accepted
//! ones into the next revision.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::abstraction::parallel_lists;
use crate::error::StageError;
use crate::evidence::check_segment_map;
use crate::gateway::{render, Gateway, GatewayError, ResponseFormat, TemplateId};
use crate::model::{
    Attribute, AttributeId, AttributeScope, Cluster, ColumnId, Dimension, DimensionId, DimensionValue, EvidenceMatrix,
    Example, ExampleId, ExampleSet, GenerationRecord, Importance, ImprovementSuggestion, ImprovementTag, ModelError,
    RecordId, ReviewStatus, Schema, Segment, SegmentMap, SegmentSource, SuggestionId, SuggestionTarget,
};
use crate::prompting::{ask_with_correction, example_blocks, input_context_block, same_name, str_field, Rejection};
use crate::text::char_len;

pub const DEFAULT_SAMPLE_K: usize = 2;

/// Renders a schema for the contrast and alignment prompts.
pub fn schema_text(schema: &Schema) -> String {
    let mut out = String::new();
    for d in &schema.dimensions {
        out.push_str(&format!(
            "\nDimension: {}\nDescription: {}\nAttributes:\n",
            d.name, d.description
        ));
        for a in &d.attributes {
            out.push_str(&format!("- {} ({})\n", a.detailed, a.concise));
        }
    }
    out.push_str("\nOverall attributes:\n");
    for a in &schema.overall_attributes {
        out.push_str(&format!("- {} ({})\n", a.detailed, a.concise));
    }
    out
}

fn bullet_lines<'a>(items: impl Iterator<Item = &'a str>) -> String {
    items.map(|t| format!("\n- {t}")).collect()
}

/// Generates one component of the output for `input_context`.
pub fn generate_dimension_value(
    schema: &Schema,
    dimension: &str,
    goal: &str,
    input_context: &str,
    gateway: &Gateway,
) -> Result<String, StageError> {
    let dim = schema
        .dimension(dimension)
        .ok_or_else(|| StageError::Precondition(format!("schema {} has no dimension {dimension}", schema.id)))?;
    if input_context.trim().is_empty() {
        return Err(StageError::Precondition("input context is empty".into()));
    }
    let prompt = render(
        TemplateId::DimensionValue,
        &[
            ("current_user_goal", goal.to_string()),
            ("input_text", input_context.to_string()),
            ("dim_name", dim.name.clone()),
            ("dim_description", dim.description.clone()),
            (
                "attributes_text",
                bullet_lines(dim.attributes.iter().map(|a| a.detailed.as_str())),
            ),
        ],
    )?;
    match gateway.complete_structured(TemplateId::DimensionValue.as_str(), &prompt, &ResponseFormat::FreeText) {
        Ok(c) => Ok(c.text().trim().to_string()),
        Err(GatewayError::ParseFailed { .. }) => Err(StageError::EmptyGeneration(dim.name.clone())),
        Err(e) => Err(e.into()),
    }
}

/// Composes the full output from one value per schema dimension.
pub fn compose_output(
    schema: &Schema,
    goal: &str,
    input_context: &str,
    values: &[DimensionValue],
    gateway: &Gateway,
) -> Result<String, StageError> {
    let mut lines = String::new();
    for d in &schema.dimensions {
        let v = values
            .iter()
            .find(|v| v.dimension == d.id)
            .filter(|v| !v.value.trim().is_empty())
            .ok_or_else(|| StageError::MissingDimensionValue(d.id.clone()))?;
        lines.push_str(&format!("\n{}: {}", d.name, v.value));
    }
    let prompt = render(
        TemplateId::Compose,
        &[
            ("current_user_goal", goal.to_string()),
            ("input_text", input_context.to_string()),
            ("dimensions_text", lines),
            (
                "overall_arrtibutes",
                bullet_lines(schema.overall_attributes.iter().map(|a| a.detailed.as_str())),
            ),
        ],
    )?;
    match gateway.complete_structured(TemplateId::Compose.as_str(), &prompt, &ResponseFormat::FreeText) {
        Ok(c) => Ok(c.text().trim().to_string()),
        Err(GatewayError::ParseFailed { .. }) => Err(StageError::EmptyGeneration("composed output".into())),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "snake_case")]
pub enum ApplyTargets {
    /// Up to `k` cluster members, chosen by the seeded sampler.
    ClusterMembers(usize),
    Holdout,
    Both(usize),
}

impl Default for ApplyTargets {
    fn default() -> Self {
        ApplyTargets::Both(DEFAULT_SAMPLE_K)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApplyOptions {
    pub targets: ApplyTargets,
    pub seed: u64,
    /// Ordinal of the first record id (`{schema}.g{n}`).
    pub first_record: usize,
}

impl Default for ApplyOptions {
    fn default() -> Self {
        ApplyOptions {
            targets: ApplyTargets::default(),
            seed: 7,
            first_record: 1,
        }
    }
}

fn has_context(e: &Example) -> bool {
    e.input_context.as_deref().is_some_and(|c| !c.trim().is_empty())
}

/// Seeded sample of up to `k` members with an input context, in member order.
pub fn sample_members(cluster: &Cluster, set: &ExampleSet, k: usize, seed: u64) -> Vec<ExampleId> {
    let eligible: Vec<&ExampleId> = cluster
        .member_ids
        .iter()
        .filter(|id| set.get(id.as_str()).is_some_and(has_context))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: BTreeSet<&ExampleId> = eligible
        .choose_multiple(&mut rng, k.min(eligible.len()))
        .copied()
        .collect();
    eligible.into_iter().filter(|id| picked.contains(id)).cloned().collect()
}

/// Generates one record per target: per-dimension values, then the
/// composition. Value generations run concurrently.
pub fn apply_schema(
    schema: &Schema,
    cluster: &Cluster,
    set: &ExampleSet,
    options: &ApplyOptions,
    gateway: &Gateway,
) -> Result<Vec<GenerationRecord>, StageError> {
    let mut targets: Vec<(&Example, bool)> = Vec::new();
    let k = match options.targets {
        ApplyTargets::ClusterMembers(k) | ApplyTargets::Both(k) => Some(k),
        ApplyTargets::Holdout => None,
    };
    if let Some(k) = k {
        for id in sample_members(cluster, set, k, options.seed) {
            targets.extend(set.get(id.as_str()).map(|e| (e, false)));
        }
    }
    if matches!(options.targets, ApplyTargets::Holdout | ApplyTargets::Both(_)) {
        targets.extend(set.holdout_examples().filter(|e| has_context(e)).map(|e| (e, true)));
    }
    if targets.is_empty() {
        return Err(StageError::NoEligibleInputs);
    }
    let values: Vec<Vec<Result<String, StageError>>> = std::thread::scope(|s| {
        let handles: Vec<Vec<_>> = targets
            .iter()
            .map(|(e, _)| {
                let input = e.input_context.as_deref().unwrap_or_default();
                schema
                    .dimensions
                    .iter()
                    .map(|d| {
                        s.spawn(move || generate_dimension_value(schema, d.id.as_str(), &set.goal, input, gateway))
                    })
                    .collect()
            })
            .collect();
        handles
            .into_iter()
            .map(|hs| {
                hs.into_iter()
                    .map(|h| h.join().expect("generation thread panicked"))
                    .collect()
            })
            .collect()
    });
    let mut records = Vec::with_capacity(targets.len());
    for (i, ((example, is_holdout), values)) in targets.iter().zip(values).enumerate() {
        let input = example.input_context.clone().unwrap_or_default();
        let dimension_values = schema
            .dimensions
            .iter()
            .zip(values)
            .map(|(d, v)| {
                v.map(|value| DimensionValue {
                    dimension: d.id.clone(),
                    value,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let composed = compose_output(schema, &set.goal, &input, &dimension_values, gateway)?;
        records.push(GenerationRecord {
            id: RecordId(format!("{}.g{}", schema.id, options.first_record + i)),
            schema_id: schema.id.clone(),
            revision: schema.revision,
            input_context: input,
            dimension_values,
            composed,
            gold_id: Some(example.id.clone()),
            is_holdout: *is_holdout,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub record_id: RecordId,
    /// Analysis text keyed by dimension name or `Overall`.
    pub analysis: BTreeMap<String, String>,
    pub suggestions: Vec<ImprovementSuggestion>,
}

impl ContrastReport {
    pub fn suggestion(&self, id: &str) -> Option<&ImprovementSuggestion> {
        self.suggestions.iter().find(|s| s.id.as_str() == id)
    }

    /// Suggestions that were accepted or edited.
    pub fn applied(&self) -> impl Iterator<Item = &ImprovementSuggestion> {
        self.suggestions.iter().filter(|s| s.status.is_applied())
    }
}

fn dimension_values_text(schema: &Schema, record: &GenerationRecord) -> String {
    record
        .dimension_values
        .iter()
        .map(|v| {
            let name = schema
                .dimension(v.dimension.as_str())
                .map_or(v.dimension.as_str(), |d| d.name.as_str());
            format!("\n{name}: {}", v.value)
        })
        .collect()
}

/// Compares a generation with its gold example and collects tagged
/// suggestions, all pending.
pub fn contrast(
    schema: &Schema,
    record: &GenerationRecord,
    gold: &Example,
    gateway: &Gateway,
) -> Result<ContrastReport, StageError> {
    if record.composed.trim().is_empty() || gold.content.trim().is_empty() {
        return Err(StageError::Precondition(
            "contrast needs a non-empty generation and gold example".into(),
        ));
    }
    let prompt = render(
        TemplateId::Contrast,
        &[
            ("schema_text", schema_text(schema)),
            ("dimension_values_text", dimension_values_text(schema, record)),
            ("generated_output", record.composed.clone()),
            ("gold_example", gold.content.clone()),
        ],
    )?;
    ask_with_correction(
        gateway,
        TemplateId::Contrast.as_str(),
        &prompt,
        &ResponseFormat::object(&["dimension_analysis"]),
        |c| parse_contrast(c.object().expect("structured"), schema, record),
    )
}

fn parse_contrast(
    obj: &Map<String, Value>,
    schema: &Schema,
    record: &GenerationRecord,
) -> Result<ContrastReport, Rejection> {
    let Some(entries) = obj.get("dimension_analysis").and_then(Value::as_object) else {
        return Err(Rejection::parse(
            "contrast",
            "\"dimension_analysis\" must be an object keyed by dimension name",
        ));
    };
    let mut analysis = BTreeMap::new();
    let mut suggestions = Vec::new();
    for (name, entry) in entries {
        let (key, target) = if same_name(name, "Overall") {
            ("Overall".to_string(), SuggestionTarget::Overall)
        } else {
            let dim = schema.dimension_by_name(name).ok_or_else(|| {
                Rejection::new(
                    vec![format!(
                        "{name:?} is not a schema dimension; use the dimension names exactly, plus \"Overall\""
                    )],
                    StageError::UnknownTargetDimension(name.clone()),
                )
            })?;
            (dim.name.clone(), SuggestionTarget::Dimension(dim.id.clone()))
        };
        analysis.insert(key, str_field(entry, "analysis").unwrap_or_default().trim().to_string());
        let lines = entry
            .get("improvements")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        for line in lines {
            let Some(line) = line.as_str() else {
                return Err(Rejection::parse(
                    "contrast",
                    format!("{name}: improvements must be strings"),
                ));
            };
            let (tag, text) = ImprovementTag::parse_line(line).map_err(|_| {
                Rejection::new(
                    vec![format!(
                        "{line:?} must start with one of [ADD], [DEEPEN], [REFINE], [RESTRUCTURE]"
                    )],
                    StageError::UnknownTag(line.to_string()),
                )
            })?;
            suggestions.push(ImprovementSuggestion {
                id: SuggestionId(format!("{}.s{}", record.id, suggestions.len() + 1)),
                target: target.clone(),
                tag,
                text,
                status: ReviewStatus::Pending,
                origin: record.id.clone(),
            });
        }
    }
    Ok(ContrastReport {
        record_id: record.id.clone(),
        analysis,
        suggestions,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "text", rename_all = "snake_case")]
pub enum ReviewAction {
    Accept,
    Reject,
    Edit(String),
}

/// Moves one pending suggestion to a terminal state.
pub fn review_suggestion(
    report: &ContrastReport,
    suggestion: &str,
    action: &ReviewAction,
) -> Result<ContrastReport, StageError> {
    let mut out = report.clone();
    let s = out
        .suggestions
        .iter_mut()
        .find(|s| s.id.as_str() == suggestion)
        .ok_or_else(|| StageError::UnknownSuggestion(suggestion.to_string()))?;
    if s.status != ReviewStatus::Pending {
        return Err(StageError::AlreadyReviewed(s.id.clone()));
    }
    s.status = match action {
        ReviewAction::Accept => ReviewStatus::Accepted,
        ReviewAction::Reject => ReviewStatus::Rejected,
        ReviewAction::Edit(text) if text.trim().is_empty() => {
            return Err(StageError::Precondition("edited suggestion text is empty".into()))
        }
        ReviewAction::Edit(text) => ReviewStatus::Edited(text.trim().to_string()),
    };
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub map: SegmentMap,
    /// True when the model's maps were unusable and sentences were used.
    pub fallback: bool,
}

/// Character ranges of sentences: each ends after `.`, `?` or `!` plus
/// the whitespace that follows. Together they cover `text` exactly.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i], '.' | '?' | '!') && chars.get(i + 1).is_some_and(|c| c.is_whitespace()) {
            let mut end = i + 1;
            while end < chars.len() && chars[end].is_whitespace() {
                end += 1;
            }
            spans.push((start, end));
            start = end;
            i = end;
        } else {
            i += 1;
        }
    }
    if start < chars.len() {
        spans.push((start, chars.len()));
    }
    spans
}

/// Sentence-per-segment map with no dimension claims.
pub fn fallback_alignment(generated: &str, gold: &str) -> SegmentMap {
    let mut segments = Vec::new();
    for (source, text) in [(SegmentSource::Generated, generated), (SegmentSource::Gold, gold)] {
        let chars: Vec<char> = text.chars().collect();
        for (start, end) in sentence_spans(text) {
            segments.push(Segment {
                id: format!("segment_{}", segments.len() + 1),
                source,
                text: chars[start..end].iter().collect(),
                start,
                end,
                dimension: None,
                annotation: "fallback alignment".into(),
                importance: Importance::Low,
            });
        }
    }
    SegmentMap {
        segments,
        dimension_analysis: BTreeMap::new(),
        generated_len: char_len(generated),
        gold_len: char_len(gold),
    }
}

fn parse_segments(obj: &Map<String, Value>, generated: &str, gold: &str) -> Result<SegmentMap, String> {
    let list = obj
        .get("segments")
        .and_then(Value::as_array)
        .ok_or("\"segments\" must be an array")?;
    let mut segments = Vec::new();
    for (i, s) in list.iter().enumerate() {
        let id = str_field(s, "id").map_or_else(|| format!("segment_{}", i + 1), str::to_string);
        let source = match str_field(s, "source").map(str::to_lowercase).as_deref() {
            Some("generated") => SegmentSource::Generated,
            Some("gold") => SegmentSource::Gold,
            other => {
                return Err(format!(
                    "segment {id}: source must be \"generated\" or \"gold\", got {other:?}"
                ))
            }
        };
        let index = |key: &str| {
            s.get(key)
                .and_then(Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| format!("segment {id}: \"{key}\" must be a non-negative integer"))
        };
        let dimension = match s.get("dimension") {
            None | Some(Value::Null) => None,
            Some(Value::String(d)) if d.trim().is_empty() || d.trim().eq_ignore_ascii_case("null") => None,
            Some(Value::String(d)) => Some(d.trim().to_string()),
            Some(_) => return Err(format!("segment {id}: dimension must be a string or null")),
        };
        let importance = match str_field(s, "importance").map(str::to_lowercase).as_deref() {
            Some("high") => Importance::High,
            Some("medium") => Importance::Medium,
            Some("low") => Importance::Low,
            other => {
                return Err(format!(
                    "segment {id}: importance must be high, medium or low, got {other:?}"
                ))
            }
        };
        let (start, end) = (index("start_index")?, index("end_index")?);
        segments.push(Segment {
            id,
            source,
            text: str_field(s, "text").unwrap_or_default().to_string(),
            start,
            end,
            dimension,
            annotation: str_field(s, "annotation").unwrap_or_default().to_string(),
            importance,
        });
    }
    let dimension_analysis = obj
        .get("dimension_analysis")
        .and_then(Value::as_object)
        .map(|m| {
            m.iter()
                .filter_map(|(k, v)| v.as_str().map(|s| (k.clone(), s.to_string())))
                .collect()
        })
        .unwrap_or_default();
    Ok(SegmentMap {
        segments,
        dimension_analysis,
        generated_len: char_len(generated),
        gold_len: char_len(gold),
    })
}

/// Aligns a generation with its gold example. A map that fails validation
/// twice is replaced by the sentence fallback.
pub fn align_segments(
    schema: &Schema,
    record: &GenerationRecord,
    gold: &Example,
    gateway: &Gateway,
) -> Result<Alignment, StageError> {
    let (generated, gold_text) = (record.composed.as_str(), gold.content.as_str());
    if generated.is_empty() || gold_text.is_empty() {
        return Err(StageError::ParseFailed {
            stage: "align",
            reason: "both texts must be non-empty".into(),
        });
    }
    let names: Vec<String> = schema.dimensions.iter().map(|d| d.name.clone()).collect();
    let prompt = render(
        TemplateId::ColorCoding,
        &[
            ("generated_output", generated.to_string()),
            ("gold_example", gold_text.to_string()),
            ("schema_text", schema_text(schema)),
        ],
    )?;
    let result = ask_with_correction(
        gateway,
        TemplateId::ColorCoding.as_str(),
        &prompt,
        &ResponseFormat::object(&["segments"]),
        |c| {
            let map = parse_segments(c.object().expect("structured"), generated, gold_text)
                .map_err(|r| Rejection::parse("align", r))?;
            let violations = check_segment_map(&map, generated, gold_text, &names);
            if violations.is_empty() {
                Ok(map)
            } else {
                Err(Rejection::new(
                    violations.iter().map(ToString::to_string).collect(),
                    StageError::SegmentMap(violations),
                ))
            }
        },
    );
    match result {
        Ok(map) => Ok(Alignment { map, fallback: false }),
        Err(StageError::SegmentMap(_))
        | Err(StageError::ParseFailed { .. })
        | Err(StageError::Gateway(GatewayError::ParseFailed { .. })) => {
            tracing::info!(record = %record.id, "segment map rejected twice; using sentence fallback");
            Ok(Alignment {
                map: fallback_alignment(generated, gold_text),
                fallback: true,
            })
        }
        Err(e) => Err(e),
    }
}

/// The schema as the JSON object shown to the iteration prompt.
pub fn schema_json(schema: &Schema) -> Value {
    let mut dims = Map::new();
    for d in &schema.dimensions {
        dims.insert(
            d.name.clone(),
            json!({
                "description": d.description,
                "detailed": d.attributes.iter().map(|a| a.detailed.as_str()).collect::<Vec<_>>(),
                "concise": d.attributes.iter().map(|a| a.concise.as_str()).collect::<Vec<_>>(),
            }),
        );
    }
    json!({
        "dimensions": dims,
        "overall_attributes": {
            "detailed": schema.overall_attributes.iter().map(|a| a.detailed.as_str()).collect::<Vec<_>>(),
            "concise": schema.overall_attributes.iter().map(|a| a.concise.as_str()).collect::<Vec<_>>(),
        },
    })
}

fn context_text(cluster: &Cluster) -> String {
    let mut out = format!("Cluster: {}", cluster.name);
    if !cluster.common_features.is_empty() {
        out.push_str("\nCommon features:");
        out.push_str(&bullet_lines(cluster.common_features.iter().map(String::as_str)));
    }
    out
}

fn suggestion_lines(schema: &Schema, suggestions: &[&ImprovementSuggestion]) -> String {
    suggestions
        .iter()
        .map(|s| {
            let target = match &s.target {
                SuggestionTarget::Overall => "Overall",
                SuggestionTarget::Dimension(id) => {
                    schema.dimension(id.as_str()).map_or(id.as_str(), |d| d.name.as_str())
                }
            };
            format!("\n{target}: [{}] {}", s.tag, s.effective_text())
        })
        .collect()
}

/// Carries attributes over by concise label, then by detailed text; an
/// unmatched pair gets a fresh id. Returns the attributes and the ids whose
/// cells may be copied unchanged.
fn carry_attributes(
    old: &[Attribute],
    pairs: Vec<(String, String)>,
    scope: AttributeScope,
    next: &mut usize,
) -> (Vec<Attribute>, BTreeSet<AttributeId>) {
    let mut used = BTreeSet::new();
    let mut unchanged = BTreeSet::new();
    let attrs = pairs
        .into_iter()
        .map(|(detailed, concise)| {
            let matched = old
                .iter()
                .find(|a| !used.contains(&a.id) && same_name(&a.concise, &concise))
                .or_else(|| old.iter().find(|a| !used.contains(&a.id) && a.detailed == detailed));
            let id = match matched {
                Some(a) => {
                    used.insert(a.id.clone());
                    if a.detailed == detailed {
                        unchanged.insert(a.id.clone());
                    }
                    a.id.clone()
                }
                None => {
                    let id = AttributeId(format!("a{next}"));
                    *next += 1;
                    id
                }
            };
            Attribute {
                id,
                detailed,
                concise,
                scope: scope.clone(),
            }
        })
        .collect();
    (attrs, unchanged)
}

/// A matrix over `columns` with cells copied from `old` where `keep` allows.
fn carry_matrix(
    old: Option<&EvidenceMatrix>,
    rows: &[ExampleId],
    columns: Vec<ColumnId>,
    keep: impl Fn(&ColumnId) -> bool,
) -> EvidenceMatrix {
    let mut m = EvidenceMatrix::unchecked(rows.to_vec(), columns);
    if let Some(old) = old {
        for (r, c, cell) in m.cells_mut() {
            if keep(c) {
                if let Some(prev) = old.cell(r, c) {
                    *cell = prev.clone();
                }
            }
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub schema: Schema,
    pub applied: Vec<SuggestionId>,
}

/// Produces the next revision from the accepted and edited suggestions.
pub fn iterate_schema(
    schema: &Schema,
    cluster: &Cluster,
    goal: &str,
    suggestions: &[ImprovementSuggestion],
    gateway: &Gateway,
) -> Result<IterationOutcome, StageError> {
    let accepted: Vec<&ImprovementSuggestion> = suggestions.iter().filter(|s| s.status.is_applied()).collect();
    if accepted.is_empty() {
        return Err(StageError::NothingToApply);
    }
    let original = serde_json::to_string_pretty(&schema_json(schema)).expect("schema json");
    let prompt = render(
        TemplateId::Iterate,
        &[
            ("user_goal", goal.to_string()),
            ("context_text", context_text(cluster)),
            ("all_suggested_improvements", suggestion_lines(schema, &accepted)),
            ("original_schema", original),
        ],
    )?;
    let next = ask_with_correction(
        gateway,
        TemplateId::Iterate.as_str(),
        &prompt,
        &ResponseFormat::object(&["dimensions", "overall_attributes"]),
        |c| parse_iteration(c.object().expect("structured"), schema),
    )?;
    let problems = next.check_structure();
    if !problems.is_empty() {
        return Err(StageError::StructureMismatch(problems.join("; ")));
    }
    Ok(IterationOutcome {
        schema: next,
        applied: accepted.iter().map(|s| s.id.clone()).collect(),
    })
}

fn parse_iteration(obj: &Map<String, Value>, schema: &Schema) -> Result<Schema, Rejection> {
    let Some(defs) = obj.get("dimensions").and_then(Value::as_object) else {
        return Err(Rejection::parse(
            "iterate",
            "\"dimensions\" must be an object keyed by dimension name",
        ));
    };
    if defs.is_empty() {
        return Err(Rejection::parse("iterate", "the revised schema has no dimensions"));
    }
    let rows = schema.dimension_matrix.row_ids().to_vec();
    let mut next_attr = schema.next_attribute_ordinal();
    let mut next_dim = schema
        .dimensions
        .iter()
        .filter_map(|d| d.id.as_str().strip_prefix('d')?.parse::<usize>().ok())
        .max()
        .unwrap_or(0)
        + 1;
    let mut dimensions = Vec::new();
    let mut attribute_matrices = BTreeMap::new();
    let mut kept_dims = BTreeSet::new();
    for (name, v) in defs {
        let name = name.trim();
        if dimensions.iter().any(|d: &Dimension| same_name(&d.name, name)) {
            return Err(Rejection::parse("iterate", format!("dimension {name:?} appears twice")));
        }
        let old = schema.dimension_by_name(name);
        let id = match old {
            Some(d) => {
                kept_dims.insert(d.id.clone());
                d.id.clone()
            }
            None => {
                let id = DimensionId(format!("d{next_dim}"));
                next_dim += 1;
                id
            }
        };
        let pairs = parallel_lists(v, name)?;
        let (attributes, unchanged) = carry_attributes(
            old.map(|d| d.attributes.as_slice()).unwrap_or_default(),
            pairs,
            AttributeScope::Dimension(id.clone()),
            &mut next_attr,
        );
        let cols = attributes.iter().map(|a| ColumnId::from(&a.id)).collect();
        let matrix = carry_matrix(schema.attribute_matrices.get(&id), &rows, cols, |c| {
            unchanged.contains(c.as_str())
        });
        attribute_matrices.insert(id.clone(), matrix);
        let description = str_field(v, "description")
            .map(str::trim)
            .filter(|d| !d.is_empty())
            .map(str::to_string)
            .or_else(|| old.map(|d| d.description.clone()))
            .unwrap_or_default();
        dimensions.push(Dimension {
            id,
            name: old.map_or_else(|| name.to_string(), |d| d.name.clone()),
            description,
            attributes,
        });
    }
    let overall_def = obj.get("overall_attributes").cloned().unwrap_or(Value::Null);
    let pairs = parallel_lists(&overall_def, "Overall")?;
    let (overall_attributes, overall_unchanged) = carry_attributes(
        &schema.overall_attributes,
        pairs,
        AttributeScope::Overall,
        &mut next_attr,
    );
    let overall_matrix = carry_matrix(
        Some(&schema.overall_matrix),
        &rows,
        overall_attributes.iter().map(|a| ColumnId::from(&a.id)).collect(),
        |c| overall_unchanged.contains(c.as_str()),
    );
    let dimension_matrix = carry_matrix(
        Some(&schema.dimension_matrix),
        &rows,
        dimensions.iter().map(|d| ColumnId::from(&d.id)).collect(),
        |c| kept_dims.contains(c.as_str()),
    );
    let revision = schema.revision + 1;
    Ok(Schema {
        id: Schema::schema_id(&schema.cluster_id, revision),
        cluster_id: schema.cluster_id.clone(),
        revision,
        parent: Some(schema.id.clone()),
        dimensions,
        overall_attributes,
        dimension_matrix,
        attribute_matrices,
        overall_matrix,
    })
}

/// Single-prompt comparison: the raw schema report for the whole set.
pub fn run_baseline(set: &ExampleSet, gateway: &Gateway) -> Result<String, StageError> {
    let examples: Vec<&Example> = set.examples.iter().collect();
    if examples.is_empty() {
        return Err(ModelError::NoExamples.into());
    }
    let prompt = render(
        TemplateId::Baseline,
        &[
            ("content_type", set.goal.clone()),
            ("number_of_examples", examples.len().to_string()),
            ("examples", example_blocks(&examples)),
            ("input_context", input_context_block(&examples)),
        ],
    )?;
    let c = gateway.complete_structured(TemplateId::Baseline.as_str(), &prompt, &ResponseFormat::FreeText)?;
    Ok(c.text().to_string())
}
