//! Stage 2: dimensions, dimension-scoped attributes and overall attributes,
//! each with an evidence matrix, assembled into a revision-0 schema.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::StageError;
use crate::evidence::{
    check_support, downgrade_unquoted_yes, verify_matrix, NormalizationPolicy, VerificationReport,
    DEFAULT_SUPPORT_THRESHOLD,
};
use crate::gateway::{render, Gateway, ResponseFormat, TemplateId};
use crate::model::{
    Attribute, AttributeId, AttributeScope, Cluster, ClusterId, ColumnId, Dimension, DimensionId, EvidenceCell,
    EvidenceMatrix, Example, ExampleSet, Schema,
};
use crate::prompting::{
    ask_with_correction, example_blocks, example_map, id_list, input_context_block, judgment, members, same_name,
    str_field, CellGrid, Rejection,
};

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionsOutcome {
    /// Dimensions without attributes yet.
    pub dimensions: Vec<Dimension>,
    pub matrix: EvidenceMatrix,
    pub report: VerificationReport,
    pub warnings: Vec<String>,
}

/// Infers the cluster's dimensions and judges every member against each.
/// In strict mode `Yes` cells without a snippet become `Partial` and
/// unverifiable `Yes` snippets are downgraded.
pub fn infer_dimensions(
    cluster: &Cluster,
    set: &ExampleSet,
    gateway: &Gateway,
    strict: bool,
) -> Result<DimensionsOutcome, StageError> {
    let examples = members(set, &cluster.member_ids)?;
    if examples.is_empty() {
        return Err(StageError::Precondition(format!(
            "cluster {} has no members",
            cluster.id
        )));
    }
    let prompt = render(
        TemplateId::Dimensions,
        &[
            ("user_goal", set.goal.clone()),
            ("cluster_name", cluster.name.clone()),
            ("examples_str", example_blocks(&examples)),
            ("input_context", input_context_block(&examples)),
        ],
    )?;
    let (dimensions, mut matrix, warnings) = ask_with_correction(
        gateway,
        TemplateId::Dimensions.as_str(),
        &prompt,
        &ResponseFormat::object(&["dimensions", "example_mappings"]),
        |completion| parse_dimensions(completion.object().expect("structured"), cluster),
    )?;
    if strict {
        downgrade_unquoted_yes(&mut matrix);
    }
    let (matrix, report) = verify_matrix(&matrix, &example_map(set), strict, &NormalizationPolicy::default())?;
    Ok(DimensionsOutcome {
        dimensions,
        matrix,
        report,
        warnings,
    })
}

type ParsedDimensions = (Vec<Dimension>, EvidenceMatrix, Vec<String>);

fn parse_dimensions(obj: &Map<String, Value>, cluster: &Cluster) -> Result<ParsedDimensions, Rejection> {
    let Some(list) = obj.get("dimensions").and_then(Value::as_array) else {
        return Err(Rejection::parse("dimensions", "\"dimensions\" must be an array"));
    };
    let mut dimensions: Vec<Dimension> = Vec::new();
    for (i, d) in list.iter().enumerate() {
        let Some(name) = str_field(d, "name").map(str::trim).filter(|n| !n.is_empty()) else {
            return Err(Rejection::parse(
                "dimensions",
                format!("dimension {} has no name", i + 1),
            ));
        };
        if dimensions.iter().any(|x| same_name(&x.name, name)) {
            return Err(Rejection::parse(
                "dimensions",
                format!("dimension {name:?} is listed twice"),
            ));
        }
        dimensions.push(Dimension {
            id: DimensionId(format!("d{}", i + 1)),
            name: name.to_string(),
            description: str_field(d, "description").unwrap_or_default().trim().to_string(),
            attributes: Vec::new(),
        });
    }
    if dimensions.is_empty() {
        return Err(Rejection::parse("dimensions", "no dimensions were identified"));
    }
    let columns: Vec<ColumnId> = dimensions.iter().map(|d| ColumnId::from(&d.id)).collect();
    let mut grid = CellGrid::new(cluster.member_ids.clone(), columns);
    let mappings = obj
        .get("example_mappings")
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    for m in &mappings {
        let Some(row) = m.get("example_id").and_then(|v| grid.row(v)) else {
            continue;
        };
        let apps = m
            .get("dimension_applications")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        for app in &apps {
            let name = str_field(app, "dimension").unwrap_or_default();
            let Some(dim) = dimensions.iter().find(|d| same_name(&d.name, name)) else {
                grid.warnings
                    .push(format!("ignored judgment for unknown dimension {name:?}"));
                continue;
            };
            match judgment(app, "applies") {
                Ok(j) => grid.put(
                    row.clone(),
                    ColumnId::from(&dim.id),
                    EvidenceCell::judged(
                        j,
                        str_field(app, "explanation").unwrap_or_default(),
                        str_field(app, "snippet").map(str::to_string),
                    ),
                ),
                Err(e) => grid.problems.push(format!("Example {row}: {e}")),
            }
        }
    }
    let names: BTreeMap<String, String> = dimensions.iter().map(|d| (d.id.to_string(), d.name.clone())).collect();
    let (matrix, warnings) = grid.finish(&format!("dimensions/{}", cluster.name), |c| {
        format!("dimension {:?}", names.get(c).cloned().unwrap_or_default())
    })?;
    Ok((dimensions, matrix, warnings))
}

/// Support of one attribute after verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportFinding {
    pub scope: String,
    pub attribute: AttributeId,
    pub concise: String,
    pub support: f64,
    pub passes: bool,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributesOutcome {
    pub attributes: BTreeMap<DimensionId, Vec<Attribute>>,
    pub matrices: BTreeMap<DimensionId, EvidenceMatrix>,
    pub report: VerificationReport,
    pub support: Vec<SupportFinding>,
    pub warnings: Vec<String>,
}

impl AttributesOutcome {
    /// First attribute ordinal not used by this outcome, dropped ones included.
    pub fn next_ordinal(&self, first_ordinal: usize) -> usize {
        first_ordinal
            + self.attributes.values().map(Vec::len).sum::<usize>()
            + self.support.iter().filter(|s| s.dropped).count()
    }
}

/// Reads one `{detailed: [...], concise: [...]}` pair.
pub(crate) fn parallel_lists(v: &Value, scope: &str) -> Result<Vec<(String, String)>, Rejection> {
    let list = |key: &str| -> Result<Vec<String>, Rejection> {
        let arr = v
            .get(key)
            .and_then(Value::as_array)
            .ok_or_else(|| Rejection::parse("attributes", format!("{scope}: \"{key}\" must be an array")))?;
        arr.iter()
            .map(|x| {
                x.as_str()
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| {
                        Rejection::parse(
                            "attributes",
                            format!("{scope}: \"{key}\" entries must be non-empty strings"),
                        )
                    })
            })
            .collect()
    };
    let detailed = list("detailed")?;
    let concise = list("concise")?;
    if detailed.len() != concise.len() {
        return Err(Rejection::new(
            vec![format!(
                "{scope}: {} detailed attributes but {} concise summaries; every detailed attribute needs exactly one concise summary in the same order",
                detailed.len(),
                concise.len()
            )],
            StageError::ParallelArrayMismatch(scope.to_string()),
        ));
    }
    let mut seen = BTreeSet::new();
    for c in &concise {
        if !seen.insert(c.to_lowercase()) {
            return Err(Rejection::parse(
                "attributes",
                format!("{scope}: concise summary {c:?} is used twice"),
            ));
        }
    }
    Ok(detailed.into_iter().zip(concise).collect())
}

/// Fills `grid` from `{detailed text: [{example_id, quote, explanation, classification}]}`.
fn fill_attribute_grid(grid: &mut CellGrid, evidence: Option<&Value>, attributes: &[Attribute]) {
    let Some(evidence) = evidence.and_then(Value::as_object) else {
        return;
    };
    for (detailed, entries) in evidence {
        let attr = attributes
            .iter()
            .find(|a| a.detailed == detailed.trim())
            .or_else(|| attributes.iter().find(|a| same_name(&a.detailed, detailed)));
        let Some(attr) = attr else {
            grid.warnings
                .push(format!("ignored evidence for unknown attribute {detailed:?}"));
            continue;
        };
        for entry in entries.as_array().map(Vec::as_slice).unwrap_or_default() {
            let Some(row) = entry.get("example_id").and_then(|v| grid.row(v)) else {
                continue;
            };
            match judgment(entry, "classification") {
                Ok(j) => grid.put(
                    row,
                    ColumnId::from(&attr.id),
                    EvidenceCell::judged(
                        j,
                        str_field(entry, "explanation").unwrap_or_default(),
                        str_field(entry, "quote").map(str::to_string),
                    ),
                ),
                Err(e) => grid.problems.push(format!("Example {row}, {:?}: {e}", attr.concise)),
            }
        }
    }
}

fn attribute_describer(attributes: &[Attribute]) -> impl Fn(&str) -> String + '_ {
    move |c: &str| {
        let a = attributes.iter().find(|a| a.id.as_str() == c);
        format!("attribute {:?}", a.map(|a| a.detailed.as_str()).unwrap_or(c))
    }
}

fn dimensions_text(dimensions: &[Dimension]) -> String {
    dimensions
        .iter()
        .map(|d| format!("\n- {}: {}", d.name, d.description))
        .collect()
}

/// Infers attributes under every dimension. Attribute ids continue from
/// `first_ordinal`. Attributes below the support threshold are dropped in
/// strict mode and only flagged otherwise.
pub fn infer_dimension_attributes(
    cluster: &Cluster,
    set: &ExampleSet,
    dimensions: &[Dimension],
    gateway: &Gateway,
    strict: bool,
    first_ordinal: usize,
) -> Result<AttributesOutcome, StageError> {
    if dimensions.is_empty() {
        return Err(StageError::Precondition("at least one dimension is required".into()));
    }
    let examples: Vec<&Example> = members(set, &cluster.member_ids)?;
    let prompt = render(
        TemplateId::DimensionAttributes,
        &[
            ("user_goal", set.goal.clone()),
            ("cluster_name", cluster.name.clone()),
            ("examples_full_text", example_blocks(&examples)),
            ("input_context", input_context_block(&examples)),
            ("dimensions_text", dimensions_text(dimensions)),
            ("example_ids_text", id_list(&examples)),
        ],
    )?;
    let (mut attributes, mut matrices, mut warnings) = ask_with_correction(
        gateway,
        TemplateId::DimensionAttributes.as_str(),
        &prompt,
        &ResponseFormat::object(&["dimensions", "attributes_examples"]),
        |completion| {
            parse_dimension_attributes(
                completion.object().expect("structured"),
                cluster,
                dimensions,
                first_ordinal,
            )
        },
    )?;
    let examples_by_id = example_map(set);
    let mut report = VerificationReport::default();
    let mut support = Vec::new();
    for dim in dimensions {
        let (Some(attrs), Some(matrix)) = (attributes.get_mut(&dim.id), matrices.get_mut(&dim.id)) else {
            continue;
        };
        if strict {
            downgrade_unquoted_yes(matrix);
        }
        let (verified, r) = verify_matrix(matrix, &examples_by_id, strict, &NormalizationPolicy::default())?;
        *matrix = verified;
        report.merge(&r);
        let mut kept = Vec::with_capacity(attrs.len());
        for attr in attrs.drain(..) {
            let col = ColumnId::from(&attr.id);
            let s = check_support(&matrix.column(&col), DEFAULT_SUPPORT_THRESHOLD);
            let dropped = strict && !s.passes;
            if dropped {
                tracing::info!(dimension = %dim.name, attribute = %attr.concise, support = s.support, "dropping attribute below support threshold");
                warnings.push(format!(
                    "dropped {}/{:?}: support {:.2} below {DEFAULT_SUPPORT_THRESHOLD}",
                    dim.name, attr.concise, s.support
                ));
                matrix.drop_column(&col);
            } else if !s.passes {
                warnings.push(format!(
                    "{}/{:?} has support {:.2}, below {DEFAULT_SUPPORT_THRESHOLD}",
                    dim.name, attr.concise, s.support
                ));
            }
            support.push(SupportFinding {
                scope: dim.name.clone(),
                attribute: attr.id.clone(),
                concise: attr.concise.clone(),
                support: s.support,
                passes: s.passes,
                dropped,
            });
            if !dropped {
                kept.push(attr);
            }
        }
        *attrs = kept;
    }
    Ok(AttributesOutcome {
        attributes,
        matrices,
        report,
        support,
        warnings,
    })
}

type ParsedAttributes = (
    BTreeMap<DimensionId, Vec<Attribute>>,
    BTreeMap<DimensionId, EvidenceMatrix>,
    Vec<String>,
);

fn parse_dimension_attributes(
    obj: &Map<String, Value>,
    cluster: &Cluster,
    dimensions: &[Dimension],
    first_ordinal: usize,
) -> Result<ParsedAttributes, Rejection> {
    let Some(defs) = obj.get("dimensions").and_then(Value::as_object) else {
        return Err(Rejection::parse(
            "attributes",
            "\"dimensions\" must be an object keyed by dimension name",
        ));
    };
    let evidence = obj.get("attributes_examples").and_then(Value::as_object);
    let mut warnings = Vec::new();
    let mut attributes: BTreeMap<DimensionId, Vec<Attribute>> = BTreeMap::new();
    let mut next = first_ordinal;
    for (name, v) in defs {
        let Some(dim) = dimensions.iter().find(|d| same_name(&d.name, name)) else {
            warnings.push(format!("ignored attributes for unknown dimension {name:?}"));
            continue;
        };
        if attributes.contains_key(&dim.id) {
            return Err(Rejection::parse(
                "attributes",
                format!("dimension {name:?} appears twice"),
            ));
        }
        let pairs = parallel_lists(v, &dim.name)?;
        let attrs = pairs
            .into_iter()
            .map(|(detailed, concise)| {
                let id = AttributeId(format!("a{next}"));
                next += 1;
                Attribute {
                    id,
                    detailed,
                    concise,
                    scope: AttributeScope::Dimension(dim.id.clone()),
                }
            })
            .collect();
        attributes.insert(dim.id.clone(), attrs);
    }
    let mut matrices = BTreeMap::new();
    let mut missing_all = Vec::new();
    let mut problems = Vec::new();
    for dim in dimensions {
        let attrs = attributes.entry(dim.id.clone()).or_insert_with(|| {
            warnings.push(format!("no attributes were given for dimension {:?}", dim.name));
            Vec::new()
        });
        let cols = attrs.iter().map(|a| ColumnId::from(&a.id)).collect();
        let mut grid = CellGrid::new(cluster.member_ids.clone(), cols);
        let dim_evidence = evidence.and_then(|e| e.iter().find(|(k, _)| same_name(k, &dim.name)).map(|(_, v)| v));
        fill_attribute_grid(&mut grid, dim_evidence, attrs);
        match grid.finish(&format!("attributes/{}", dim.name), attribute_describer(attrs)) {
            Ok((m, w)) => {
                warnings.extend(w);
                matrices.insert(dim.id.clone(), m);
            }
            Err(r) => {
                if let StageError::IncompleteMatrix { missing, .. } = r.error {
                    missing_all.extend(missing);
                }
                problems.extend(r.problems);
            }
        }
    }
    if !missing_all.is_empty() {
        return Err(Rejection::new(
            problems,
            StageError::IncompleteMatrix {
                matrix: format!("attributes/{}", cluster.name),
                missing: missing_all,
            },
        ));
    }
    Ok((attributes, matrices, warnings))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverallOutcome {
    pub attributes: Vec<Attribute>,
    pub matrix: EvidenceMatrix,
    pub report: VerificationReport,
    pub support: Vec<SupportFinding>,
    pub warnings: Vec<String>,
}

const LENGTH_FORMAT_WORDS: [&str; 6] = ["word", "length", "count", "format", "paragraph", "sentence"];
const ORGANIZATION_WORDS: [&str; 5] = ["order", "sequence", "organization", "structure", "flow"];

/// Warnings for an overall attribute set lacking a length/format entry or
/// an organization entry, judged by keywords in either text.
pub fn overall_category_warnings(attributes: &[Attribute]) -> Vec<String> {
    let matches = |words: &[&str]| {
        attributes.iter().any(|a| {
            let text = format!("{} {}", a.detailed, a.concise).to_lowercase();
            words.iter().any(|w| text.contains(w))
        })
    };
    let mut out = Vec::new();
    if !matches(&LENGTH_FORMAT_WORDS) {
        out.push("no overall attribute appears to cover length or format".to_string());
    }
    if !matches(&ORGANIZATION_WORDS) {
        out.push("no overall attribute appears to cover organization".to_string());
    }
    out
}

/// Infers cluster-wide attributes. Support is reported but never drops
/// an overall attribute.
pub fn infer_overall_attributes(
    cluster: &Cluster,
    set: &ExampleSet,
    gateway: &Gateway,
    strict: bool,
    first_ordinal: usize,
) -> Result<OverallOutcome, StageError> {
    let examples: Vec<&Example> = members(set, &cluster.member_ids)?;
    if examples.is_empty() {
        return Err(StageError::Precondition(format!(
            "cluster {} has no members",
            cluster.id
        )));
    }
    let prompt = render(
        TemplateId::OverallAttributes,
        &[
            ("user_goal", set.goal.clone()),
            ("examples_full_text", example_blocks(&examples)),
            ("input_context", input_context_block(&examples)),
            ("example_ids_text", id_list(&examples)),
        ],
    )?;
    let (attributes, mut matrix, mut warnings) = ask_with_correction(
        gateway,
        TemplateId::OverallAttributes.as_str(),
        &prompt,
        &ResponseFormat::object(&["overall_attributes", "overall_attributes_examples"]),
        |completion| {
            let obj = completion.object().expect("structured");
            let defs = obj.get("overall_attributes").cloned().unwrap_or(Value::Null);
            let pairs = parallel_lists(&defs, "Overall")?;
            let attrs: Vec<Attribute> = pairs
                .into_iter()
                .enumerate()
                .map(|(i, (detailed, concise))| Attribute {
                    id: AttributeId(format!("a{}", first_ordinal + i)),
                    detailed,
                    concise,
                    scope: AttributeScope::Overall,
                })
                .collect();
            let cols = attrs.iter().map(|a| ColumnId::from(&a.id)).collect();
            let mut grid = CellGrid::new(cluster.member_ids.clone(), cols);
            fill_attribute_grid(&mut grid, obj.get("overall_attributes_examples"), &attrs);
            let (m, w) = grid.finish(&format!("overall/{}", cluster.name), attribute_describer(&attrs))?;
            Ok((attrs, m, w))
        },
    )?;
    for w in overall_category_warnings(&attributes) {
        tracing::warn!(cluster = %cluster.name, "{w}");
        warnings.push(w);
    }
    if strict {
        downgrade_unquoted_yes(&mut matrix);
    }
    let (matrix, report) = verify_matrix(&matrix, &example_map(set), strict, &NormalizationPolicy::default())?;
    let support = attributes
        .iter()
        .map(|a| {
            let s = check_support(&matrix.column(&ColumnId::from(&a.id)), DEFAULT_SUPPORT_THRESHOLD);
            SupportFinding {
                scope: "Overall".to_string(),
                attribute: a.id.clone(),
                concise: a.concise.clone(),
                support: s.support,
                passes: s.passes,
                dropped: false,
            }
        })
        .collect();
    Ok(OverallOutcome {
        attributes,
        matrix,
        report,
        support,
        warnings,
    })
}

/// Validated stage-2 outputs for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaParts {
    pub dimensions: Vec<Dimension>,
    pub dimension_matrix: EvidenceMatrix,
    pub attributes: BTreeMap<DimensionId, Vec<Attribute>>,
    pub attribute_matrices: BTreeMap<DimensionId, EvidenceMatrix>,
    pub overall_attributes: Vec<Attribute>,
    pub overall_matrix: EvidenceMatrix,
}

/// Builds the revision-0 schema, checking that every matrix column
/// resolves to a live dimension or attribute.
pub fn assemble_schema(cluster: &Cluster, parts: SchemaParts) -> Result<Schema, StageError> {
    let SchemaParts {
        mut dimensions,
        dimension_matrix,
        mut attributes,
        mut attribute_matrices,
        overall_attributes,
        overall_matrix,
    } = parts;
    let dim_ids: BTreeSet<&DimensionId> = dimensions.iter().map(|d| &d.id).collect();
    for key in attributes.keys().chain(attribute_matrices.keys()) {
        if !dim_ids.contains(key) {
            return Err(StageError::DanglingColumn(key.to_string()));
        }
    }
    let dim_cols: BTreeSet<ColumnId> = dimensions.iter().map(|d| ColumnId::from(&d.id)).collect();
    for c in dimension_matrix.column_ids() {
        if !dim_cols.contains(c) {
            return Err(StageError::DanglingColumn(c.to_string()));
        }
    }
    for dim in &mut dimensions {
        dim.attributes = attributes.remove(&dim.id).unwrap_or_default();
        let live: BTreeSet<ColumnId> = dim.attributes.iter().map(|a| ColumnId::from(&a.id)).collect();
        let matrix = attribute_matrices
            .entry(dim.id.clone())
            .or_insert_with(|| EvidenceMatrix::unchecked(cluster.member_ids.clone(), Vec::new()));
        for c in matrix.column_ids() {
            if !live.contains(c) {
                return Err(StageError::DanglingColumn(c.to_string()));
            }
        }
    }
    let overall_live: BTreeSet<ColumnId> = overall_attributes.iter().map(|a| ColumnId::from(&a.id)).collect();
    for c in overall_matrix.column_ids() {
        if !overall_live.contains(c) {
            return Err(StageError::DanglingColumn(c.to_string()));
        }
    }
    for m in std::iter::once(&dimension_matrix)
        .chain(attribute_matrices.values())
        .chain(std::iter::once(&overall_matrix))
    {
        if m.row_ids() != cluster.member_ids.as_slice() {
            return Err(StageError::StructureMismatch(
                "matrix rows differ from the cluster members".into(),
            ));
        }
    }
    let schema = Schema {
        id: Schema::schema_id(&cluster.id, 0),
        cluster_id: cluster.id.clone(),
        revision: 0,
        parent: None,
        dimensions,
        overall_attributes,
        dimension_matrix,
        attribute_matrices,
        overall_matrix,
    };
    let problems = schema.check_structure();
    if !problems.is_empty() {
        return Err(StageError::StructureMismatch(problems.join("; ")));
    }
    Ok(schema)
}

/// Runs the three inference calls for one cluster and assembles the result.
pub fn induce_schema(
    cluster: &Cluster,
    set: &ExampleSet,
    gateway: &Gateway,
    strict: bool,
) -> Result<InducedSchema, StageError> {
    let dims = infer_dimensions(cluster, set, gateway, strict)?;
    let attrs = infer_dimension_attributes(cluster, set, &dims.dimensions, gateway, strict, 1)?;
    let next = attrs.next_ordinal(1);
    let overall = infer_overall_attributes(cluster, set, gateway, strict, next)?;
    let mut report = dims.report.clone();
    report.merge(&attrs.report);
    report.merge(&overall.report);
    let mut warnings = dims.warnings.clone();
    warnings.extend(attrs.warnings.iter().cloned());
    warnings.extend(overall.warnings.iter().cloned());
    let mut support = attrs.support.clone();
    support.extend(overall.support.iter().cloned());
    let reports = vec![
        ("dimensions".to_string(), dims.report.clone()),
        ("attributes".to_string(), attrs.report.clone()),
        ("overall".to_string(), overall.report.clone()),
    ];
    let schema = assemble_schema(
        cluster,
        SchemaParts {
            dimensions: dims.dimensions,
            dimension_matrix: dims.matrix,
            attributes: attrs.attributes,
            attribute_matrices: attrs.matrices,
            overall_attributes: overall.attributes,
            overall_matrix: overall.matrix,
        },
    )?;
    Ok(InducedSchema {
        schema,
        reports,
        support,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InducedSchema {
    pub schema: Schema,
    /// Verification report per inference call.
    pub reports: Vec<(String, VerificationReport)>,
    pub support: Vec<SupportFinding>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemaEdit {
    /// `scope` is `Overall` or a dimension id or name.
    RenameAttribute {
        scope: String,
        concise: String,
        new_concise: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        new_detailed: Option<String>,
    },
    AddAttribute {
        scope: String,
        detailed: String,
        concise: String,
    },
    RemoveAttribute {
        scope: String,
        concise: String,
    },
    RenameDimension {
        dimension: String,
        name: String,
    },
    RemoveDimension {
        dimension: String,
    },
}

fn dimension_index(schema: &Schema, reference: &str) -> Result<usize, StageError> {
    schema
        .dimensions
        .iter()
        .position(|d| d.id.as_str() == reference)
        .or_else(|| schema.dimensions.iter().position(|d| same_name(&d.name, reference)))
        .ok_or_else(|| StageError::UnknownTarget(reference.to_string()))
}

/// The attribute list and matrix an edit scope refers to.
fn scope_mut<'a>(
    schema: &'a mut Schema,
    scope: &str,
) -> Result<(&'a mut Vec<Attribute>, &'a mut EvidenceMatrix, AttributeScope), StageError> {
    if same_name(scope, "Overall") {
        return Ok((
            &mut schema.overall_attributes,
            &mut schema.overall_matrix,
            AttributeScope::Overall,
        ));
    }
    let i = dimension_index(schema, scope)?;
    let dim = &mut schema.dimensions[i];
    let matrix = schema
        .attribute_matrices
        .get_mut(&dim.id)
        .ok_or_else(|| StageError::UnknownTarget(scope.to_string()))?;
    Ok((&mut dim.attributes, matrix, AttributeScope::Dimension(dim.id.clone())))
}

/// Applies one edit to a working copy of the schema (revision unchanged).
pub fn apply_schema_edit(schema: &Schema, edit: &SchemaEdit) -> Result<Schema, StageError> {
    let mut out = schema.clone();
    let next_ordinal = schema.next_attribute_ordinal();
    match edit {
        SchemaEdit::RenameAttribute {
            scope,
            concise,
            new_concise,
            new_detailed,
        } => {
            let new_concise = new_concise.trim();
            if new_concise.is_empty() {
                return Err(StageError::Precondition("concise label must not be empty".into()));
            }
            let (attrs, matrix, _) = scope_mut(&mut out, scope)?;
            let i = attrs
                .iter()
                .position(|a| same_name(&a.concise, concise))
                .ok_or_else(|| StageError::UnknownTarget(format!("{scope}/{concise}")))?;
            if attrs
                .iter()
                .enumerate()
                .any(|(j, a)| j != i && same_name(&a.concise, new_concise))
            {
                return Err(StageError::DuplicateConcise(new_concise.to_string()));
            }
            attrs[i].concise = new_concise.to_string();
            if let Some(d) = new_detailed.as_deref().map(str::trim).filter(|d| !d.is_empty()) {
                if d != attrs[i].detailed {
                    attrs[i].detailed = d.to_string();
                    matrix.reset_column(&ColumnId::from(&attrs[i].id));
                }
            }
        }
        SchemaEdit::AddAttribute {
            scope,
            detailed,
            concise,
        } => {
            let (detailed, concise) = (detailed.trim(), concise.trim());
            if detailed.is_empty() || concise.is_empty() {
                return Err(StageError::Precondition("attribute texts must not be empty".into()));
            }
            let (attrs, matrix, scope) = scope_mut(&mut out, scope)?;
            if attrs.iter().any(|a| same_name(&a.concise, concise)) {
                return Err(StageError::DuplicateConcise(concise.to_string()));
            }
            let id = AttributeId(format!("a{next_ordinal}"));
            matrix.push_unchecked_column(ColumnId::from(&id));
            attrs.push(Attribute {
                id,
                detailed: detailed.to_string(),
                concise: concise.to_string(),
                scope,
            });
        }
        SchemaEdit::RemoveAttribute { scope, concise } => {
            let (attrs, matrix, _) = scope_mut(&mut out, scope)?;
            let i = attrs
                .iter()
                .position(|a| same_name(&a.concise, concise))
                .ok_or_else(|| StageError::UnknownTarget(format!("{scope}/{concise}")))?;
            let removed = attrs.remove(i);
            matrix.drop_column(&ColumnId::from(&removed.id));
        }
        SchemaEdit::RenameDimension { dimension, name } => {
            let name = name.trim();
            if name.is_empty() {
                return Err(StageError::Precondition("dimension name must not be empty".into()));
            }
            let i = dimension_index(&out, dimension)?;
            if out
                .dimensions
                .iter()
                .enumerate()
                .any(|(j, d)| j != i && same_name(&d.name, name))
            {
                return Err(StageError::DuplicateName(name.to_string()));
            }
            out.dimensions[i].name = name.to_string();
        }
        SchemaEdit::RemoveDimension { dimension } => {
            let i = dimension_index(&out, dimension)?;
            let removed = out.dimensions.remove(i);
            out.attribute_matrices.remove(&removed.id);
            out.dimension_matrix.drop_column(&ColumnId::from(&removed.id));
        }
    }
    Ok(out)
}

/// Ids of clusters with a schema, for callers that track them by cluster.
pub fn schema_cluster(schema: &Schema) -> &ClusterId {
    &schema.cluster_id
}
