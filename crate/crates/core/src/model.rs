//! Domain types shared by every pipeline stage.
//!
//! All values are immutable once constructed; stages produce new values
//! (a new `Clustering`, a new `Schema` revision) instead of mutating in place.
//! Every type serializes to a stable JSON shape which doubles as the session
//! file vocabulary.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(
    /// Engine-assigned example identifier (`e1`, `e2`, ...).
    ExampleId
);
string_id!(ClusterId);
string_id!(DimensionId);
string_id!(AttributeId);
string_id!(
    /// Column identifier of an evidence matrix: a feature (`F1`), a
    /// dimension id or an attribute id.
    ColumnId
);
string_id!(SchemaId);
string_id!(RecordId);
string_id!(SuggestionId);

impl From<&DimensionId> for ColumnId {
    fn from(id: &DimensionId) -> Self {
        ColumnId(id.0.clone())
    }
}

impl From<&AttributeId> for ColumnId {
    fn from(id: &AttributeId) -> Self {
        ColumnId(id.0.clone())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("goal must not be empty")]
    EmptyGoal,
    #[error("example set must contain at least one example")]
    NoExamples,
    #[error("duplicate example id {0}")]
    DuplicateId(ExampleId),
    #[error("example {0} has empty content")]
    EmptyContent(ExampleId),
    #[error("example {0} is marked derived but has text modality")]
    DerivedText(ExampleId),
    #[error("holdout ratio {0} outside (0, 0.5)")]
    RatioOutOfRange(f64),
    #[error("holdout id {0} is not part of the example set")]
    UnknownHoldout(ExampleId),
    #[error("schemas belong to different clusters ({0} vs {1})")]
    ClusterMismatch(ClusterId, ClusterId),
    #[error("evidence matrix is missing {0} cell(s)")]
    IncompleteMatrix(usize),
    #[error("evidence matrix cell ({0}, {1}) is outside the matrix axes")]
    DanglingCell(ExampleId, ColumnId),
    #[error("evidence matrix axis contains duplicate id {0}")]
    DuplicateAxis(String),
    #[error("unknown judgment {0:?}; expected Yes, Partial or No")]
    BadJudgment(String),
    #[error("unknown improvement tag in {0:?}")]
    BadTag(String),
}

/// Media kind of an example's original artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
    Video,
    Audio,
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            "video" => Ok(Modality::Video),
            "audio" => Ok(Modality::Audio),
            other => Err(format!("unknown modality {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: ExampleId,
    /// Unified textual representation. For media this is the generated description.
    pub content: String,
    /// The paired input (e.g. a paper title) used when the schema is applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_context: Option<String>,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_uri: Option<String>,
    #[serde(default)]
    pub derived: bool,
}

impl Example {
    pub fn text(id: impl Into<ExampleId>, content: impl Into<String>) -> Self {
        Example {
            id: id.into(),
            content: content.into(),
            input_context: None,
            modality: Modality::Text,
            source_uri: None,
            derived: false,
        }
    }

    pub fn with_input_context(mut self, context: impl Into<String>) -> Self {
        self.input_context = Some(context.into());
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.content.trim().is_empty() {
            return Err(ModelError::EmptyContent(self.id.clone()));
        }
        if self.derived && self.modality == Modality::Text {
            return Err(ModelError::DerivedText(self.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub goal: String,
    pub examples: Vec<Example>,
    /// Kept in example order.
    #[serde(default)]
    pub holdout_ids: Vec<ExampleId>,
}

/// Result of [`split_validation`]: the updated set plus any warning raised.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutSplit {
    pub set: ExampleSet,
    pub warning: Option<String>,
}

/// Sets smaller than this keep every example for induction.
pub const MIN_EXAMPLES_FOR_HOLDOUT: usize = 5;
pub const DEFAULT_HOLDOUT_RATIO: f64 = 0.2;

/// Builds an example set, checking goal, emptiness and id uniqueness.
pub fn new_example_set(goal: impl Into<String>, examples: Vec<Example>) -> Result<ExampleSet, ModelError> {
    let goal = goal.into();
    if goal.trim().is_empty() {
        return Err(ModelError::EmptyGoal);
    }
    if examples.is_empty() {
        return Err(ModelError::NoExamples);
    }
    let mut seen = BTreeSet::new();
    for example in &examples {
        if !seen.insert(example.id.clone()) {
            return Err(ModelError::DuplicateId(example.id.clone()));
        }
        example.validate()?;
    }
    Ok(ExampleSet {
        goal,
        examples,
        holdout_ids: Vec::new(),
    })
}

/// Withholds `max(1, floor(ratio * n))` examples chosen by a seeded shuffle.
///
/// Sets with fewer than [`MIN_EXAMPLES_FOR_HOLDOUT`] examples get no holdout
/// and a warning instead.
pub fn split_validation(set: &ExampleSet, ratio: f64, seed: u64) -> Result<HoldoutSplit, ModelError> {
    if !(ratio > 0.0 && ratio < 0.5) {
        return Err(ModelError::RatioOutOfRange(ratio));
    }
    let n = set.examples.len();
    let mut out = set.clone();
    if n < MIN_EXAMPLES_FOR_HOLDOUT {
        out.holdout_ids.clear();
        return Ok(HoldoutSplit {
            set: out,
            warning: Some(format!(
                "only {n} example(s); no validation holdout below {MIN_EXAMPLES_FOR_HOLDOUT}"
            )),
        });
    }
    let size = ((ratio * n as f64).floor() as usize).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let chosen: BTreeSet<usize> = order.into_iter().take(size).collect();
    out.holdout_ids = chosen.into_iter().map(|i| set.examples[i].id.clone()).collect();
    Ok(HoldoutSplit {
        set: out,
        warning: None,
    })
}

impl ExampleSet {
    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id.as_str() == id)
    }

    pub fn is_holdout(&self, id: &str) -> bool {
        self.holdout_ids.iter().any(|h| h.as_str() == id)
    }

    /// Examples available for induction, in set order.
    pub fn induction_examples(&self) -> impl Iterator<Item = &Example> {
        self.examples.iter().filter(|e| !self.is_holdout(e.id.as_str()))
    }

    pub fn induction_ids(&self) -> Vec<ExampleId> {
        self.induction_examples().map(|e| e.id.clone()).collect()
    }

    pub fn holdout_examples(&self) -> impl Iterator<Item = &Example> {
        self.examples.iter().filter(|e| self.is_holdout(e.id.as_str()))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.goal.trim().is_empty() {
            return Err(ModelError::EmptyGoal);
        }
        if self.examples.is_empty() {
            return Err(ModelError::NoExamples);
        }
        let mut seen = BTreeSet::new();
        for example in &self.examples {
            if !seen.insert(example.id.as_str()) {
                return Err(ModelError::DuplicateId(example.id.clone()));
            }
            example.validate()?;
        }
        for id in &self.holdout_ids {
            if !seen.contains(id.as_str()) {
                return Err(ModelError::UnknownHoldout(id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Judgment {
    Yes,
    Partial,
    No,
}

impl Judgment {
    /// Yes and Partial both count as the feature being present.
    pub fn is_present(self) -> bool {
        !matches!(self, Judgment::No)
    }
}

impl FromStr for Judgment {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("yes") {
            Ok(Judgment::Yes)
        } else if s.eq_ignore_ascii_case("partial") {
            Ok(Judgment::Partial)
        } else if s.eq_ignore_ascii_case("no") {
            Ok(Judgment::No)
        } else {
            Err(ModelError::BadJudgment(s.to_string()))
        }
    }
}

impl fmt::Display for Judgment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Judgment::Yes => "Yes",
            Judgment::Partial => "Partial",
            Judgment::No => "No",
        })
    }
}

/// Half-open range of character (not byte) offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Verification {
    #[default]
    Unchecked,
    Verified,
    Unverifiable,
}

/// One (example, column) judgment.
///
/// `judgment` is `None` only for cells of a column that was added by an edit
/// and has not been evaluated yet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceCell {
    pub judgment: Option<Judgment>,
    #[serde(default)]
    pub explanation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snippet: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verified_span: Option<Span>,
    #[serde(default)]
    pub verification: Verification,
}

impl EvidenceCell {
    /// Builds a judged cell. Snippets on `No` cells and blank snippets are dropped.
    pub fn judged(judgment: Judgment, explanation: impl Into<String>, snippet: Option<String>) -> Self {
        let snippet = snippet.filter(|s| !s.trim().is_empty() && judgment != Judgment::No);
        EvidenceCell {
            judgment: Some(judgment),
            explanation: explanation.into(),
            snippet,
            verified_span: None,
            verification: Verification::Unchecked,
        }
    }

    pub fn unchecked() -> Self {
        EvidenceCell {
            judgment: None,
            explanation: String::new(),
            snippet: None,
            verified_span: None,
            verification: Verification::Unchecked,
        }
    }
}

/// Complete grid of judgments: rows are examples, columns are features,
/// dimensions or attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct EvidenceMatrix {
    row_ids: Vec<ExampleId>,
    column_ids: Vec<ColumnId>,
    cells: BTreeMap<(ExampleId, ColumnId), EvidenceCell>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    row_ids: Vec<ExampleId>,
    column_ids: Vec<ColumnId>,
    cells: Vec<CellRepr>,
}

#[derive(Serialize, Deserialize)]
struct CellRepr {
    row: ExampleId,
    column: ColumnId,
    #[serde(flatten)]
    cell: EvidenceCell,
}

impl TryFrom<MatrixRepr> for EvidenceMatrix {
    type Error = ModelError;

    fn try_from(repr: MatrixRepr) -> Result<Self, Self::Error> {
        let cells = repr.cells.into_iter().map(|c| ((c.row, c.column), c.cell)).collect();
        EvidenceMatrix::new(repr.row_ids, repr.column_ids, cells)
    }
}

impl From<EvidenceMatrix> for MatrixRepr {
    fn from(mut m: EvidenceMatrix) -> Self {
        let mut cells = Vec::with_capacity(m.cells.len());
        for row in &m.row_ids {
            for column in &m.column_ids {
                if let Some(cell) = m.cells.remove(&(row.clone(), column.clone())) {
                    cells.push(CellRepr {
                        row: row.clone(),
                        column: column.clone(),
                        cell,
                    });
                }
            }
        }
        MatrixRepr {
            row_ids: m.row_ids,
            column_ids: m.column_ids,
            cells,
        }
    }
}

impl EvidenceMatrix {
    /// Builds a matrix, rejecting duplicate axis ids, dangling cells and missing cells.
    pub fn new(
        row_ids: Vec<ExampleId>,
        column_ids: Vec<ColumnId>,
        cells: BTreeMap<(ExampleId, ColumnId), EvidenceCell>,
    ) -> Result<Self, ModelError> {
        let rows: BTreeSet<&ExampleId> = row_ids.iter().collect();
        if rows.len() != row_ids.len() {
            let dup = first_duplicate(row_ids.iter().map(|r| r.as_str()));
            return Err(ModelError::DuplicateAxis(dup));
        }
        let cols: BTreeSet<&ColumnId> = column_ids.iter().collect();
        if cols.len() != column_ids.len() {
            let dup = first_duplicate(column_ids.iter().map(|c| c.as_str()));
            return Err(ModelError::DuplicateAxis(dup));
        }
        for (row, col) in cells.keys() {
            if !rows.contains(row) || !cols.contains(col) {
                return Err(ModelError::DanglingCell(row.clone(), col.clone()));
            }
        }
        let expected = row_ids.len() * column_ids.len();
        if cells.len() != expected {
            return Err(ModelError::IncompleteMatrix(expected - cells.len()));
        }
        Ok(EvidenceMatrix {
            row_ids,
            column_ids,
            cells,
        })
    }

    /// A matrix whose every cell is unchecked.
    pub fn unchecked(row_ids: Vec<ExampleId>, column_ids: Vec<ColumnId>) -> Self {
        let mut cells = BTreeMap::new();
        for r in &row_ids {
            for c in &column_ids {
                cells.insert((r.clone(), c.clone()), EvidenceCell::unchecked());
            }
        }
        EvidenceMatrix {
            row_ids,
            column_ids,
            cells,
        }
    }

    pub fn row_ids(&self) -> &[ExampleId] {
        &self.row_ids
    }

    pub fn column_ids(&self) -> &[ColumnId] {
        &self.column_ids
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, row: &ExampleId, column: &ColumnId) -> Option<&EvidenceCell> {
        self.cells.get(&(row.clone(), column.clone()))
    }

    pub fn cells(&self) -> impl Iterator<Item = (&ExampleId, &ColumnId, &EvidenceCell)> {
        self.cells.iter().map(|((r, c), cell)| (r, c, cell))
    }

    pub fn cells_mut(&mut self) -> impl Iterator<Item = (&ExampleId, &ColumnId, &mut EvidenceCell)> {
        self.cells.iter_mut().map(|((r, c), cell)| (r, c, cell))
    }

    /// Cells of one column in row order.
    pub fn column(&self, column: &ColumnId) -> Vec<&EvidenceCell> {
        self.row_ids
            .iter()
            .filter_map(|r| self.cells.get(&(r.clone(), column.clone())))
            .collect()
    }

    pub fn has_column(&self, column: &ColumnId) -> bool {
        self.column_ids.contains(column)
    }

    pub fn drop_column(&mut self, column: &ColumnId) {
        self.column_ids.retain(|c| c != column);
        self.cells.retain(|(_, c), _| c != column);
    }

    /// Appends a column of unchecked cells.
    pub fn push_unchecked_column(&mut self, column: ColumnId) {
        if self.has_column(&column) {
            return;
        }
        for r in &self.row_ids {
            self.cells
                .insert((r.clone(), column.clone()), EvidenceCell::unchecked());
        }
        self.column_ids.push(column);
    }

    /// Resets an existing column to unchecked cells.
    pub fn reset_column(&mut self, column: &ColumnId) {
        for r in &self.row_ids {
            if let Some(cell) = self.cells.get_mut(&(r.clone(), column.clone())) {
                *cell = EvidenceCell::unchecked();
            }
        }
    }

    pub fn is_complete(&self) -> bool {
        self.cells.len() == self.row_ids.len() * self.column_ids.len()
    }
}

fn first_duplicate<'a>(ids: impl Iterator<Item = &'a str>) -> String {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return id.to_string();
        }
    }
    String::new()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: ClusterId,
    pub name: String,
    pub common_features: Vec<String>,
    pub member_ids: Vec<ExampleId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_matrix: Option<EvidenceMatrix>,
}

impl Cluster {
    /// Column ids of the feature matrix: `F1..Fk`.
    pub fn feature_ids(&self) -> Vec<ColumnId> {
        (1..=self.common_features.len())
            .map(|i| ColumnId(format!("F{i}")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    pub clusters: Vec<Cluster>,
    /// The non-holdout example ids this clustering partitions.
    pub over: Vec<ExampleId>,
}

impl Clustering {
    pub fn cluster(&self, id: &str) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.id.as_str() == id)
    }

    pub fn cluster_by_name(&self, name: &str) -> Option<&Cluster> {
        self.clusters
            .iter()
            .find(|c| c.name.trim().eq_ignore_ascii_case(name.trim()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "dimension", rename_all = "snake_case")]
pub enum AttributeScope {
    Dimension(DimensionId),
    Overall,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub id: AttributeId,
    /// One-sentence description.
    pub detailed: String,
    /// 1-2 word label.
    pub concise: String,
    pub scope: AttributeScope,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub id: DimensionId,
    pub name: String,
    pub description: String,
    pub attributes: Vec<Attribute>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub id: SchemaId,
    pub cluster_id: ClusterId,
    pub revision: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<SchemaId>,
    pub dimensions: Vec<Dimension>,
    pub overall_attributes: Vec<Attribute>,
    pub dimension_matrix: EvidenceMatrix,
    pub attribute_matrices: BTreeMap<DimensionId, EvidenceMatrix>,
    pub overall_matrix: EvidenceMatrix,
}

impl Schema {
    pub fn schema_id(cluster: &ClusterId, revision: u32) -> SchemaId {
        SchemaId(format!("{cluster}-r{revision}"))
    }

    pub fn dimension(&self, id: &str) -> Option<&Dimension> {
        self.dimensions.iter().find(|d| d.id.as_str() == id)
    }

    pub fn dimension_by_name(&self, name: &str) -> Option<&Dimension> {
        self.dimensions
            .iter()
            .find(|d| d.name.trim().eq_ignore_ascii_case(name.trim()))
    }

    /// Checks the schema's structural invariants: unique dimension names,
    /// unique concise labels per scope, attribute scopes, and matrix column
    /// resolution in both directions.
    pub fn check_structure(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut names = BTreeSet::new();
        let mut attribute_ids = BTreeSet::new();
        for dim in &self.dimensions {
            if !names.insert(dim.name.trim().to_lowercase()) {
                problems.push(format!("duplicate dimension name {:?}", dim.name));
            }
            let mut labels = BTreeSet::new();
            for attr in &dim.attributes {
                if attr.scope != AttributeScope::Dimension(dim.id.clone()) {
                    problems.push(format!("attribute {} has the wrong scope", attr.id));
                }
                if !labels.insert(attr.concise.trim().to_lowercase()) {
                    problems.push(format!("duplicate concise label {:?} in {}", attr.concise, dim.name));
                }
                if !attribute_ids.insert(attr.id.clone()) {
                    problems.push(format!("duplicate attribute id {}", attr.id));
                }
            }
            match self.attribute_matrices.get(&dim.id) {
                Some(m) => {
                    let expected: Vec<ColumnId> = dim.attributes.iter().map(|a| ColumnId::from(&a.id)).collect();
                    if m.column_ids() != expected.as_slice() {
                        problems.push(format!(
                            "attribute matrix of {} does not match its attributes",
                            dim.name
                        ));
                    }
                }
                None => problems.push(format!("dimension {} has no attribute matrix", dim.name)),
            }
        }
        for key in self.attribute_matrices.keys() {
            if self.dimension(key.as_str()).is_none() {
                problems.push(format!("attribute matrix for unknown dimension {key}"));
            }
        }
        let mut labels = BTreeSet::new();
        for attr in &self.overall_attributes {
            if attr.scope != AttributeScope::Overall {
                problems.push(format!("overall attribute {} has the wrong scope", attr.id));
            }
            if !labels.insert(attr.concise.trim().to_lowercase()) {
                problems.push(format!("duplicate overall concise label {:?}", attr.concise));
            }
            if !attribute_ids.insert(attr.id.clone()) {
                problems.push(format!("duplicate attribute id {}", attr.id));
            }
        }
        let dim_cols: Vec<ColumnId> = self.dimensions.iter().map(|d| ColumnId::from(&d.id)).collect();
        if self.dimension_matrix.column_ids() != dim_cols.as_slice() {
            problems.push("dimension matrix columns do not match the dimensions".to_string());
        }
        let overall_cols: Vec<ColumnId> = self.overall_attributes.iter().map(|a| ColumnId::from(&a.id)).collect();
        if self.overall_matrix.column_ids() != overall_cols.as_slice() {
            problems.push("overall matrix columns do not match the overall attributes".to_string());
        }
        problems
    }

    /// Every evidence matrix of the schema, labelled for reporting.
    pub fn matrices(&self) -> Vec<(String, &EvidenceMatrix)> {
        let mut out = vec![("dimensions".to_string(), &self.dimension_matrix)];
        for dim in &self.dimensions {
            if let Some(m) = self.attribute_matrices.get(&dim.id) {
                out.push((format!("attributes/{}", dim.name), m));
            }
        }
        out.push(("overall".to_string(), &self.overall_matrix));
        out
    }

    /// Largest numeric suffix among attribute ids, used to mint fresh ids.
    pub(crate) fn next_attribute_ordinal(&self) -> usize {
        self.dimensions
            .iter()
            .flat_map(|d| d.attributes.iter())
            .chain(self.overall_attributes.iter())
            .filter_map(|a| a.id.as_str().strip_prefix('a')?.parse::<usize>().ok())
            .max()
            .unwrap_or(0)
            + 1
    }
}

/// Checks that a list of revisions forms one linear chain starting at 0.
pub fn check_revision_chain(revisions: &[Schema]) -> Result<(), String> {
    let by_id: BTreeMap<&SchemaId, &Schema> = revisions.iter().map(|s| (&s.id, s)).collect();
    for schema in revisions {
        let mut steps = 0u32;
        let mut cur = schema;
        while let Some(parent) = &cur.parent {
            let p = by_id
                .get(parent)
                .ok_or_else(|| format!("{} points at missing parent {parent}", cur.id))?;
            if p.revision + 1 != cur.revision {
                return Err(format!("{} revision {} follows {}", cur.id, cur.revision, p.revision));
            }
            if p.cluster_id != cur.cluster_id {
                return Err(format!("{} crosses clusters", cur.id));
            }
            steps += 1;
            cur = p;
        }
        if cur.revision != 0 {
            return Err(format!("{} is a root with revision {}", cur.id, cur.revision));
        }
        if steps != schema.revision {
            return Err(format!("{} reached revision 0 in {steps} steps", schema.id));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionValue {
    pub dimension: DimensionId,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: RecordId,
    pub schema_id: SchemaId,
    pub revision: u32,
    pub input_context: String,
    /// One entry per schema dimension, in schema order.
    pub dimension_values: Vec<DimensionValue>,
    pub composed: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_id: Option<ExampleId>,
    pub is_holdout: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImprovementTag {
    #[serde(rename = "ADD")]
    Add,
    #[serde(rename = "DEEPEN")]
    Deepen,
    #[serde(rename = "REFINE")]
    Refine,
    #[serde(rename = "RESTRUCTURE")]
    Restructure,
}

impl ImprovementTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ImprovementTag::Add => "ADD",
            ImprovementTag::Deepen => "DEEPEN",
            ImprovementTag::Refine => "REFINE",
            ImprovementTag::Restructure => "RESTRUCTURE",
        }
    }

    /// Splits `"[ADD] text"` into the tag and the remaining text.
    pub fn parse_line(line: &str) -> Result<(ImprovementTag, String), ModelError> {
        let trimmed = line.trim_start();
        let bad = || ModelError::BadTag(line.to_string());
        let rest = trimmed.strip_prefix('[').ok_or_else(bad)?;
        let close = rest.find(']').ok_or_else(bad)?;
        let tag = match &rest[..close] {
            "ADD" => ImprovementTag::Add,
            "DEEPEN" => ImprovementTag::Deepen,
            "REFINE" => ImprovementTag::Refine,
            "RESTRUCTURE" => ImprovementTag::Restructure,
            _ => return Err(bad()),
        };
        Ok((tag, rest[close + 1..].trim().to_string()))
    }
}

impl fmt::Display for ImprovementTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "dimension", rename_all = "snake_case")]
pub enum SuggestionTarget {
    Dimension(DimensionId),
    Overall,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "text", rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Accepted,
    Rejected,
    Edited(String),
}

impl ReviewStatus {
    /// Accepted or edited suggestions feed the next iteration.
    pub fn is_applied(&self) -> bool {
        matches!(self, ReviewStatus::Accepted | ReviewStatus::Edited(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImprovementSuggestion {
    pub id: SuggestionId,
    pub target: SuggestionTarget,
    pub tag: ImprovementTag,
    pub text: String,
    pub status: ReviewStatus,
    pub origin: RecordId,
}

impl ImprovementSuggestion {
    /// Text that should be applied: the edited text when present.
    pub fn effective_text(&self) -> &str {
        match &self.status {
            ReviewStatus::Edited(t) => t,
            _ => &self.text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentSource {
    Generated,
    Gold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Importance {
    High,
    Medium,
    Low,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub source: SegmentSource,
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub dimension: Option<String>,
    #[serde(default)]
    pub annotation: String,
    pub importance: Importance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMap {
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub dimension_analysis: BTreeMap<String, String>,
    pub generated_len: usize,
    pub gold_len: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn examples(n: usize) -> Vec<Example> {
        (1..=n)
            .map(|i| Example::text(format!("e{i}"), format!("abstract {i}")))
            .collect()
    }

    #[test]
    fn builds_set_of_twenty_with_empty_holdout() {
        let set = new_example_set("Write an HCI paper abstract", examples(20)).unwrap();
        assert_eq!(set.examples.len(), 20);
        assert!(set.holdout_ids.is_empty());
        assert_eq!(set.examples[3].id.as_str(), "e4");
    }

    #[test]
    fn rejects_empty_goal_and_duplicates() {
        assert_eq!(new_example_set("", examples(2)), Err(ModelError::EmptyGoal));
        let dup = vec![Example::text("e1", "a"), Example::text("e1", "b")];
        assert_eq!(new_example_set("goal", dup), Err(ModelError::DuplicateId("e1".into())));
        assert_eq!(new_example_set("goal", vec![]), Err(ModelError::NoExamples));
    }

    #[test]
    fn small_sets_get_no_holdout() {
        let set = new_example_set("goal", examples(3)).unwrap();
        let split = split_validation(&set, 0.2, 7).unwrap();
        assert!(split.set.holdout_ids.is_empty());
        assert!(split.warning.is_some());
    }

    #[test]
    fn ratio_bounds() {
        let set = new_example_set("goal", examples(10)).unwrap();
        assert_eq!(
            split_validation(&set, 0.6, 1).unwrap_err(),
            ModelError::RatioOutOfRange(0.6)
        );
        assert!(split_validation(&set, 0.0, 1).is_err());
        assert_eq!(split_validation(&set, 0.01, 1).unwrap().set.holdout_ids.len(), 1);
    }

    #[test]
    fn judgment_parsing_is_case_insensitive_but_exact() {
        assert_eq!("YES".parse::<Judgment>().unwrap(), Judgment::Yes);
        assert_eq!("partial".parse::<Judgment>().unwrap(), Judgment::Partial);
        assert_eq!("No".parse::<Judgment>().unwrap(), Judgment::No);
        assert!("Yes/No/Partial".parse::<Judgment>().is_err());
        assert!("Y".parse::<Judgment>().is_err());
        assert!(" yes".parse::<Judgment>().is_err());
    }

    #[test]
    fn no_cells_drop_snippets() {
        let cell = EvidenceCell::judged(Judgment::No, "absent", Some("quote".into()));
        assert_eq!(cell.snippet, None);
        let cell = EvidenceCell::judged(Judgment::Yes, "here", Some("  ".into()));
        assert_eq!(cell.snippet, None);
    }

    #[test]
    fn matrix_rejects_missing_and_dangling_cells() {
        let rows: Vec<ExampleId> = vec!["e1".into(), "e2".into()];
        let cols: Vec<ColumnId> = vec!["F1".into()];
        let mut cells = BTreeMap::new();
        cells.insert(
            ("e1".into(), "F1".into()),
            EvidenceCell::judged(Judgment::Yes, "", None),
        );
        assert_eq!(
            EvidenceMatrix::new(rows.clone(), cols.clone(), cells.clone()),
            Err(ModelError::IncompleteMatrix(1))
        );
        cells.insert(
            ("e3".into(), "F1".into()),
            EvidenceCell::judged(Judgment::Yes, "", None),
        );
        assert!(matches!(
            EvidenceMatrix::new(rows, cols, cells),
            Err(ModelError::DanglingCell(..))
        ));
    }

    #[test]
    fn matrix_json_rejects_incomplete_input() {
        let json =
            r#"{"row_ids":["e1"],"column_ids":["F1","F2"],"cells":[{"row":"e1","column":"F1","judgment":"Yes"}]}"#;
        assert!(serde_json::from_str::<EvidenceMatrix>(json).is_err());
    }

    #[test]
    fn tag_parsing() {
        let (tag, text) = ImprovementTag::parse_line("[ADD] Theoretical integration").unwrap();
        assert_eq!(tag, ImprovementTag::Add);
        assert_eq!(text, "Theoretical integration");
        assert!(ImprovementTag::parse_line("[FIX] something").is_err());
        assert!(ImprovementTag::parse_line("ADD something").is_err());
        assert!(ImprovementTag::parse_line("[add] lower").is_err());
    }
}
