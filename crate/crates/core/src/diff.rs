//! Structural diff between two revisions of one cluster's schema.
//!
//! Dimensions and attributes are matched by their engine-assigned ids, so a
//! relabelled attribute shows up as a rename rather than a remove/add pair.

use serde::{Deserialize, Serialize};

use crate::model::{Attribute, AttributeId, AttributeScope, Dimension, DimensionId, ModelError, Schema};

/// The part of a schema the diff talks about: dimensions with their
/// attributes, and the overall attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaStructure {
    pub dimensions: Vec<Dimension>,
    pub overall_attributes: Vec<Attribute>,
}

impl SchemaStructure {
    pub fn of(schema: &Schema) -> Self {
        SchemaStructure {
            dimensions: schema.dimensions.clone(),
            overall_attributes: schema.overall_attributes.clone(),
        }
    }

    fn attributes_mut(&mut self, scope: &AttributeScope) -> Option<&mut Vec<Attribute>> {
        match scope {
            AttributeScope::Overall => Some(&mut self.overall_attributes),
            AttributeScope::Dimension(id) => self
                .dimensions
                .iter_mut()
                .find(|d| &d.id == id)
                .map(|d| &mut d.attributes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddedDimension {
    pub index: usize,
    pub dimension: Dimension,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedDimension {
    pub id: DimensionId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionTextChange {
    pub id: DimensionId,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddedAttribute {
    /// Display name of the scope: the dimension name or `Overall`.
    pub scope_name: String,
    pub index: usize,
    pub attribute: Attribute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedAttribute {
    pub scope: AttributeScope,
    pub id: AttributeId,
    pub concise: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeTextChange {
    pub scope: AttributeScope,
    pub id: AttributeId,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeOrder {
    pub scope: AttributeScope,
    pub order: Vec<AttributeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionDiff {
    pub added_dimensions: Vec<AddedDimension>,
    pub removed_dimensions: Vec<RemovedDimension>,
    pub renamed_dimensions: Vec<DimensionTextChange>,
    pub changed_descriptions: Vec<DimensionTextChange>,
    pub added_attributes: Vec<AddedAttribute>,
    pub removed_attributes: Vec<RemovedAttribute>,
    pub renamed_attributes: Vec<AttributeTextChange>,
    pub changed_detailed: Vec<AttributeTextChange>,
    /// Present only when surviving items were reordered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension_order: Option<Vec<DimensionId>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attribute_orders: Vec<ScopeOrder>,
}

impl RevisionDiff {
    pub fn is_empty(&self) -> bool {
        self == &RevisionDiff::default()
    }

    /// One line per change, for reports.
    pub fn summary(&self) -> Vec<String> {
        let mut out = Vec::new();
        for d in &self.added_dimensions {
            out.push(format!("added dimension {:?}", d.dimension.name));
        }
        for d in &self.removed_dimensions {
            out.push(format!("removed dimension {:?}", d.name));
        }
        for d in &self.renamed_dimensions {
            out.push(format!("renamed dimension {:?} -> {:?}", d.from, d.to));
        }
        for d in &self.changed_descriptions {
            out.push(format!("changed description of dimension {}", d.id));
        }
        for a in &self.added_attributes {
            out.push(format!("added {}/{:?}", a.scope_name, a.attribute.concise));
        }
        for a in &self.removed_attributes {
            out.push(format!("removed attribute {:?}", a.concise));
        }
        for a in &self.renamed_attributes {
            out.push(format!("renamed attribute {:?} -> {:?}", a.from, a.to));
        }
        for a in &self.changed_detailed {
            out.push(format!("changed detailed text of {}", a.id));
        }
        if self.dimension_order.is_some() || !self.attribute_orders.is_empty() {
            out.push("reordered elements".to_string());
        }
        out
    }
}

/// Diffs two revisions of the same cluster's schema.
pub fn diff_revisions(a: &Schema, b: &Schema) -> Result<RevisionDiff, ModelError> {
    if a.cluster_id != b.cluster_id {
        return Err(ModelError::ClusterMismatch(a.cluster_id.clone(), b.cluster_id.clone()));
    }
    Ok(diff_structures(&SchemaStructure::of(a), &SchemaStructure::of(b)))
}

pub fn diff_structures(a: &SchemaStructure, b: &SchemaStructure) -> RevisionDiff {
    let mut diff = RevisionDiff::default();

    for dim in &a.dimensions {
        if !b.dimensions.iter().any(|d| d.id == dim.id) {
            diff.removed_dimensions.push(RemovedDimension {
                id: dim.id.clone(),
                name: dim.name.clone(),
            });
        }
    }
    for (index, dim) in b.dimensions.iter().enumerate() {
        let Some(old) = a.dimensions.iter().find(|d| d.id == dim.id) else {
            diff.added_dimensions.push(AddedDimension {
                index,
                dimension: dim.clone(),
            });
            continue;
        };
        if old.name != dim.name {
            diff.renamed_dimensions.push(DimensionTextChange {
                id: dim.id.clone(),
                from: old.name.clone(),
                to: dim.name.clone(),
            });
        }
        if old.description != dim.description {
            diff.changed_descriptions.push(DimensionTextChange {
                id: dim.id.clone(),
                from: old.description.clone(),
                to: dim.description.clone(),
            });
        }
        diff_attributes(
            &AttributeScope::Dimension(dim.id.clone()),
            &dim.name,
            &old.attributes,
            &dim.attributes,
            &mut diff,
        );
    }
    diff_attributes(
        &AttributeScope::Overall,
        "Overall",
        &a.overall_attributes,
        &b.overall_attributes,
        &mut diff,
    );

    // order only matters if applying the changes would not reproduce b
    let applied = apply_changes(a, &diff);
    let b_dims: Vec<&DimensionId> = b.dimensions.iter().map(|d| &d.id).collect();
    let got_dims: Vec<&DimensionId> = applied.dimensions.iter().map(|d| &d.id).collect();
    if b_dims != got_dims {
        diff.dimension_order = Some(b_dims.into_iter().cloned().collect());
    }
    for dim in &b.dimensions {
        let Some(got) = applied.dimensions.iter().find(|d| d.id == dim.id) else {
            continue;
        };
        let want: Vec<AttributeId> = dim.attributes.iter().map(|a| a.id.clone()).collect();
        let have: Vec<AttributeId> = got.attributes.iter().map(|a| a.id.clone()).collect();
        if want != have {
            diff.attribute_orders.push(ScopeOrder {
                scope: AttributeScope::Dimension(dim.id.clone()),
                order: want,
            });
        }
    }
    let want: Vec<AttributeId> = b.overall_attributes.iter().map(|a| a.id.clone()).collect();
    let have: Vec<AttributeId> = applied.overall_attributes.iter().map(|a| a.id.clone()).collect();
    if want != have {
        diff.attribute_orders.push(ScopeOrder {
            scope: AttributeScope::Overall,
            order: want,
        });
    }
    diff
}

fn diff_attributes(
    scope: &AttributeScope,
    scope_name: &str,
    old: &[Attribute],
    new: &[Attribute],
    diff: &mut RevisionDiff,
) {
    for attr in old {
        if !new.iter().any(|a| a.id == attr.id) {
            diff.removed_attributes.push(RemovedAttribute {
                scope: scope.clone(),
                id: attr.id.clone(),
                concise: attr.concise.clone(),
            });
        }
    }
    for (index, attr) in new.iter().enumerate() {
        let Some(prev) = old.iter().find(|a| a.id == attr.id) else {
            diff.added_attributes.push(AddedAttribute {
                scope_name: scope_name.to_string(),
                index,
                attribute: attr.clone(),
            });
            continue;
        };
        if prev.concise != attr.concise {
            diff.renamed_attributes.push(AttributeTextChange {
                scope: scope.clone(),
                id: attr.id.clone(),
                from: prev.concise.clone(),
                to: attr.concise.clone(),
            });
        }
        if prev.detailed != attr.detailed {
            diff.changed_detailed.push(AttributeTextChange {
                scope: scope.clone(),
                id: attr.id.clone(),
                from: prev.detailed.clone(),
                to: attr.detailed.clone(),
            });
        }
    }
}

/// Applies a diff produced by [`diff_structures`] to its left-hand side.
pub fn apply_diff(a: &SchemaStructure, diff: &RevisionDiff) -> SchemaStructure {
    let mut out = apply_changes(a, diff);
    if let Some(order) = &diff.dimension_order {
        out.dimensions
            .sort_by_key(|d| order.iter().position(|id| id == &d.id).unwrap_or(usize::MAX));
    }
    for scope_order in &diff.attribute_orders {
        if let Some(attrs) = out.attributes_mut(&scope_order.scope) {
            attrs.sort_by_key(|a| {
                scope_order
                    .order
                    .iter()
                    .position(|id| id == &a.id)
                    .unwrap_or(usize::MAX)
            });
        }
    }
    out
}

fn apply_changes(a: &SchemaStructure, diff: &RevisionDiff) -> SchemaStructure {
    let mut out = a.clone();
    out.dimensions
        .retain(|d| !diff.removed_dimensions.iter().any(|r| r.id == d.id));
    for r in &diff.removed_attributes {
        if let Some(attrs) = out.attributes_mut(&r.scope) {
            attrs.retain(|a| a.id != r.id);
        }
    }
    for c in &diff.renamed_dimensions {
        if let Some(d) = out.dimensions.iter_mut().find(|d| d.id == c.id) {
            d.name = c.to.clone();
        }
    }
    for c in &diff.changed_descriptions {
        if let Some(d) = out.dimensions.iter_mut().find(|d| d.id == c.id) {
            d.description = c.to.clone();
        }
    }
    for c in &diff.renamed_attributes {
        if let Some(a) = out
            .attributes_mut(&c.scope)
            .and_then(|attrs| attrs.iter_mut().find(|a| a.id == c.id))
        {
            a.concise = c.to.clone();
        }
    }
    for c in &diff.changed_detailed {
        if let Some(a) = out
            .attributes_mut(&c.scope)
            .and_then(|attrs| attrs.iter_mut().find(|a| a.id == c.id))
        {
            a.detailed = c.to.clone();
        }
    }
    let mut added_dims = diff.added_dimensions.clone();
    added_dims.sort_by_key(|d| d.index);
    for d in added_dims {
        let at = d.index.min(out.dimensions.len());
        out.dimensions.insert(at, d.dimension);
    }
    let mut added_attrs = diff.added_attributes.clone();
    added_attrs.sort_by_key(|a| a.index);
    for a in added_attrs {
        if let Some(attrs) = out.attributes_mut(&a.attribute.scope) {
            let at = a.index.min(attrs.len());
            attrs.insert(at, a.attribute);
        }
    }
    out
}
