//! Binding helpers shared by the stage modules, and the one-shot
//! correction loop used after a validator rejects a response.

use std::collections::BTreeMap;

use crate::error::StageError;
use crate::gateway::{corrective_prompt, Completion, Gateway, ResponseFormat};
use crate::model::{ColumnId, EvidenceCell, EvidenceMatrix, Example, ExampleId, ExampleSet, Judgment};

/// `Example e1:\n<content>` blocks separated by blank lines.
pub(crate) fn example_blocks(examples: &[&Example]) -> String {
    let blocks: Vec<String> = examples
        .iter()
        .map(|e| format!("Example {}:\n{}", e.id, e.content.trim_end()))
        .collect();
    format!("\n{}", blocks.join("\n\n"))
}

/// Paired inputs of the examples, or the empty string when none have one.
pub(crate) fn input_context_block(examples: &[&Example]) -> String {
    let lines: Vec<String> = examples
        .iter()
        .filter_map(|e| {
            e.input_context
                .as_deref()
                .filter(|c| !c.trim().is_empty())
                .map(|c| format!("Example {}: {}", e.id, c.trim()))
        })
        .collect();
    if lines.is_empty() {
        String::new()
    } else {
        format!("\n\nInput context for each example:\n{}", lines.join("\n"))
    }
}

pub(crate) fn id_list(examples: &[&Example]) -> String {
    examples.iter().map(|e| e.id.as_str()).collect::<Vec<_>>().join(", ")
}

/// What a parser found wrong with a response, and the error to raise if
/// the corrected response is still unusable.
pub(crate) struct Rejection {
    pub problems: Vec<String>,
    pub error: StageError,
}

impl Rejection {
    pub fn new(problems: Vec<String>, error: StageError) -> Self {
        Rejection { problems, error }
    }

    pub fn parse(stage: &'static str, reason: impl Into<String>) -> Self {
        let reason = reason.into();
        Rejection {
            problems: vec![reason.clone()],
            error: StageError::ParseFailed { stage, reason },
        }
    }
}

/// Asks once, and once more with the problems appended if `parse` rejects
/// the first answer.
pub(crate) fn ask_with_correction<T>(
    gateway: &Gateway,
    tag: &str,
    prompt: &str,
    format: &ResponseFormat,
    mut parse: impl FnMut(&Completion) -> Result<T, Rejection>,
) -> Result<T, StageError> {
    let first = gateway.complete_structured(tag, prompt, format)?;
    let rejection = match parse(&first) {
        Ok(v) => return Ok(v),
        Err(r) => r,
    };
    tracing::info!(tag, problems = rejection.problems.len(), "corrective re-ask");
    let listed = rejection
        .problems
        .iter()
        .map(|p| format!("- {p}"))
        .collect::<Vec<_>>()
        .join("\n");
    let retry = corrective_prompt(prompt, &format!("\n{listed}"), &format.reminder());
    let second = gateway.complete_structured(tag, &retry, format)?;
    parse(&second).map_err(|r| r.error)
}

/// Reads a JSON string field, treating `null` and absence alike.
pub(crate) fn str_field<'a>(obj: &'a serde_json::Value, key: &str) -> Option<&'a str> {
    obj.get(key).and_then(|v| v.as_str())
}

/// Parses a judgment, accepting the `Yes/No/Partial` strings of the
/// prompts in any letter case.
pub(crate) fn judgment(obj: &serde_json::Value, key: &str) -> Result<Judgment, String> {
    let raw = str_field(obj, key).ok_or_else(|| format!("missing \"{key}\""))?;
    raw.parse::<Judgment>()
        .map_err(|_| format!("\"{key}\" must be Yes, Partial or No, got {raw:?}"))
}

/// Case- and surrounding-whitespace-insensitive name comparison.
pub(crate) fn same_name(a: &str, b: &str) -> bool {
    a.trim().to_lowercase() == b.trim().to_lowercase()
}

/// Collects judged cells for a matrix from a loosely structured response.
pub(crate) struct CellGrid {
    rows: Vec<ExampleId>,
    cols: Vec<ColumnId>,
    cells: BTreeMap<(ExampleId, ColumnId), EvidenceCell>,
    pub problems: Vec<String>,
    pub warnings: Vec<String>,
}

impl CellGrid {
    pub fn new(rows: Vec<ExampleId>, cols: Vec<ColumnId>) -> Self {
        CellGrid {
            rows,
            cols,
            cells: BTreeMap::new(),
            problems: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Resolves an example reference: the id itself or `Example <id>`.
    pub fn row(&mut self, raw: &serde_json::Value) -> Option<ExampleId> {
        let text = match raw {
            serde_json::Value::String(s) => s.trim().to_string(),
            serde_json::Value::Number(n) => n.to_string(),
            _ => String::new(),
        };
        let bare = text
            .strip_prefix("Example ")
            .or_else(|| text.strip_prefix("example "))
            .unwrap_or(&text)
            .trim();
        let found = self.rows.iter().find(|r| r.as_str() == bare).cloned();
        if found.is_none() {
            self.warnings
                .push(format!("ignored evidence for unknown example {text:?}"));
        }
        found
    }

    pub fn put(&mut self, row: ExampleId, col: ColumnId, cell: EvidenceCell) {
        let key = (row, col);
        if self.cells.contains_key(&key) {
            self.warnings
                .push(format!("duplicate judgment for {} / {}; kept the first", key.0, key.1));
            return;
        }
        self.cells.insert(key, cell);
    }

    pub fn missing(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for r in &self.rows {
            for c in &self.cols {
                if !self.cells.contains_key(&(r.clone(), c.clone())) {
                    out.push((r.to_string(), c.to_string()));
                }
            }
        }
        out
    }

    /// The complete matrix, or a rejection listing what is missing.
    pub fn finish(
        self,
        matrix: &str,
        describe: impl Fn(&str) -> String,
    ) -> Result<(EvidenceMatrix, Vec<String>), Rejection> {
        let missing = self.missing();
        if !missing.is_empty() {
            let mut problems = self.problems;
            const SHOWN: usize = 20;
            for (r, c) in missing.iter().take(SHOWN) {
                problems.push(format!("no usable judgment for Example {r} on {}", describe(c)));
            }
            if missing.len() > SHOWN {
                problems.push(format!("... and {} more missing judgments", missing.len() - SHOWN));
            }
            problems.push("Evaluate every example against every item, with no omissions.".to_string());
            return Err(Rejection::new(
                problems,
                StageError::IncompleteMatrix {
                    matrix: matrix.to_string(),
                    missing,
                },
            ));
        }
        let m = EvidenceMatrix::new(self.rows, self.cols, self.cells).expect("grid is complete");
        Ok((m, self.warnings))
    }
}

/// Examples of `set` keyed by id, for evidence verification.
pub(crate) fn example_map(set: &ExampleSet) -> BTreeMap<ExampleId, Example> {
    set.examples.iter().map(|e| (e.id.clone(), e.clone())).collect()
}

/// Cluster members in cluster order.
pub(crate) fn members<'a>(set: &'a ExampleSet, ids: &[ExampleId]) -> Result<Vec<&'a Example>, StageError> {
    ids.iter()
        .map(|id| {
            set.get(id.as_str())
                .ok_or_else(|| StageError::UnknownExample(id.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_and_context() {
        let a = Example::text("e1", "First.\n").with_input_context("Title A");
        let b = Example::text("e2", "Second.");
        assert_eq!(
            example_blocks(&[&a, &b]),
            "\nExample e1:\nFirst.\n\nExample e2:\nSecond."
        );
        assert_eq!(
            input_context_block(&[&a, &b]),
            "\n\nInput context for each example:\nExample e1: Title A"
        );
        assert_eq!(input_context_block(&[&b]), "");
        assert_eq!(id_list(&[&a, &b]), "e1, e2");
    }
}
