//! Pure verification functions that hold model output accountable.
//!
//! Nothing here calls a model or keeps state: snippet search, matrix
//! verification, partition and support checks, and segment-map validation.

mod normalize;
mod segments;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normalize::{normalize, normalize_with_map, straighten, NormalizationPolicy, NormalizedText};
pub use segments::{check_segment_map, SegmentViolation};

use crate::model::{
    ClusterId, Clustering, ColumnId, EvidenceCell, EvidenceMatrix, Example, ExampleId, Judgment, Span, Verification,
};
use crate::text::char_slice;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvidenceError {
    #[error("snippet is empty after normalization")]
    EmptySnippet,
    #[error("matrix row {0} does not resolve to an example")]
    UnknownRowId(ExampleId),
}

/// Finds the first span of `source` whose normalized text equals the
/// normalized `snippet`. Offsets index the original, un-normalized source.
pub fn find_verbatim(snippet: &str, source: &str, policy: &NormalizationPolicy) -> Result<Option<Span>, EvidenceError> {
    let needle: Vec<char> = normalize(snippet, policy).chars().collect();
    if needle.is_empty() {
        return Err(EvidenceError::EmptySnippet);
    }
    let hay = normalize_with_map(source, policy);
    if needle.len() > hay.chars.len() {
        return Ok(None);
    }
    let needle_str: String = needle.iter().collect();
    for start in 0..=hay.chars.len() - needle.len() {
        let end = start + needle.len();
        if hay.chars[start..end] != needle[..] || !hay.is_boundary(start) || !hay.is_boundary(end) {
            continue;
        }
        let span = Span::new(hay.origin[start].0, hay.origin[end - 1].1);
        // groups are independent, so this only fails on pathological inputs
        let slice = char_slice(source, span.start, span.end).unwrap_or_default();
        if normalize(slice, policy) == needle_str {
            return Ok(Some(span));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationFailure {
    pub row: ExampleId,
    pub column: ColumnId,
    pub snippet: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub total: usize,
    pub verified: usize,
    pub unverifiable: usize,
    pub unchecked: usize,
    /// Yes cells downgraded to Partial (strict mode only).
    pub downgraded: usize,
    pub failures: Vec<VerificationFailure>,
}

impl VerificationReport {
    pub fn merge(&mut self, other: &VerificationReport) {
        self.total += other.total;
        self.verified += other.verified;
        self.unverifiable += other.unverifiable;
        self.unchecked += other.unchecked;
        self.downgraded += other.downgraded;
        self.failures.extend(other.failures.iter().cloned());
    }
}

/// Checks every snippet of `matrix` against its row's source example.
///
/// Cells with a snippet end up `Verified` (with a span) or `Unverifiable`.
/// In strict mode unverifiable `Yes` cells are downgraded to `Partial`;
/// otherwise they are only flagged.
pub fn verify_matrix(
    matrix: &EvidenceMatrix,
    examples: &BTreeMap<ExampleId, Example>,
    strict: bool,
    policy: &NormalizationPolicy,
) -> Result<(EvidenceMatrix, VerificationReport), EvidenceError> {
    for row in matrix.row_ids() {
        if !examples.contains_key(row) {
            return Err(EvidenceError::UnknownRowId(row.clone()));
        }
    }
    let mut out = matrix.clone();
    let mut report = VerificationReport::default();
    for (row, column, cell) in out.cells_mut() {
        report.total += 1;
        let Some(snippet) = cell.snippet.clone() else {
            cell.verification = Verification::Unchecked;
            cell.verified_span = None;
            report.unchecked += 1;
            continue;
        };
        let source = &examples[row].content;
        match find_verbatim(&snippet, source, policy) {
            Ok(Some(span)) => {
                cell.verification = Verification::Verified;
                cell.verified_span = Some(span);
                report.verified += 1;
            }
            Ok(None) | Err(EvidenceError::EmptySnippet) => {
                cell.verification = Verification::Unverifiable;
                cell.verified_span = None;
                report.unverifiable += 1;
                report.failures.push(VerificationFailure {
                    row: row.clone(),
                    column: column.clone(),
                    snippet,
                });
                if strict && cell.judgment == Some(Judgment::Yes) {
                    cell.judgment = Some(Judgment::Partial);
                    report.downgraded += 1;
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, report))
}

/// Strict-mode rule for prompts that demand a quote on every `Yes`:
/// `Yes` cells without a snippet become `Partial`. Returns the count.
pub fn downgrade_unquoted_yes(matrix: &mut EvidenceMatrix) -> usize {
    let mut n = 0;
    for (_, _, cell) in matrix.cells_mut() {
        if cell.judgment == Some(Judgment::Yes) && cell.snippet.is_none() {
            cell.judgment = Some(Judgment::Partial);
            n += 1;
        }
    }
    n
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id")]
pub enum PartitionViolation {
    Omitted(ExampleId),
    Duplicated(ExampleId),
    Unknown(ExampleId),
    EmptyCluster(ClusterId),
}

impl std::fmt::Display for PartitionViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PartitionViolation::Omitted(id) => write!(f, "Example {id} is not assigned to any cluster"),
            PartitionViolation::Duplicated(id) => write!(f, "Example {id} is assigned to more than one cluster"),
            PartitionViolation::Unknown(id) => write!(f, "Example {id} is not one of the provided examples"),
            PartitionViolation::EmptyCluster(id) => write!(f, "Cluster {id} has no examples"),
        }
    }
}

/// Lists every way `clustering` fails to partition `expected`.
/// Empty iff the clusters are non-empty, pairwise disjoint and cover `expected`.
pub fn check_partition(clustering: &Clustering, expected: &[ExampleId]) -> Vec<PartitionViolation> {
    let expected_set: BTreeSet<&ExampleId> = expected.iter().collect();
    let mut counts: BTreeMap<&ExampleId, usize> = BTreeMap::new();
    let mut order: Vec<&ExampleId> = Vec::new();
    let mut violations = Vec::new();
    for cluster in &clustering.clusters {
        if cluster.member_ids.is_empty() {
            violations.push(PartitionViolation::EmptyCluster(cluster.id.clone()));
        }
        for id in &cluster.member_ids {
            let n = counts.entry(id).or_insert(0);
            if *n == 0 {
                order.push(id);
            }
            *n += 1;
        }
    }
    for id in order {
        if !expected_set.contains(id) {
            violations.push(PartitionViolation::Unknown(id.clone()));
        } else if counts[id] > 1 {
            violations.push(PartitionViolation::Duplicated(id.clone()));
        }
    }
    for id in expected {
        if !counts.contains_key(id) {
            violations.push(PartitionViolation::Omitted(id.clone()));
        }
    }
    violations
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub support: f64,
    pub passes: bool,
}

pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 0.5;

/// Fraction of rows judged Yes or Partial; unjudged cells count as absent.
pub fn check_support(column: &[&EvidenceCell], threshold: f64) -> Support {
    if column.is_empty() {
        return Support {
            support: 0.0,
            passes: false,
        };
    }
    let present = column
        .iter()
        .filter(|c| c.judgment.is_some_and(Judgment::is_present))
        .count();
    let support = present as f64 / column.len() as f64;
    Support {
        support,
        passes: support >= threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Cluster;

    fn policy() -> NormalizationPolicy {
        NormalizationPolicy::default()
    }

    #[test]
    fn direct_substring() {
        assert_eq!(find_verbatim("abc", "xxabcyy", &policy()), Ok(Some(Span::new(2, 5))));
        assert_eq!(find_verbatim("absent", "abc", &policy()), Ok(None));
        assert_eq!(
            find_verbatim("  \n", "abc", &policy()),
            Err(EvidenceError::EmptySnippet)
        );
    }

    #[test]
    fn whitespace_collapsed_match_spans_original_newline() {
        let source = "We study it and it generates implications for design\n  and policy changes.";
        let span = find_verbatim("design  and\npolicy", source, &policy())
            .unwrap()
            .unwrap();
        let slice = char_slice(source, span.start, span.end).unwrap();
        assert_eq!(slice, "design\n  and policy");
    }

    #[test]
    fn quotes_and_composition_match() {
        let source = "the \u{201C}caf\u{e9}\u{201D} study";
        let span = find_verbatim("\"cafe\u{301}\"", source, &policy()).unwrap().unwrap();
        assert_eq!(span, Span::new(4, 10));
    }

    #[test]
    fn case_is_preserved() {
        assert_eq!(find_verbatim("Design", "design", &policy()), Ok(None));
    }

    fn example(id: &str, content: &str) -> (ExampleId, Example) {
        (id.into(), Example::text(id, content))
    }

    #[test]
    fn strict_mode_downgrades_fabricated_yes() {
        let examples: BTreeMap<_, _> = [example(
            "e1",
            "This paper generates implications for design and policy changes.",
        )]
        .into_iter()
        .collect();
        let mut cells = BTreeMap::new();
        cells.insert(
            ("e1".into(), "F1".into()),
            EvidenceCell::judged(
                Judgment::Yes,
                "policy",
                Some("generates implications for design and policy changes".into()),
            ),
        );
        cells.insert(
            ("e1".into(), "F2".into()),
            EvidenceCell::judged(Judgment::Yes, "made up", Some("a fabricated quote".into())),
        );
        let m = EvidenceMatrix::new(vec!["e1".into()], vec!["F1".into(), "F2".into()], cells).unwrap();

        let (strict, report) = verify_matrix(&m, &examples, true, &policy()).unwrap();
        let good = strict.cell(&"e1".into(), &"F1".into()).unwrap();
        assert_eq!(good.verification, Verification::Verified);
        assert_eq!(good.verified_span, Some(Span::new(11, 63)));
        let bad = strict.cell(&"e1".into(), &"F2".into()).unwrap();
        assert_eq!(bad.judgment, Some(Judgment::Partial));
        assert_eq!(bad.verification, Verification::Unverifiable);
        assert_eq!(report.verified, 1);
        assert_eq!(report.unverifiable, 1);
        assert_eq!(report.downgraded, 1);
        assert_eq!(report.failures.len(), 1);

        let (lenient, report) = verify_matrix(&m, &examples, false, &policy()).unwrap();
        let bad = lenient.cell(&"e1".into(), &"F2".into()).unwrap();
        assert_eq!(bad.judgment, Some(Judgment::Yes));
        assert_eq!(bad.verification, Verification::Unverifiable);
        assert_eq!(report.downgraded, 0);
    }

    #[test]
    fn verify_rejects_unknown_rows() {
        let m = EvidenceMatrix::unchecked(vec!["e9".into()], vec![]);
        let err = verify_matrix(&m, &BTreeMap::new(), true, &policy()).unwrap_err();
        assert_eq!(err, EvidenceError::UnknownRowId("e9".into()));
    }

    fn clustering(groups: &[&[&str]]) -> Clustering {
        Clustering {
            clusters: groups
                .iter()
                .enumerate()
                .map(|(i, g)| Cluster {
                    id: ClusterId(format!("c{}", i + 1)),
                    name: format!("C{}", i + 1),
                    common_features: vec![],
                    member_ids: g.iter().map(|s| ExampleId::from(*s)).collect(),
                    feature_matrix: None,
                })
                .collect(),
            over: vec![],
        }
    }

    fn ids(v: &[&str]) -> Vec<ExampleId> {
        v.iter().map(|s| ExampleId::from(*s)).collect()
    }

    #[test]
    fn partition_examples() {
        let all = ids(&["e1", "e2", "e3"]);
        assert!(check_partition(&clustering(&[&["e1", "e2"], &["e3"]]), &all).is_empty());
        assert_eq!(
            check_partition(&clustering(&[&["e1", "e2"], &["e2", "e3"]]), &all),
            vec![PartitionViolation::Duplicated("e2".into())]
        );
        assert_eq!(
            check_partition(&clustering(&[&["e1", "e4"]]), &all),
            vec![
                PartitionViolation::Unknown("e4".into()),
                PartitionViolation::Omitted("e2".into()),
                PartitionViolation::Omitted("e3".into()),
            ]
        );
        assert!(check_partition(&clustering(&[]), &[]).is_empty());
        assert_eq!(
            check_partition(&clustering(&[&[]]), &[]),
            vec![PartitionViolation::EmptyCluster("c1".into())]
        );
    }

    #[test]
    fn support_examples() {
        let cells: Vec<EvidenceCell> = [Judgment::Yes, Judgment::Partial, Judgment::No, Judgment::No]
            .into_iter()
            .map(|j| EvidenceCell::judged(j, "", None))
            .collect();
        let refs: Vec<&EvidenceCell> = cells.iter().collect();
        assert_eq!(
            check_support(&refs, 0.5),
            Support {
                support: 0.5,
                passes: true
            }
        );

        let none: Vec<EvidenceCell> = (0..4).map(|_| EvidenceCell::judged(Judgment::No, "", None)).collect();
        let refs: Vec<&EvidenceCell> = none.iter().collect();
        assert_eq!(
            check_support(&refs, 0.5),
            Support {
                support: 0.0,
                passes: false
            }
        );
    }
}
