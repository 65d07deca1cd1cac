use serde::{Deserialize, Serialize};

use crate::model::{SegmentMap, SegmentSource};
use crate::text::{char_len, char_slice};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentViolation {
    Gap { source: SegmentSource, offset: usize },
    Overlap { a: String, b: String },
    SliceMismatch { id: String },
    IndexOutOfRange { id: String },
    UnknownDimension { id: String },
}

impl std::fmt::Display for SegmentViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SegmentViolation::Gap { source, offset } => {
                write!(f, "{source:?} text is not covered starting at character {offset}")
            }
            SegmentViolation::Overlap { a, b } => write!(f, "segments {a} and {b} overlap"),
            SegmentViolation::SliceMismatch { id } => {
                write!(f, "segment {id} text does not equal the source slice at its indices")
            }
            SegmentViolation::IndexOutOfRange { id } => {
                write!(f, "segment {id} has indices outside its source text")
            }
            SegmentViolation::UnknownDimension { id } => {
                write!(f, "segment {id} names a dimension that is not in the schema")
            }
        }
    }
}

/// Validates a segment map against both texts and the schema's dimension names.
///
/// Empty iff each source is covered by disjoint, slice-exact segments and
/// every named dimension exists.
pub fn check_segment_map(
    map: &SegmentMap,
    generated: &str,
    gold: &str,
    dimension_names: &[String],
) -> Vec<SegmentViolation> {
    let mut violations = Vec::new();
    for (source, text) in [(SegmentSource::Generated, generated), (SegmentSource::Gold, gold)] {
        let len = char_len(text);
        let mut spans: Vec<(usize, usize, &str)> = Vec::new();
        for seg in map.segments.iter().filter(|s| s.source == source) {
            if seg.start > seg.end || seg.end > len {
                violations.push(SegmentViolation::IndexOutOfRange { id: seg.id.clone() });
            } else if char_slice(text, seg.start, seg.end) != Some(seg.text.as_str()) {
                violations.push(SegmentViolation::SliceMismatch { id: seg.id.clone() });
            }
            if let Some(dim) = &seg.dimension {
                if !dimension_names
                    .iter()
                    .any(|d| d.trim().eq_ignore_ascii_case(dim.trim()))
                {
                    violations.push(SegmentViolation::UnknownDimension { id: seg.id.clone() });
                }
            }
            if seg.start <= seg.end {
                let (s, e) = (seg.start.min(len), seg.end.min(len));
                if s < e {
                    spans.push((s, e, seg.id.as_str()));
                }
            }
        }
        spans.sort();
        let mut covered = 0;
        let mut owner: Option<&str> = None;
        for (s, e, id) in spans {
            if s > covered {
                violations.push(SegmentViolation::Gap {
                    source,
                    offset: covered,
                });
            } else if s < covered {
                violations.push(SegmentViolation::Overlap {
                    a: owner.unwrap_or_default().to_string(),
                    b: id.to_string(),
                });
            }
            if e >= covered {
                covered = e;
                owner = Some(id);
            }
        }
        if covered < len {
            violations.push(SegmentViolation::Gap {
                source,
                offset: covered,
            });
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Importance, Segment};
    use std::collections::BTreeMap;

    fn seg(id: &str, source: SegmentSource, text: &str, start: usize, end: usize) -> Segment {
        Segment {
            id: id.into(),
            source,
            text: text.into(),
            start,
            end,
            dimension: None,
            annotation: String::new(),
            importance: Importance::Low,
        }
    }

    fn map(segments: Vec<Segment>, g: &str, o: &str) -> SegmentMap {
        SegmentMap {
            segments,
            dimension_analysis: BTreeMap::new(),
            generated_len: char_len(g),
            gold_len: char_len(o),
        }
    }

    #[test]
    fn whole_text_segments_pass() {
        let t = "One sentence only.";
        let m = map(
            vec![
                seg("s1", SegmentSource::Generated, t, 0, 18),
                seg("s2", SegmentSource::Gold, t, 0, 18),
            ],
            t,
            t,
        );
        assert!(check_segment_map(&m, t, t, &[]).is_empty());
    }

    #[test]
    fn end_beyond_text_is_out_of_range() {
        let t = "abc";
        let m = map(
            vec![
                seg("s1", SegmentSource::Generated, "abc", 0, 4),
                seg("s2", SegmentSource::Gold, t, 0, 3),
            ],
            t,
            t,
        );
        assert_eq!(
            check_segment_map(&m, t, t, &[]),
            vec![SegmentViolation::IndexOutOfRange { id: "s1".into() }]
        );
    }

    #[test]
    fn gap_overlap_and_dimension() {
        let g = "abcdef";
        let mut a = seg("a", SegmentSource::Generated, "abc", 0, 3);
        a.dimension = Some("Findings".into());
        let b = seg("b", SegmentSource::Generated, "cdef", 2, 6);
        let c = seg("c", SegmentSource::Gold, "ab", 0, 2);
        let d = seg("d", SegmentSource::Gold, "def", 3, 6);
        let m = map(vec![a, b, c, d], g, g);
        let v = check_segment_map(&m, g, g, &["Methods".to_string()]);
        assert_eq!(
            v,
            vec![
                SegmentViolation::UnknownDimension { id: "a".into() },
                SegmentViolation::Overlap {
                    a: "a".into(),
                    b: "b".into()
                },
                SegmentViolation::Gap {
                    source: SegmentSource::Gold,
                    offset: 2
                },
            ]
        );
    }
}
