//! Text normalization with an offset map back into the original string.
//!
//! "Verbatim" means equal after normalization: NFC, whitespace runs collapsed
//! to one space (ends trimmed), curly quotes straightened, case preserved.

use serde::{Deserialize, Serialize};
use unicode_normalization::char::canonical_combining_class;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationPolicy {
    pub nfc: bool,
    pub collapse_whitespace: bool,
    pub straighten_quotes: bool,
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        NormalizationPolicy {
            nfc: true,
            collapse_whitespace: true,
            straighten_quotes: true,
        }
    }
}

/// Normalized text where `origin[i]` is the half-open range of original
/// character offsets that produced normalized character `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedText {
    pub chars: Vec<char>,
    pub origin: Vec<(usize, usize)>,
}

impl NormalizedText {
    pub fn as_string(&self) -> String {
        self.chars.iter().collect()
    }

    /// True when a match may begin or end at normalized position `i`
    /// without splitting an origin group.
    pub fn is_boundary(&self, i: usize) -> bool {
        i == 0 || i == self.chars.len() || self.origin[i].0 != self.origin[i - 1].0
    }
}

pub fn straighten(c: char) -> char {
    match c {
        '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' => '\'',
        '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' => '"',
        other => other,
    }
}

/// Normalizes `text`, discarding the offset map.
pub fn normalize(text: &str, policy: &NormalizationPolicy) -> String {
    normalize_with_map(text, policy).as_string()
}

pub fn normalize_with_map(text: &str, policy: &NormalizationPolicy) -> NormalizedText {
    let chars: Vec<char> = text.chars().collect();
    let mut chars_out = Vec::with_capacity(chars.len());
    let mut origin = Vec::with_capacity(chars.len());

    for (start, end) in composition_groups(&chars, policy.nfc) {
        if end - start == 1 && chars[start].is_ascii() {
            chars_out.push(chars[start]);
            origin.push((start, end));
            continue;
        }
        let group: String = chars[start..end].iter().collect();
        if policy.nfc {
            for c in group.nfc() {
                chars_out.push(c);
                origin.push((start, end));
            }
        } else {
            for c in group.chars() {
                chars_out.push(c);
                origin.push((start, end));
            }
        }
    }

    if policy.straighten_quotes {
        for c in chars_out.iter_mut() {
            *c = straighten(*c);
        }
    }

    if !policy.collapse_whitespace {
        return NormalizedText {
            chars: chars_out,
            origin,
        };
    }

    let mut out = NormalizedText {
        chars: Vec::with_capacity(chars_out.len()),
        origin: Vec::with_capacity(chars_out.len()),
    };
    let mut i = 0;
    while i < chars_out.len() {
        if chars_out[i].is_whitespace() {
            let run_start = origin[i].0;
            let mut run_end = origin[i].1;
            while i < chars_out.len() && chars_out[i].is_whitespace() {
                run_end = run_end.max(origin[i].1);
                i += 1;
            }
            out.chars.push(' ');
            out.origin.push((run_start, run_end));
        } else {
            out.chars.push(chars_out[i]);
            out.origin.push(origin[i]);
            i += 1;
        }
    }
    if out.chars.first() == Some(&' ') {
        out.chars.remove(0);
        out.origin.remove(0);
    }
    if out.chars.last() == Some(&' ') {
        out.chars.pop();
        out.origin.pop();
    }
    out
}

/// Splits `chars` into ranges that normalize independently.
///
/// A range starts at each starter (combining class 0); adjacent ranges are
/// merged while normalizing them together differs from normalizing them
/// apart (e.g. Hangul jamo sequences).
fn composition_groups(chars: &[char], nfc: bool) -> Vec<(usize, usize)> {
    if !nfc {
        return (0..chars.len()).map(|i| (i, i + 1)).collect();
    }
    let mut chunks = Vec::new();
    let mut start = 0;
    for (i, &c) in chars.iter().enumerate().skip(1) {
        if canonical_combining_class(c) == 0 {
            chunks.push((start, i));
            start = i;
        }
    }
    if !chars.is_empty() {
        chunks.push((start, chars.len()));
    }

    let nfc_of = |range: (usize, usize)| -> String { chars[range.0..range.1].iter().copied().nfc().collect() };
    let mut groups: Vec<(usize, usize)> = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        // NFC leaves ASCII alone and nothing composes onto an ASCII starter
        // from the left, so such a boundary always stands.
        let ascii_edge = chunk.0 > 0 && (chars[chunk.0].is_ascii() || chars[chunk.0 - 1].is_ascii());
        if let Some(last) = groups.last_mut().filter(|_| !ascii_edge) {
            let joined = nfc_of((last.0, chunk.1));
            let apart = nfc_of(*last) + &nfc_of(chunk);
            if joined != apart {
                last.1 = chunk.1;
                continue;
            }
        }
        groups.push(chunk);
    }
    groups
}
