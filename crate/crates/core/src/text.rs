//! Character-offset helpers. Every offset exposed by the engine counts
//! Unicode scalar values, never bytes.

pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte index of the `char_idx`-th character, or `s.len()` at the end.
pub fn byte_index(s: &str, char_idx: usize) -> Option<usize> {
    if char_idx == 0 {
        return Some(0);
    }
    let mut count = 0;
    for (b, _) in s.char_indices() {
        if count == char_idx {
            return Some(b);
        }
        count += 1;
    }
    (count == char_idx).then_some(s.len())
}

/// Slice by character offsets `[start, end)`; `None` when out of range.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b0 = byte_index(s, start)?;
    let b1 = byte_index(s, end)?;
    Some(&s[b0..b1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_by_characters() {
        let s = "héllo wörld";
        assert_eq!(char_len(s), 11);
        assert_eq!(char_slice(s, 1, 5), Some("éllo"));
        assert_eq!(char_slice(s, 6, 11), Some("wörld"));
        assert_eq!(char_slice(s, 0, 12), None);
        assert_eq!(char_slice(s, 5, 4), None);
        assert_eq!(char_slice(s, 11, 11), Some(""));
    }
}
