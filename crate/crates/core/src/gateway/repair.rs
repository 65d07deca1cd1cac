//! Repairs for structured responses. Repairs only remove wrappers around
//! the payload; they never rewrite its content.

use serde_json::{Map, Value};

/// Contents of the first triple-backtick fence, without the info string.
pub fn strip_code_fences(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    let body_start = after.find('\n').map(|i| i + 1)?;
    let body = &after[body_start..];
    let close = body.find("```").unwrap_or(body.len());
    Some(body[..close].trim())
}

/// The first balanced `{ ... }` in `text`, honouring JSON string escapes.
pub fn extract_first_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find('{') {
        let start = search_from + rel;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_string {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&text[start..=i]);
                    }
                }
                _ => {}
            }
        }
        search_from = start + 1;
    }
    None
}

/// Parses a JSON object, trying the raw text, then fenced content, then the
/// first balanced object. Returns the object or the last parse error.
pub fn parse_object(raw: &str) -> Result<Map<String, Value>, String> {
    let mut candidates: Vec<&str> = vec![raw.trim()];
    if let Some(fenced) = strip_code_fences(raw) {
        candidates.push(fenced);
    }
    if let Some(obj) = extract_first_object(raw) {
        candidates.push(obj);
    }
    let mut last_err = "response contains no JSON object".to_string();
    for candidate in candidates {
        match serde_json::from_str::<Value>(candidate) {
            Ok(Value::Object(map)) => return Ok(map),
            Ok(other) => last_err = format!("expected a JSON object, got {}", kind(&other)),
            Err(e) => last_err = format!("invalid JSON: {e}"),
        }
    }
    Err(last_err)
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_object() {
        let raw = "```json\n{\"mapping\": []}\n```";
        assert_eq!(strip_code_fences(raw), Some("{\"mapping\": []}"));
        assert!(parse_object(raw).unwrap().contains_key("mapping"));
    }

    #[test]
    fn preamble_object() {
        let raw = "Sure! Here is the JSON: {\"a\": \"x}\", \"b\": {\"c\": 1}} Hope it helps.";
        let obj = extract_first_object(raw).unwrap();
        assert_eq!(obj, "{\"a\": \"x}\", \"b\": {\"c\": 1}}");
        assert!(raw.contains(obj));
        assert_eq!(parse_object(raw).unwrap().len(), 2);
    }

    #[test]
    fn escaped_quotes_inside_strings() {
        let raw = r#"x {"a": "say \"}\" now"} y"#;
        assert_eq!(extract_first_object(raw), Some(r#"{"a": "say \"}\" now"}"#));
    }

    #[test]
    fn garbage_fails() {
        assert!(parse_object("no json here").is_err());
        assert!(parse_object("[1, 2]").is_err());
        assert!(parse_object("{ unbalanced").is_err());
    }
}
