//! Parser for the line-oriented clustering response.
//!
//! Sections open with `Cluster <k>: <name>`. Bullets under `Common
//! Features:` are features; bullets under `Examples:` name members as
//! `Example <id>`. `Total number of examples: <n>` is cross-checked against
//! the member count. Markdown emphasis and heading markers are ignored.
//! Lines that fit none of these are skipped with a warning.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProseCluster {
    pub name: String,
    pub features: Vec<String>,
    pub members: Vec<String>,
    pub stated_total: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedProse {
    pub clusters: Vec<ProseCluster>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Features,
    Members,
}

fn clean(line: &str) -> String {
    let t = line.trim().trim_start_matches('#').trim();
    t.replace("**", "").trim().to_string()
}

fn bullet(line: &str) -> Option<&str> {
    for marker in ["- ", "* ", "• ", "– "] {
        if let Some(rest) = line.strip_prefix(marker) {
            return Some(rest.trim());
        }
    }
    None
}

fn strip_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    if s.len() >= prefix.len() && s.is_char_boundary(prefix.len()) && s[..prefix.len()].eq_ignore_ascii_case(prefix) {
        Some(&s[prefix.len()..])
    } else {
        None
    }
}

fn header(line: &str) -> Option<String> {
    let rest = strip_ci(line, "cluster")?;
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    let rest = rest.trim_start();
    let digits = rest.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = rest[digits..].trim_start();
    let rest = rest
        .strip_prefix(':')
        .or_else(|| rest.strip_prefix('.'))
        .or_else(|| rest.strip_prefix('–'))
        .or_else(|| rest.strip_prefix('-'))?;
    let name = rest.trim();
    let name = name
        .strip_prefix('[')
        .and_then(|n| n.strip_suffix(']'))
        .unwrap_or(name)
        .trim();
    Some(name.to_string())
}

fn labelled<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let rest = strip_ci(line, label)?;
    let rest = rest.trim_start();
    rest.strip_prefix(':')
        .map(str::trim)
        .or(if rest.is_empty() { Some("") } else { None })
}

/// Ids named on a member line: `Example e3`, `e3`, `Examples e1, e2`.
fn member_ids(item: &str) -> Vec<String> {
    let item = strip_ci(item, "examples")
        .or_else(|| strip_ci(item, "example"))
        .map(str::trim_start)
        .unwrap_or(item);
    item.split(',')
        .filter_map(|part| {
            let part = part.trim().trim_start_matches(['[', '(', '#']);
            let token: String = part
                .chars()
                .take_while(|c| !c.is_whitespace() && !matches!(c, ':' | ')' | ']' | ';' | ','))
                .collect();
            let token = token.trim_end_matches('.').to_string();
            (!token.is_empty()).then_some(token)
        })
        .collect()
}

pub fn parse_cluster_prose(text: &str) -> ParsedProse {
    let mut out = ParsedProse::default();
    let mut section = Section::None;
    for (n, raw) in text.lines().enumerate() {
        let line = clean(raw);
        if line.is_empty() || line.chars().all(|c| c == '.' || c == '…') {
            continue;
        }
        if let Some(name) = header(&line) {
            out.clusters.push(ProseCluster {
                name,
                features: Vec::new(),
                members: Vec::new(),
                stated_total: None,
            });
            section = Section::None;
            continue;
        }
        let Some(current) = out.clusters.last_mut() else {
            out.warnings.push(format!(
                "line {}: ignored text before the first cluster: {line:?}",
                n + 1
            ));
            continue;
        };
        if let Some(rest) = labelled(&line, "common features") {
            section = Section::Features;
            if !rest.is_empty() {
                current.features.push(rest.to_string());
            }
            continue;
        }
        if let Some(rest) = labelled(&line, "total number of examples") {
            match rest.trim_end_matches('.').parse::<usize>() {
                Ok(v) => current.stated_total = Some(v),
                Err(_) => out.warnings.push(format!("line {}: unreadable total {rest:?}", n + 1)),
            }
            section = Section::None;
            continue;
        }
        if let Some(rest) = labelled(&line, "examples") {
            section = Section::Members;
            if !rest.is_empty() {
                current.members.extend(member_ids(rest));
            }
            continue;
        }
        match (section, bullet(&line)) {
            (Section::Features, Some(item)) if !item.is_empty() => current.features.push(item.to_string()),
            (Section::Members, Some(item)) => current.members.extend(member_ids(item)),
            (Section::Members, None) if strip_ci(&line, "example ").is_some() => {
                current.members.extend(member_ids(&line))
            }
            _ => out.warnings.push(format!("line {}: ignored {line:?}", n + 1)),
        }
    }
    for (i, c) in out.clusters.iter().enumerate() {
        if let Some(total) = c.stated_total {
            if total != c.members.len() {
                out.warnings.push(format!(
                    "cluster {} ({}) states {total} examples but lists {}",
                    i + 1,
                    c.name,
                    c.members.len()
                ));
            }
        }
    }
    out
}

/// Writes clusters in the response format the parser reads.
pub fn to_prose(clusters: &[ProseCluster]) -> String {
    let mut out = String::new();
    for (i, c) in clusters.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("Cluster {}: {}\nCommon Features:\n", i + 1, c.name));
        for f in &c.features {
            out.push_str(&format!("- {f}\n"));
        }
        out.push_str("Examples:\n");
        for m in &c.members {
            out.push_str(&format!("- Example {m}\n"));
        }
        out.push_str(&format!("Total number of examples: {}\n", c.members.len()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "Here is my analysis.\n\n\
**Cluster 1: Empirical Studies**\n\
Common Features:\n\
- Opens with a problem statement\n\
- Reports study results\n\
Examples:\n\
- Example e1\n\
- Example e4\n\
Total number of examples: 2\n\n\
### Cluster 2: [Theoretical Contributions]\n\
**Common Features:**\n\
* Proposes a framework\n\
**Examples:**\n\
- Example e2: argues for a new lens\n\
- Example e3\n\
Total number of examples: 3\n";

    #[test]
    fn parses_markdown_variant() {
        let p = parse_cluster_prose(SAMPLE);
        assert_eq!(p.clusters.len(), 2);
        assert_eq!(p.clusters[0].name, "Empirical Studies");
        assert_eq!(
            p.clusters[0].features,
            vec!["Opens with a problem statement", "Reports study results"]
        );
        assert_eq!(p.clusters[0].members, vec!["e1", "e4"]);
        assert_eq!(p.clusters[1].name, "Theoretical Contributions");
        assert_eq!(p.clusters[1].members, vec!["e2", "e3"]);
        // preamble line and the miscounted total
        assert_eq!(p.warnings.len(), 2, "{:?}", p.warnings);
        assert!(p.warnings[1].contains("states 3"));
    }

    #[test]
    fn round_trip() {
        let p = parse_cluster_prose(SAMPLE);
        let again = parse_cluster_prose(&to_prose(&p.clusters));
        let strip = |v: &[ProseCluster]| {
            v.iter()
                .map(|c| (c.name.clone(), c.features.clone(), c.members.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&again.clusters), strip(&p.clusters));
        assert!(again.warnings.is_empty());
    }

    #[test]
    fn inline_member_lists() {
        let p = parse_cluster_prose("Cluster 1: A\nExamples: e1, e2\n- Examples e3, e4.\n");
        assert_eq!(p.clusters[0].members, vec!["e1", "e2", "e3", "e4"]);
    }

    #[test]
    fn not_a_header() {
        assert_eq!(header("Clustering rules"), None);
        assert_eq!(header("Cluster one: x"), None);
        assert_eq!(header("cluster 3 - Mixed"), Some("Mixed".into()));
    }
}
