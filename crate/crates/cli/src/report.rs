//! Renders `report.md` from the artifacts in a workspace.

use std::fmt::Write;

use schemind_core::abstraction::SupportFinding;
use schemind_core::evidence::VerificationReport;
use schemind_core::{diff_revisions, ReviewStatus, Schema};

use crate::error::CliError;
use crate::workspace::Workspace;

fn verification_line(out: &mut String, stage: &str, r: &VerificationReport) {
    let _ = writeln!(
        out,
        "| {stage} | {} | {} | {} | {} | {} |",
        r.total, r.verified, r.unverifiable, r.unchecked, r.downgraded
    );
}

fn schema_outline(out: &mut String, schema: &Schema) {
    for d in &schema.dimensions {
        let _ = writeln!(out, "- **{}**: {}", d.name, d.description);
        for a in &d.attributes {
            let _ = writeln!(out, "  - {}: {}", a.concise, a.detailed);
        }
    }
    if !schema.overall_attributes.is_empty() {
        let _ = writeln!(out, "- *Overall*");
        for a in &schema.overall_attributes {
            let _ = writeln!(out, "  - {}: {}", a.concise, a.detailed);
        }
    }
}

fn support_lines(out: &mut String, findings: &[SupportFinding]) {
    for f in findings.iter().filter(|f| !f.passes) {
        let _ = writeln!(
            out,
            "- {} / {}: support {:.2}{}",
            f.scope,
            f.concise,
            f.support,
            if f.dropped { " (dropped)" } else { "" }
        );
    }
}

fn status_label(s: &ReviewStatus) -> &'static str {
    match s {
        ReviewStatus::Pending => "pending",
        ReviewStatus::Accepted => "accepted",
        ReviewStatus::Rejected => "rejected",
        ReviewStatus::Edited(_) => "edited",
    }
}

pub fn render(ws: &Workspace, warnings: &[String]) -> Result<String, CliError> {
    let set = ws.examples()?;
    let clustering = ws.clustering()?;
    let features = if ws.exists(crate::workspace::FEATURES) {
        ws.features()?
    } else {
        Default::default()
    };
    let dims = ws.dimensions()?;
    let attrs = ws.attributes()?;
    let overall = ws.overall()?;
    let generations = ws.generations()?;
    let reports = ws.reports()?;

    let mut out = String::new();
    let _ = writeln!(out, "# Schema report\n");
    let _ = writeln!(out, "Goal: {}\n", set.goal);
    let _ = writeln!(
        out,
        "{} examples, {} held out ({}), {} clusters.\n",
        set.examples.len(),
        set.holdout_ids.len(),
        set.holdout_ids
            .iter()
            .map(|i| i.as_str())
            .collect::<Vec<_>>()
            .join(", "),
        clustering.clusters.len()
    );

    for c in &clustering.clusters {
        let revisions = ws.revisions(&c.id)?;
        let latest = revisions.last().expect("revisions is non-empty");
        let _ = writeln!(out, "## {} ({})\n", c.name, c.id);
        let _ = writeln!(
            out,
            "Members: {}\n",
            c.member_ids.iter().map(|i| i.as_str()).collect::<Vec<_>>().join(", ")
        );
        let _ = writeln!(
            out,
            "Revisions: {}\n",
            revisions.iter().map(|s| s.id.as_str()).collect::<Vec<_>>().join(" -> ")
        );
        let _ = writeln!(out, "### Schema {}\n", latest.id);
        schema_outline(&mut out, latest);

        let _ = writeln!(out, "\n### Verification\n");
        let _ = writeln!(
            out,
            "| stage | cells | verified | unverifiable | unchecked | downgraded |"
        );
        let _ = writeln!(out, "|---|---|---|---|---|---|");
        if let Some(f) = features.get(&c.id) {
            verification_line(&mut out, "features", &f.report);
        }
        if let Some(d) = dims.get(&c.id) {
            verification_line(&mut out, "dimensions", &d.report);
        }
        if let Some(a) = attrs.get(&c.id) {
            verification_line(&mut out, "attributes", &a.report);
        }
        if let Some(o) = overall.get(&c.id) {
            verification_line(&mut out, "overall", &o.report);
        }

        let mut weak = String::new();
        if let Some(a) = attrs.get(&c.id) {
            support_lines(&mut weak, &a.support);
        }
        if let Some(o) = overall.get(&c.id) {
            support_lines(&mut weak, &o.support);
        }
        if !weak.is_empty() {
            let _ = writeln!(out, "\n### Weak support\n");
            out.push_str(&weak);
        }

        let ids: Vec<_> = revisions.iter().map(|s| &s.id).collect();
        let mut suggestions = String::new();
        for rep in reports.iter().filter(|r| {
            generations
                .iter()
                .any(|g| g.id == r.record_id && ids.contains(&&g.schema_id))
        }) {
            for s in &rep.suggestions {
                let _ = writeln!(
                    suggestions,
                    "- {} [{}] {}: {}",
                    s.id,
                    status_label(&s.status),
                    s.tag,
                    s.effective_text()
                );
            }
        }
        if !suggestions.is_empty() {
            let _ = writeln!(out, "\n### Suggestions\n");
            out.push_str(&suggestions);
        }

        for pair in revisions.windows(2) {
            let diff = diff_revisions(&pair[0], &pair[1]).map_err(schemind_core::StageError::from)?;
            let _ = writeln!(out, "\n### {} -> {}\n", pair[0].id, pair[1].id);
            let _ = writeln!(
                out,
                "dimensions +{} -{} renamed {}; attributes +{} -{} renamed {} reworded {}",
                diff.added_dimensions.len(),
                diff.removed_dimensions.len(),
                diff.renamed_dimensions.len(),
                diff.added_attributes.len(),
                diff.removed_attributes.len(),
                diff.renamed_attributes.len(),
                diff.changed_detailed.len()
            );
            for a in &diff.added_attributes {
                let _ = writeln!(out, "- added {} / {}", a.scope_name, a.attribute.concise);
            }
        }
        out.push('\n');
    }

    if !warnings.is_empty() {
        let _ = writeln!(out, "## Warnings\n");
        for w in warnings {
            let _ = writeln!(out, "- {w}");
        }
    }
    Ok(out)
}
