//! Re-records `fixtures/walkthrough/transcript.jsonl` with the scripted model.
//!
//! `cargo run -p schemind-core --example record_walkthrough [out]`

use std::path::{Path, PathBuf};
use std::sync::Arc;

use schemind_core::gateway::{Transcript, TranscriptWriter};
use schemind_core::ingest::{load_examples, IngestManifest, IngestOptions};
use schemind_core::pipeline::{run_pipeline, PipelineConfig};
use schemind_core::refinement::{align_segments, run_baseline};
use schemind_core::testkit::ScriptedModel;
use schemind_core::{Gateway, ModelParams, TranscriptMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/walkthrough");
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or(root.join("transcript.jsonl"));
    let tmp = tempfile::tempdir()?;
    let raw = tmp.path().join("raw.jsonl");
    let gateway = Gateway::with_transcript(
        TranscriptMode::Record(raw.clone()),
        Some(Arc::new(ScriptedModel)),
        ModelParams::default(),
    )?;
    let manifest = IngestManifest::load(&root.join("manifest.json"), None)?;
    let set = load_examples(&manifest, &IngestOptions::default())?;
    for iterations in [0, 1, 2] {
        let config = PipelineConfig {
            iterations,
            ..PipelineConfig::default()
        };
        let run = run_pipeline(set.clone(), &config, &gateway)?;
        for c in &run.clusters {
            eprintln!(
                "iterations={iterations} {} members={:?} revisions={} records={:?}",
                c.cluster.name,
                c.cluster.member_ids,
                c.revisions.len(),
                c.records.iter().map(|r| r.gold_id.clone()).collect::<Vec<_>>()
            );
        }
        if iterations == 1 {
            for c in &run.clusters {
                for r in &c.records {
                    let gold = run
                        .set
                        .get(r.gold_id.as_ref().expect("gold").as_str())
                        .expect("gold example");
                    align_segments(&c.revisions[0], r, gold, &gateway)?;
                }
            }
        }
        if iterations == 0 {
            eprintln!("holdout: {:?}", run.set.holdout_ids);
        }
    }
    run_baseline(&set, &gateway)?;
    let fifteen = IngestManifest::load(&root.join("manifest15.json"), None)?;
    run_baseline(&load_examples(&fifteen, &IngestOptions::default())?, &gateway)?;
    // Stable order regardless of thread scheduling.
    let mut entries = Transcript::load(&raw)?.entries().to_vec();
    entries.sort_by(|a, b| (&a.template_id, &a.fingerprint).cmp(&(&b.template_id, &b.fingerprint)));
    if out.exists() {
        std::fs::remove_file(&out)?;
    }
    let mut writer = TranscriptWriter::open(&out)?;
    for e in entries {
        writer.append(e)?;
    }
    eprintln!("wrote {} entries to {}", writer.len(), out.display());
    Ok(())
}
