use std::collections::BTreeSet;
use std::sync::Arc;

use schemind_core::gateway::{ChatBackend, HttpBackend};
use schemind_core::ingest::{load_examples, IngestManifest, IngestOptions};
use schemind_core::refinement::run_baseline;
use schemind_core::testkit::ScriptedModel;
use schemind_core::{Gateway, ModelParams, StageError, TranscriptMode};
use schemind_service::SessionStore;

use crate::args::{Backend, BaselineArgs, GatewayArgs, RunArgs, ServeArgs, StageArgs, StageName, TuningArgs};
use crate::error::CliError;
use crate::report;
use crate::stages::{self, Tuning};
use crate::workspace::{Workspace, BASELINE, REPORT};

pub fn build_gateway(args: &GatewayArgs) -> Result<Gateway, CliError> {
    let params = ModelParams {
        model: args.model.clone(),
        ..ModelParams::default()
    };
    if let Some(path) = &args.replay {
        return Ok(Gateway::with_transcript(
            TranscriptMode::Replay(path.clone()),
            None,
            params,
        )?);
    }
    let backend: Arc<dyn ChatBackend> = match args.backend {
        Backend::Scripted => Arc::new(ScriptedModel),
        Backend::Http => Arc::new(HttpBackend::from_env(&args.base_url).map_err(|e| CliError::Usage(e.to_string()))?),
    };
    Ok(match &args.record {
        Some(path) => Gateway::with_transcript(TranscriptMode::Record(path.clone()), Some(backend), params)?,
        None => Gateway::live(backend, params),
    })
}

impl From<schemind_core::GatewayError> for CliError {
    fn from(e: schemind_core::GatewayError) -> Self {
        CliError::Stage(e.into())
    }
}

fn tuning(args: &TuningArgs) -> Tuning {
    Tuning {
        k: args.k as usize,
        holdout_ratio: args.holdout_ratio,
        seed: args.seed,
        strict: args.strict,
    }
}

fn report_warnings(warnings: &[String]) {
    for w in warnings {
        tracing::warn!("{w}");
    }
}

pub fn run(args: &RunArgs) -> Result<(), CliError> {
    let gateway = build_gateway(&args.gateway)?;
    let tuning = tuning(&args.tuning);
    let ws = Workspace::create(&args.out)?;
    let (set, mut warnings) = stages::ingest(&args.input.goal, &args.input.examples, &tuning, &gateway)?;
    warnings.extend(stages::cluster(&ws, &set, &gateway)?);
    warnings.extend(stages::features(&ws, &tuning, &gateway)?);
    warnings.extend(stages::dimensions(&ws, &tuning, &gateway)?);
    warnings.extend(stages::attributes(&ws, &tuning, &gateway)?);
    warnings.extend(stages::overall(&ws, &tuning, &gateway)?);
    let mut active: BTreeSet<_> = ws.clustering()?.clusters.into_iter().map(|c| c.id).collect();
    for _ in 0..args.iterations {
        if active.is_empty() {
            break;
        }
        warnings.extend(stages::apply(&ws, Some(&active), &tuning, &gateway)?);
        warnings.extend(stages::contrast_stage(&ws, Some(&active), true, &gateway)?);
        let out = stages::iterate(&ws, Some(&active), false, &gateway)?;
        warnings.extend(out.warnings);
        active = out.advanced;
    }
    ws.write_bytes(REPORT, report::render(&ws, &warnings)?.as_bytes())?;
    report_warnings(&warnings);
    Ok(())
}

pub fn stage(args: &StageArgs) -> Result<(), CliError> {
    let gateway = build_gateway(&args.gateway)?;
    let tuning = tuning(&args.tuning);
    let ws = Workspace::create(&args.out)?;
    let warnings = match args.stage {
        StageName::Cluster => {
            let (Some(goal), Some(examples)) = (&args.goal, &args.examples) else {
                return Err(CliError::Usage("stage cluster needs --goal and --examples".into()));
            };
            let (set, mut warnings) = stages::ingest(goal, examples, &tuning, &gateway)?;
            warnings.extend(stages::cluster(&ws, &set, &gateway)?);
            warnings
        }
        StageName::Features => stages::features(&ws, &tuning, &gateway)?,
        StageName::Dimensions => stages::dimensions(&ws, &tuning, &gateway)?,
        StageName::Attributes => stages::attributes(&ws, &tuning, &gateway)?,
        StageName::Overall => stages::overall(&ws, &tuning, &gateway)?,
        StageName::Apply => stages::apply(&ws, None, &tuning, &gateway)?,
        StageName::Contrast => stages::contrast_stage(&ws, None, false, &gateway)?,
        StageName::Iterate => {
            let out = stages::iterate(&ws, None, args.accept_all, &gateway)?;
            if out.advanced.is_empty() {
                report_warnings(&out.warnings);
                return Err(StageError::NothingToApply.into());
            }
            out.warnings
        }
    };
    report_warnings(&warnings);
    Ok(())
}

pub fn baseline(args: &BaselineArgs) -> Result<(), CliError> {
    let gateway = build_gateway(&args.gateway)?;
    let ws = Workspace::create(&args.out)?;
    let manifest = IngestManifest::load(&args.input.examples, Some(&args.input.goal)).map_err(StageError::from)?;
    let options = IngestOptions {
        gateway: Some(&gateway),
        ..IngestOptions::default()
    };
    let set = load_examples(&manifest, &options)?;
    let text = run_baseline(&set, &gateway)?;
    ws.write_bytes(BASELINE, ensure_newline(text).as_bytes())
}

fn ensure_newline(mut text: String) -> String {
    if !text.ends_with('\n') {
        text.push('\n');
    }
    text
}

pub fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let gateway = Arc::new(build_gateway(&args.gateway)?);
    let store = Arc::new(SessionStore::new(&args.data_dir, gateway).map_err(|e| CliError::Io(e.to_string()))?);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    eprintln!("listening on http://{}", args.addr);
    runtime
        .block_on(schemind_service::serve(store, args.addr))
        .map_err(|e| CliError::Io(format!("{}: {e}", args.addr)))
}
