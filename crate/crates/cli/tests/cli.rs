use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const GOAL: &str = "write an HCI paper abstract";

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/walkthrough")
}

fn transcript() -> String {
    fixture().join("transcript.jsonl").display().to_string()
}

fn schemind(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_schemind"))
        .args(args)
        .env_remove("SCHEMEX_API_KEY")
        .env_remove("SCHEMEX_MODEL")
        .env_remove("SCHEMEX_BASE_URL")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(args: &[&str]) {
    let out = schemind(args);
    assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
}

/// Every file under `dir` keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn run_replay(out: &Path, iterations: &str) {
    let manifest = fixture().join("manifest.json");
    ok(&[
        "run",
        "--goal",
        GOAL,
        "--examples",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--iterations",
        iterations,
        "--replay",
        &transcript(),
    ]);
}

fn stage(out: &Path, name: &str, extra: &[&str]) {
    let mut args = vec!["stage", name, "--out", out.to_str().unwrap(), "--replay"];
    let t = transcript();
    args.push(&t);
    args.extend_from_slice(extra);
    ok(&args);
}

fn stage_chain(out: &Path, tail: &[(&str, &[&str])]) {
    let manifest = fixture().join("manifest.json");
    stage(
        out,
        "cluster",
        &["--goal", GOAL, "--examples", manifest.to_str().unwrap()],
    );
    for name in ["features", "dimensions", "attributes", "overall"] {
        stage(out, name, &[]);
    }
    for (name, extra) in tail {
        stage(out, name, extra);
    }
}

#[test]
fn missing_goal_is_a_usage_error() {
    let out = schemind(&["run", "--examples", "x", "--out", "y"]);
    assert_eq!(code(&out), 64);
    assert!(stderr(&out).contains("--goal"));
}

#[test]
fn stage_typo_lists_the_stages() {
    let out = schemind(&["stage", "dimensoins", "--out", "y"]);
    assert_eq!(code(&out), 64);
    let err = stderr(&out);
    for s in [
        "cluster",
        "features",
        "dimensions",
        "attributes",
        "overall",
        "apply",
        "contrast",
        "iterate",
    ] {
        assert!(err.contains(s), "{s} missing from {err}");
    }
}

#[test]
fn help_exits_zero() {
    let out = schemind(&["--help"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("stage"));
}

#[test]
fn stage_without_earlier_artifacts_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = schemind(&[
        "stage",
        "dimensions",
        "--out",
        dir.path().to_str().unwrap(),
        "--replay",
        &transcript(),
    ]);
    assert_eq!(code(&out), 64, "{}", stderr(&out));
    assert!(stderr(&out).contains("examples.json"));
}

#[test]
fn cluster_stage_needs_its_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = schemind(&[
        "stage",
        "cluster",
        "--out",
        dir.path().to_str().unwrap(),
        "--replay",
        &transcript(),
    ]);
    assert_eq!(code(&out), 64);
}

#[test]
fn http_backend_without_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture().join("manifest.json");
    let out = schemind(&[
        "run",
        "--goal",
        GOAL,
        "--examples",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 64);
    assert!(stderr(&out).contains("SCHEMEX_API_KEY"), "{}", stderr(&out));
}

#[test]
fn transcript_miss_is_not_a_success() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let manifest = fixture().join("manifest.json");
    let out = schemind(&[
        "run",
        "--goal",
        GOAL,
        "--examples",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "--replay",
        empty.to_str().unwrap(),
    ]);
    assert_ne!(code(&out), 0);
}

#[test]
fn replay_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_replay(&a, "1");
    run_replay(&b, "1");
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.contains_key("report.md"));
    assert!(ta.contains_key("clusters/c2/schema.r1.json"));
    assert_eq!(ta, tb);
}

#[test]
fn stage_chain_matches_run_without_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let (chained, whole) = (dir.path().join("chained"), dir.path().join("whole"));
    stage_chain(&chained, &[]);
    run_replay(&whole, "0");
    let mut expected = tree(&whole);
    assert!(expected.remove("report.md").is_some());
    assert_eq!(tree(&chained), expected);
}

#[test]
fn stage_chain_with_accept_all_matches_one_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let (chained, whole) = (dir.path().join("chained"), dir.path().join("whole"));
    stage_chain(
        &chained,
        &[("apply", &[]), ("contrast", &[]), ("iterate", &["--auto-accept-all"])],
    );
    run_replay(&whole, "1");
    let mut expected = tree(&whole);
    expected.remove("report.md");
    assert_eq!(tree(&chained), expected);
}

#[test]
fn iterate_without_accepted_suggestions_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    stage_chain(&out_dir, &[("apply", &[]), ("contrast", &[])]);
    let out = schemind(&[
        "stage",
        "iterate",
        "--out",
        out_dir.to_str().unwrap(),
        "--replay",
        &transcript(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(!out_dir.join("clusters/c1/schema.r1.json").exists());
}

#[test]
fn record_then_replay_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.jsonl");
    let manifest = fixture().join("manifest.json");
    let common = |out: &str| {
        vec![
            "run".to_string(),
            "--goal".into(),
            GOAL.into(),
            "--examples".into(),
            manifest.display().to_string(),
            "--out".into(),
            dir.path().join(out).display().to_string(),
        ]
    };
    let mut rec = common("rec");
    rec.extend([
        "--backend".into(),
        "scripted".into(),
        "--record".into(),
        t.display().to_string(),
    ]);
    ok(&rec.iter().map(String::as_str).collect::<Vec<_>>());
    let mut rep = common("rep");
    rep.extend(["--replay".into(), t.display().to_string()]);
    ok(&rep.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(tree(&dir.path().join("rec")), tree(&dir.path().join("rep")));
}

#[test]
fn baseline_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture().join("manifest15.json");
    ok(&[
        "baseline",
        "--goal",
        GOAL,
        "--examples",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--replay",
        &transcript(),
    ]);
    let text = std::fs::read_to_string(dir.path().join("baseline.md")).unwrap();
    assert!(text.trim().len() > 20);
}

#[test]
fn baseline_on_an_empty_directory_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = schemind(&[
        "baseline",
        "--goal",
        GOAL,
        "--examples",
        empty.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
        "--replay",
        &transcript(),
    ]);
    assert_eq!(code(&out), 64, "{}", stderr(&out));
}
