mod common;

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use common::*;
use proptest::prelude::*;
use schemind_core::abstraction::SchemaEdit;
use schemind_core::clustering::ClusterEdit;
use schemind_core::refinement::ReviewAction;
use schemind_service::events::verify;
use schemind_service::state::{fold, EventBody};
use schemind_service::store::EVENTS_FILE;
use schemind_service::{SessionEdit, SessionState, SessionStore};

/// A session with schemas and contrast reports for every cluster, built once.
fn base() -> &'static (tempfile::TempDir, String) {
    static BASE: OnceLock<(tempfile::TempDir, String)> = OnceLock::new();
    BASE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(dir.path(), replay_gateway()).unwrap();
        let id = store.create(&walkthrough_request()).unwrap().state().id.clone();
        let clusters = induce_all(&store, &id);
        apply_and_contrast(&store, &id, &clusters);
        (dir, id)
    })
}

fn copy_base(to: &Path) -> PathBuf {
    let (dir, id) = base();
    let target = to.join(id);
    std::fs::create_dir_all(&target).unwrap();
    std::fs::copy(dir.path().join(id).join(EVENTS_FILE), target.join(EVENTS_FILE)).unwrap();
    target
}

const LABELS: [&str; 4] = ["Alpha", "Beta", "Specific Population", "Study Method"];

fn edit_strategy() -> impl Strategy<Value = (u8, usize, usize, usize, usize)> {
    (0u8..7, 0usize..3, 0usize..5, 0usize..4, 0usize..3)
}

fn make_edit(state: &SessionState, (kind, c, d, l, a): (u8, usize, usize, usize, usize)) -> SessionEdit {
    let cluster = format!("c{}", c + 1);
    let scope = if d == 4 {
        "Overall".to_string()
    } else {
        format!("d{}", d + 1)
    };
    let label = LABELS[l].to_string();
    let existing = state
        .latest_schema(&cluster)
        .and_then(|s| {
            if d == 4 {
                s.overall_attributes.get(a).map(|x| x.concise.clone())
            } else {
                s.dimensions
                    .get(d)
                    .and_then(|dim| dim.attributes.get(a))
                    .map(|x| x.concise.clone())
            }
        })
        .unwrap_or_else(|| label.clone());
    let schema = |edit| SessionEdit::Schema {
        cluster: cluster.as_str().into(),
        edit,
    };
    match kind {
        0 => schema(SchemaEdit::RenameAttribute {
            scope,
            concise: existing,
            new_concise: label,
            new_detailed: (a == 0).then(|| "Changed description.".to_string()),
        }),
        1 => schema(SchemaEdit::AddAttribute {
            scope,
            detailed: format!("Describes {label}."),
            concise: label,
        }),
        2 => schema(SchemaEdit::RemoveAttribute {
            scope,
            concise: existing,
        }),
        3 => schema(SchemaEdit::RenameDimension {
            dimension: scope,
            name: label,
        }),
        4 => schema(SchemaEdit::RemoveDimension { dimension: scope }),
        5 => {
            let (record, suggestion) = state
                .reports
                .iter()
                .flat_map(|(r, rep)| rep.suggestions.iter().map(move |s| (r.clone(), s.id.clone())))
                .nth(c)
                .unwrap_or_else(|| ("c1-r0.g1".into(), "c1-r0.g1.s1".into()));
            let action = match a {
                0 => ReviewAction::Accept,
                1 => ReviewAction::Reject,
                _ => ReviewAction::Edit(label),
            };
            SessionEdit::Review {
                record,
                suggestion,
                action,
            }
        }
        _ => SessionEdit::Cluster {
            edit: ClusterEdit::RenameCluster {
                cluster: cluster.as_str().into(),
                name: label,
            },
        },
    }
}

fn committed_edits(dir: &Path) -> usize {
    let events = verify(&std::fs::read(dir.join(EVENTS_FILE)).unwrap()).unwrap();
    events
        .iter()
        .filter(|e| matches!(e.body, EventBody::EditCommitted { .. }))
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn edit_sequences_keep_replay_equality(seq in prop::collection::vec(edit_strategy(), 1..12)) {
        let tmp = tempfile::tempdir().unwrap();
        let session_dir = copy_base(tmp.path());
        let id = base().1.clone();
        let store = SessionStore::new(tmp.path(), replay_gateway()).unwrap();
        let before = committed_edits(&session_dir);
        let mut accepted = 0;
        for pick in seq {
            let edit = make_edit(&store.session(&id).unwrap().state(), pick);
            if store.submit_edit(&id, edit).is_ok() {
                accepted += 1;
            }
        }
        let live = store.session(&id).unwrap().state();
        prop_assert_eq!(committed_edits(&session_dir) - before, accepted);
        let events = verify(&std::fs::read(session_dir.join(EVENTS_FILE)).unwrap()).unwrap();
        prop_assert_eq!(&fold(&events).unwrap(), &*live);
        let reopened = SessionStore::new(tmp.path(), replay_gateway()).unwrap();
        prop_assert_eq!(&*reopened.session(&id).unwrap().state(), &*live);
    }
}

#[test]
fn concurrent_edits_are_linearized() {
    let tmp = tempfile::tempdir().unwrap();
    let session_dir = copy_base(tmp.path());
    let id = base().1.clone();
    let store = Arc::new(SessionStore::new(tmp.path(), replay_gateway()).unwrap());
    let handles: Vec<_> = (0..12)
        .map(|i| {
            let store = store.clone();
            let id = id.clone();
            std::thread::spawn(move || {
                let cluster = format!("c{}", i % 3 + 1);
                let edit = SessionEdit::Schema {
                    cluster: cluster.as_str().into(),
                    edit: SchemaEdit::AddAttribute {
                        scope: "Overall".into(),
                        detailed: format!("Pattern {i}."),
                        concise: format!("Pattern {i}"),
                    },
                };
                store.submit_edit(&id, edit).is_ok()
            })
        })
        .collect();
    assert!(handles.into_iter().all(|h| h.join().unwrap()));
    let live = store.session(&id).unwrap().state();
    for i in 0..12 {
        let schema = live.latest_schema(&format!("c{}", i % 3 + 1)).unwrap();
        assert!(schema
            .overall_attributes
            .iter()
            .any(|a| a.concise == format!("Pattern {i}")));
    }
    let events = verify(&std::fs::read(session_dir.join(EVENTS_FILE)).unwrap()).unwrap();
    assert_eq!(fold(&events).unwrap(), *live);
}
