//! Session store behaviour without HTTP: parity with oracle mode, queue
//! arithmetic, validation, persistence and restart recovery.

mod common;

use std::fs;

use common::{fixture, human, oracle};
use supercd::session::run_session;
use supercd_service::{ServiceError, SessionStatus, SessionStore, Submission, SubmittedRecord};

#[test]
fn oracle_session_completes_on_start() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let reply = store.start(fx.request(oracle(5))).unwrap();
    assert_eq!(reply.status, SessionStatus::Complete);
    assert!(reply.pending.is_empty());
    let result = store.result(&reply.session_id).unwrap();
    assert!(result.selected.len() <= 5);
    assert_eq!(result.augmented.len(), fx.task.illustrative.len() + result.selected.len());
}

#[test]
fn human_labels_equal_to_oracle_reproduce_the_oracle_result() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();

    let oracle_run = store.start(fx.request(oracle(5))).unwrap();
    let oracle_result = store.result(&oracle_run.session_id).unwrap();

    let started = store.start(fx.request(human(5))).unwrap();
    assert_eq!(started.status, SessionStatus::AwaitingAnnotation);
    assert!(!started.pending.is_empty() && started.pending.len() <= 5);
    let state = store.get(&started.session_id).unwrap();
    let ids: Vec<String> = state.pending.iter().map(|p| p.instance_id.clone()).collect();
    let done = store.submit(&started.session_id, fx.oracle_submission(&state, &ids)).unwrap();
    assert_eq!(done.status, SessionStatus::Complete);

    let human_result = store.result(&started.session_id).unwrap();
    assert!(human_result.records.iter().all(|r| r.annotator == "human" && r.timestamp.is_some()));
    assert_eq!(human_result.without_provenance(), oracle_result.without_provenance());

    // and both match the in-process pipeline
    let direct = run_session(&fx.task, &oracle(5), fx.world.components()).unwrap();
    assert_eq!(direct.without_provenance(), oracle_result.without_provenance());
}

#[test]
fn partial_submission_shrinks_the_queue() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let started = store.start(fx.request(human(5))).unwrap();
    let state = store.get(&started.session_id).unwrap();
    let first = vec![state.pending[0].instance_id.clone()];
    let after = store.submit(&started.session_id, fx.oracle_submission(&state, &first)).unwrap();
    assert_eq!(after.status, SessionStatus::AwaitingAnnotation);
    assert_eq!(after.pending.len(), state.pending.len() - 1);
    assert_eq!(after.records.len(), 1);
    assert!(matches!(store.result(&started.session_id), Err(ServiceError::NoResult(_))));
}

#[test]
fn submissions_are_validated_atomically() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let id = store.start(fx.request(human(5))).unwrap().session_id;
    let state = store.get(&id).unwrap();
    let first = state.pending[0].instance_id.clone();

    // an unknown key next to a valid record rejects the whole submission
    let mut sub = fx.oracle_submission(&state, &[first.clone()]);
    sub.records.push(SubmittedRecord {
        instance_id: first.clone(),
        decisions: [("nope:0:1".to_string(), true)].into(),
        annotator: None,
    });
    match store.submit(&id, sub) {
        Err(e @ ServiceError::UnknownKeys(_)) => {
            assert_eq!(e.status(), 422);
            assert!(e.to_string().contains("nope:0:1"));
        }
        other => panic!("expected unknown keys, got {other:?}"),
    }
    assert_eq!(store.get(&id).unwrap().records.len(), 0);

    // an instance that was never selected
    let stranger = Submission {
        records: vec![SubmittedRecord {
            instance_id: fx.task.test[0].clone(),
            decisions: fx.world.corpus.get(&fx.task.test[0]).unwrap().mention_keys().into_iter().map(|k| (k, false)).collect(),
            annotator: None,
        }],
    };
    assert!(matches!(store.submit(&id, stranger), Err(ServiceError::UnknownKeys(_))));

    // missing decisions
    let mut partial = fx.oracle_submission(&state, &[first.clone()]);
    let key = partial.records[0].decisions.keys().next().unwrap().clone();
    partial.records[0].decisions.remove(&key);
    match store.submit(&id, partial) {
        Err(ServiceError::Incomplete(keys)) => assert_eq!(keys, vec![key]),
        other => panic!("expected incomplete, got {other:?}"),
    }

    // double submit
    store.submit(&id, fx.oracle_submission(&state, &[first.clone()])).unwrap();
    match store.submit(&id, fx.oracle_submission(&state, &[first.clone()])) {
        Err(e @ ServiceError::AlreadyAnnotated(_)) => assert_eq!(e.status(), 409),
        other => panic!("expected conflict, got {other:?}"),
    }
    assert_eq!(store.get(&id).unwrap().records.len(), 1);
}

#[test]
fn completed_sessions_refuse_annotations() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let id = store.start(fx.request(oracle(3))).unwrap().session_id;
    let state = store.get(&id).unwrap();
    let sub = Submission { records: vec![] };
    match store.submit(&id, sub) {
        Err(e @ ServiceError::WrongState { .. }) => {
            assert_eq!(e.code(), "invalid_state");
            assert!(e.to_string().contains("complete"));
        }
        other => panic!("expected state error, got {other:?}"),
    }
    assert_eq!(store.get(&id).unwrap(), state);
}

#[test]
fn start_errors_name_the_problem() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();

    let mut req = fx.request(human(5));
    req.ontology = dir.path().join("absent/ontology.jsonl");
    match store.start(req) {
        Err(e @ ServiceError::MissingArtifact(_)) => {
            assert_eq!(e.status(), 404);
            assert!(e.to_string().contains("absent/ontology.jsonl"));
        }
        other => panic!("expected missing artifact, got {other:?}"),
    }

    let mut bad = human(5);
    bad.shots = 0;
    bad.n_types = 0;
    match store.start(fx.request(bad)) {
        Err(ServiceError::InvalidConfig(fields)) => {
            assert!(fields.iter().any(|f| f.starts_with("shots")), "{fields:?}");
            assert!(fields.iter().any(|f| f.starts_with("n_types")), "{fields:?}");
        }
        other => panic!("expected invalid config, got {other:?}"),
    }

    assert!(matches!(store.get("missing"), Err(ServiceError::SessionNotFound(_))));
    assert!(store.list().is_empty());
}

#[test]
fn restart_recovers_every_session() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (open_id, done_id, before) = {
        let store = SessionStore::open(dir.path()).unwrap();
        let open_id = store.start(fx.request(human(5))).unwrap().session_id;
        let state = store.get(&open_id).unwrap();
        store.submit(&open_id, fx.oracle_submission(&state, &[state.pending[0].instance_id.clone()])).unwrap();
        let done_id = store.start(fx.request(oracle(5))).unwrap().session_id;
        let before = (store.get(&open_id).unwrap(), store.get(&done_id).unwrap(), store.trace(&open_id).unwrap());
        (open_id, done_id, before)
    };

    for (id, complete) in [(&open_id, false), (&done_id, true)] {
        let files: Vec<String> = fs::read_dir(dir.path().join(id))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert!(files.contains(&"state.json".to_string()) && files.contains(&"trace.json".to_string()));
        assert_eq!(files.contains(&"result.json".to_string()), complete);
        assert!(files.iter().all(|f| !f.ends_with(".tmp")), "{files:?}");
    }

    let store = SessionStore::open(dir.path()).unwrap();
    assert_eq!(store.list().len(), 2);
    assert_eq!(store.get(&open_id).unwrap(), before.0);
    assert_eq!(store.get(&done_id).unwrap(), before.1);
    assert_eq!(store.trace(&open_id).unwrap(), before.2);

    // the recovered session still finishes, reloading its artifacts
    let state = store.get(&open_id).unwrap();
    let rest: Vec<String> = state.pending.iter().map(|p| p.instance_id.clone()).collect();
    let done = store.submit(&open_id, fx.oracle_submission(&state, &rest)).unwrap();
    assert_eq!(done.status, SessionStatus::Complete);
    assert_eq!(
        store.result(&open_id).unwrap().without_provenance(),
        store.result(&done_id).unwrap().without_provenance()
    );
}
