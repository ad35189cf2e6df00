mod common;

use std::fs::{self, OpenOptions};
use std::io::Write;

use common::{measurement, request, Walker};
use relayplace_core::channel::mw_to_dbm;
use relayplace_core::learning::{ProjectionBox, Targets};
use relayplace_core::policy::PolicyKind;
use relayplace_service::session::Recommendation;
use relayplace_service::store::recover;
use relayplace_service::{Placement, SessionStore};

fn confirm_recommended(store: &SessionStore, id: &str, rec: Recommendation) {
    let Recommendation::Place { u, gamma_mw, .. } = rec else {
        panic!("expected a placement, got {rec:?}")
    };
    store
        .confirm(
            id,
            Placement {
                u,
                gamma_dbm: mw_to_dbm(gamma_mw).unwrap(),
                q_out: None,
                override_recommendation: false,
                expected_version: None,
            },
        )
        .unwrap();
}

/// Runs `rounds` full rounds and leaves one partial round in progress.
fn drive(store: &SessionStore, id: &str, walk: &mut Walker, rounds: usize) {
    let s = store.get(id).unwrap();
    let levels = s.powers().unwrap().levels().to_vec();
    for _ in 0..rounds {
        let mut rec = None;
        for r in 1..=5 {
            rec = Some(
                store
                    .measure(id, measurement(r, walk.readings(r, &levels)))
                    .unwrap()
                    .recommendation,
            );
        }
        confirm_recommended(store, id, rec.unwrap());
    }
    store
        .measure(id, measurement(2, walk.readings(2, &levels)))
        .unwrap();
}

fn adaptive_request() -> relayplace_service::CreateSession {
    let mut req = request(PolicyKind::Oelal);
    req.policy.targets = Some(Targets {
        q_bar: 0.002,
        n_bar: 0.45,
    });
    req.policy.bounds = Some(ProjectionBox { a2: 1e6, a3: 1e9 });
    req
}

#[test]
fn restart_recovers_identical_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let (ids, before) = {
        let store = SessionStore::open(dir.path()).unwrap();
        let mut walk = Walker::new(21);
        let a = store.create(adaptive_request()).unwrap().id;
        let b = store.create(request(PolicyKind::OelRatio)).unwrap().id;
        let c = store.create(request(PolicyKind::HeuEl)).unwrap().id;
        drive(&store, &a, &mut walk, 7);
        drive(&store, &b, &mut walk, 4);
        let ids = vec![a, b, c];
        let before: Vec<_> = ids.iter().map(|id| store.get(id).unwrap()).collect();
        (ids, before)
    };
    let store = SessionStore::open(dir.path()).unwrap();
    for (id, s) in ids.iter().zip(&before) {
        assert_eq!(&store.get(id).unwrap(), s);
        assert_eq!(store.trace_csv(id).unwrap().lines().count(), s.history.len() + 1);
    }
    assert_eq!(store.list().len(), 3);
}

#[test]
fn log_replay_rebuilds_missing_stale_or_corrupt_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let id = store.create(adaptive_request()).unwrap().id;
    let sdir = dir.path().join("sessions").join(&id);
    let mut walk = Walker::new(22);
    drive(&store, &id, &mut walk, 2);
    let stale = fs::read(sdir.join("snapshot.json")).unwrap();
    let levels = store.get(&id).unwrap().powers().unwrap().levels().to_vec();
    let mut rec = None;
    for r in [1, 3, 4, 5] {
        rec = Some(
            store
                .measure(&id, measurement(r, walk.readings(r, &levels)))
                .unwrap()
                .recommendation,
        );
    }
    confirm_recommended(&store, &id, rec.unwrap());
    drive(&store, &id, &mut walk, 3);
    let want = store.get(&id).unwrap();
    let log = fs::read_to_string(sdir.join("events.jsonl")).unwrap();
    assert_eq!(log.lines().count() as u64, want.version);

    fs::write(sdir.join("snapshot.json"), &stale).unwrap();
    assert_eq!(recover(&sdir).unwrap(), want);

    fs::write(sdir.join("snapshot.json"), b"{\"id\": ").unwrap();
    assert_eq!(recover(&sdir).unwrap(), want);

    fs::remove_file(sdir.join("snapshot.json")).unwrap();
    assert_eq!(recover(&sdir).unwrap(), want);
}

#[test]
fn torn_tail_is_dropped_and_repaired() {
    let dir = tempfile::tempdir().unwrap();
    let mut walk = Walker::new(23);
    let (id, want) = {
        let store = SessionStore::open(dir.path()).unwrap();
        let id = store.create(request(PolicyKind::OelRatio)).unwrap().id;
        drive(&store, &id, &mut walk, 3);
        let want = store.get(&id).unwrap();
        (id, want)
    };
    let log = dir.path().join("sessions").join(&id).join("events.jsonl");
    OpenOptions::new()
        .append(true)
        .open(&log)
        .unwrap()
        .write_all(br#"{"seq": 99, "event": "meas"#)
        .unwrap();
    {
        let store = SessionStore::open(dir.path()).unwrap();
        assert_eq!(store.get(&id).unwrap(), want);
        let levels = want.powers().unwrap().levels().to_vec();
        store
            .measure(&id, measurement(3, walk.readings(3, &levels)))
            .unwrap();
    }
    let text = fs::read_to_string(&log).unwrap();
    assert!(!text.contains("\"meas\""));
    assert_eq!(text.lines().count() as u64, want.version + 1);
    let store = SessionStore::open(dir.path()).unwrap();
    assert_eq!(store.get(&id).unwrap().version, want.version + 1);
    assert_eq!(store.get(&id).unwrap().remaining(), vec![1, 4, 5]);
}

#[test]
fn rejected_requests_are_not_logged() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let id = store.create(request(PolicyKind::HeuEl)).unwrap().id;
    let log = dir.path().join("sessions").join(&id).join("events.jsonl");
    let before = fs::read(&log).unwrap();
    assert!(store.measure(&id, measurement(9, vec![0.1; 5])).is_err());
    assert!(store.measure(&id, measurement(1, vec![2.0; 5])).is_err());
    assert!(store
        .confirm(
            &id,
            Placement {
                u: 1,
                gamma_dbm: 0.0,
                q_out: None,
                override_recommendation: true,
                expected_version: None
            }
        )
        .is_err());
    assert_eq!(fs::read(&log).unwrap(), before);
}
