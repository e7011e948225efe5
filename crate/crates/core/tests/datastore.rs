mod common;

use std::fs;

use common::{run_plan, shop_env, Plan};
use trajsynth_core::datastore::{compute_stats, manifest_digest, Datastore, DatastoreError, StatsScope};
use trajsynth_core::orchestrator::RunConfig;
use trajsynth_core::Trajectory;

fn sample(id: &str) -> Trajectory {
    let plan = Plan::new(&["type [3] [sofa]", "click [7]", "scroll [down]"]);
    run_plan(&shop_env(), "fixture://shop/home", id, &plan, &RunConfig::default())
}

#[test]
fn load_is_inverse_of_persist() {
    let dir = tempfile::tempdir().unwrap();
    let store = Datastore::new(dir.path());
    let t = sample("r1");
    let rec = store.persist(&t).unwrap();
    assert_eq!(rec.steps.len(), 3);
    for s in &rec.steps {
        let kinds: Vec<&str> = s.artifacts.keys().map(String::as_str).collect();
        assert_eq!(kinds, ["a11y_json", "a11y_text", "html", "screenshot", "som_screenshot"]);
    }
    let back = store.load("r1").unwrap();
    assert_eq!(back.record, rec);
    assert_eq!(back.observations, t.observations);
    assert_eq!(back.final_observation, t.final_observation);
    assert_eq!(store.list_ids().unwrap(), ["r1"]);
    assert_eq!(manifest_digest(&back.record), manifest_digest(&rec));
}

#[test]
fn persist_overwrites_and_leaves_no_scratch() {
    let dir = tempfile::tempdir().unwrap();
    let store = Datastore::new(dir.path());
    store.persist(&sample("r1")).unwrap();
    store.persist(&sample("r1")).unwrap();
    let names: Vec<String> =
        fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(names, ["r1"]);
}

#[test]
fn rejects_unusable_ids_and_inconsistent_records() {
    let dir = tempfile::tempdir().unwrap();
    let store = Datastore::new(dir.path());
    for id in ["", ".hidden", "a/b"] {
        assert!(matches!(store.persist(&sample(id)), Err(DatastoreError::InvalidRecord { .. })), "{id:?}");
    }
    let mut t = sample("r2");
    t.observations.pop();
    assert!(matches!(store.persist(&t), Err(DatastoreError::InvalidRecord { .. })));
    assert!(store.list_ids().unwrap().is_empty());
}

#[test]
fn missing_artifact_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let store = Datastore::new(dir.path());
    store.persist(&sample("r1")).unwrap();
    fs::remove_file(dir.path().join("r1/steps/001.png")).unwrap();
    match store.load_record("r1") {
        Err(DatastoreError::MissingArtifact { id, path }) => {
            assert_eq!(id, "r1");
            assert_eq!(path, "steps/001.png");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn tampered_artifact_fails_digest_check() {
    let dir = tempfile::tempdir().unwrap();
    let store = Datastore::new(dir.path());
    let rec = store.persist(&sample("r1")).unwrap();
    fs::write(dir.path().join("r1/steps/000.a11y.txt"), "changed").unwrap();
    assert!(matches!(store.step_a11y_text(&rec, 0), Err(DatastoreError::CorruptManifest { .. })));
    assert!(matches!(store.load("r1"), Ok(_)), "a11y text is not part of the observation");
    fs::write(dir.path().join("r1/steps/000.html"), "changed").unwrap();
    assert!(matches!(store.load("r1"), Err(DatastoreError::CorruptManifest { .. })));
}

#[test]
fn corrupt_manifest_is_skipped_by_stats() {
    let dir = tempfile::tempdir().unwrap();
    let store = Datastore::new(dir.path());
    store.persist(&sample("r1")).unwrap();
    store.persist(&sample("r2")).unwrap();
    fs::write(dir.path().join("r2/manifest.json"), "{ not json").unwrap();
    assert!(matches!(store.load_record("r2"), Err(DatastoreError::CorruptManifest { .. })));
    assert!(matches!(store.load_record("r3"), Err(DatastoreError::NotFound(_))));
    let stats = compute_stats(&store, StatsScope::All).unwrap();
    assert_eq!(stats.n_corrupt, 1);
    assert_eq!(stats.n_total, 1);
    assert_eq!(stats.n_counted, 1);
}

#[test]
fn mismatched_manifest_id_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let store = Datastore::new(dir.path());
    store.persist(&sample("r1")).unwrap();
    fs::rename(dir.path().join("r1"), dir.path().join("r9")).unwrap();
    assert!(matches!(store.load_record("r9"), Err(DatastoreError::CorruptManifest { .. })));
}

#[test]
fn concurrent_persists_do_not_interfere() {
    let dir = tempfile::tempdir().unwrap();
    let store = Datastore::new(dir.path());
    let trajectories: Vec<Trajectory> = (0..8).map(|i| sample(&format!("c{i}"))).collect();
    std::thread::scope(|s| {
        for t in &trajectories {
            let store = &store;
            s.spawn(move || store.persist(t).unwrap());
        }
    });
    let ids = store.list_ids().unwrap();
    assert_eq!(ids.len(), 8);
    for (id, t) in ids.iter().zip(&trajectories) {
        let back = store.load(id).unwrap();
        assert_eq!(back.observations, t.observations);
    }
}

#[test]
fn probe_reports_unwritable_root() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain-file");
    fs::write(&file, "x").unwrap();
    let store = Datastore::new(file.join("store"));
    assert!(matches!(store.probe(), Err(DatastoreError::Unavailable(_))));
    assert!(Datastore::new(dir.path().join("fresh")).probe().is_ok());
}
