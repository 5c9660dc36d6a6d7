mod common;

use std::fs;

use anchormem::persist::{has_store, load, read_manifest, save, PersistError, WriteLock, MANIFEST_FILE};
use anchormem_core::retrieve;
use anchormem_core::RetrievalConfig;
use common::{plain, synthetic};

#[test]
fn reopened_store_answers_identically() {
    let (store, queries) = synthetic(25, 3);
    let queries = plain(&queries);
    assert_eq!(queries.len(), 100);
    let dir = tempfile::tempdir().unwrap();
    let lock = WriteLock::acquire(dir.path()).unwrap();
    let manifest = save(&lock, &store, "abc").unwrap();
    drop(lock);
    assert_eq!(manifest.entry_count, store.len());
    assert_eq!(manifest.generation, 1);

    let (reopened, m2) = load(dir.path()).unwrap();
    assert_eq!(m2, manifest);
    assert_eq!(reopened.len(), store.len());
    assert_eq!(reopened.next_id(), store.next_id());
    assert_eq!(reopened.dense().snapshot(), store.dense().snapshot());
    let cfg = RetrievalConfig::default();
    for q in &queries {
        assert_eq!(retrieve(&reopened, q, &cfg).unwrap(), retrieve(&store, q, &cfg).unwrap());
    }
}

#[test]
fn generations_replace_each_other() {
    let (store, _) = synthetic(2, 1);
    let dir = tempfile::tempdir().unwrap();
    let lock = WriteLock::acquire(dir.path()).unwrap();
    let first = save(&lock, &store, "x").unwrap();
    let second = save(&lock, &store, "x").unwrap();
    assert_eq!(second.generation, 2);
    assert_eq!(second.created_at, first.created_at);
    let files: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".seg") || n.ends_with(".log"))
        .collect();
    assert_eq!(files.len(), 3);
    assert!(files.iter().all(|f| f.contains("000002")));
    // segments are deterministic; only the generation number differs
    for (name, seg) in &second.segments {
        assert_eq!(seg.sha256, first.segments[name].sha256);
    }
}

#[test]
fn any_flipped_byte_is_refused() {
    let (store, _) = synthetic(2, 9);
    let dir = tempfile::tempdir().unwrap();
    let lock = WriteLock::acquire(dir.path()).unwrap();
    let manifest = save(&lock, &store, "f").unwrap();
    drop(lock);
    let mut files: Vec<String> = manifest.segments.values().map(|s| s.file.clone()).collect();
    files.push(MANIFEST_FILE.into());
    for file in files {
        let path = dir.path().join(&file);
        let good = fs::read(&path).unwrap();
        // a spread of positions, including both ends
        let n = good.len();
        for pos in [0, 1, n / 3, n / 2, n - 2, n - 1] {
            let mut bad = good.clone();
            bad[pos] ^= 0x20;
            fs::write(&path, &bad).unwrap();
            let err = load(dir.path()).expect_err(&format!("{file} byte {pos}"));
            assert!(err.is_corruption(), "{file} byte {pos}: {err}");
        }
        fs::write(&path, &good).unwrap();
    }
    load(dir.path()).unwrap();
    let seg = dir.path().join(&manifest.segments["dense"].file);
    fs::remove_file(seg).unwrap();
    assert!(load(dir.path()).unwrap_err().is_corruption());
}

#[test]
fn missing_store_and_lock() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!has_store(dir.path()));
    assert!(matches!(load(dir.path()), Err(PersistError::NotFound(_))));
    assert!(matches!(read_manifest(dir.path()), Err(PersistError::NotFound(_))));
    let lock = WriteLock::acquire(dir.path()).unwrap();
    assert!(matches!(WriteLock::acquire(dir.path()), Err(PersistError::Locked(_))));
    drop(lock);
    assert!(!dir.path().join("LOCK").exists());
}

#[test]
fn store_without_dep_postings_survives_reopen() {
    let (store, queries) = synthetic(3, 2);
    let no_dep = store.without_dep_postings();
    let dir = tempfile::tempdir().unwrap();
    let lock = WriteLock::acquire(dir.path()).unwrap();
    assert!(!save(&lock, &no_dep, "nd").unwrap().index_deps);
    let (back, _) = load(dir.path()).unwrap();
    assert!(!back.symbolic().indexes_deps());
    let cfg = RetrievalConfig::default();
    for q in plain(&queries) {
        assert_eq!(retrieve(&back, &q, &cfg).unwrap(), retrieve(&no_dep, &q, &cfg).unwrap());
    }
}
