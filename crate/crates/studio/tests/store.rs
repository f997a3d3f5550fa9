use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use proptest::prelude::*;
use recipe_core::fieldcodec::{FieldKind, GenerationMode};
use recipe_core::langmodel::SamplingConfig;
use recipe_studio::store::{parse_log, Clock, NewGeneration, Store, StoreError, MAX_COMMENT_CHARS};

fn generation(output: &str) -> NewGeneration {
    let mut context = BTreeMap::new();
    context.insert(FieldKind::Title, "Tomato Soup".to_string());
    context.insert(FieldKind::Ingredients, "4 tomatoes\n1 onion".to_string());
    NewGeneration {
        mode: GenerationMode::Instructions,
        context,
        output: output.to_string(),
        sampling: SamplingConfig { k: 3, max_new_tokens: 384, seed: 9 },
        report: None,
        reference_id: Some("r0001".into()),
    }
}

/// A clock that advances one second per call.
fn ticking_clock() -> Clock {
    let t = Arc::new(AtomicI64::new(1_700_000_000));
    Arc::new(move || Utc.timestamp_opt(t.fetch_add(1, Ordering::SeqCst), 0).unwrap())
}

fn fixed_clock(at: DateTime<Utc>) -> Clock {
    Arc::new(move || at)
}

#[test]
fn save_then_get_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(&dir.path().join("log")).unwrap();
    let saved = store.save_generation(generation("Chop. Simmer.")).unwrap();
    assert_eq!(store.get(saved.id).unwrap(), saved);
    assert_eq!(saved.generation, generation("Chop. Simmer."));
    assert!(matches!(store.get(999), Err(StoreError::NotFound(999))));
}

#[test]
fn pages_of_ten() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open_with_clock(&dir.path().join("log"), ticking_clock()).unwrap();
    for i in 0..25 {
        store.save_generation(generation(&format!("step {i}"))).unwrap();
    }
    let sizes: Vec<usize> = (1..=4).map(|p| store.list(p, 10).items.len()).collect();
    assert_eq!(sizes, [10, 10, 5, 0]);
    let first = store.list(1, 10);
    assert_eq!(first.total, 25);
    assert_eq!(first.items[0].generation.output, "step 24");
    let all: Vec<_> = (1..=3).flat_map(|p| store.list(p, 10).items).collect();
    assert!(all.windows(2).all(|w| w[0].created_at >= w[1].created_at));
}

#[test]
fn equal_timestamps_list_newest_id_first() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open_with_clock(&dir.path().join("log"), fixed_clock(Utc.timestamp_opt(5, 0).unwrap())).unwrap();
    for i in 0..3 {
        store.save_generation(generation(&i.to_string())).unwrap();
    }
    let ids: Vec<u64> = store.list(1, 10).items.iter().map(|g| g.id).collect();
    assert_eq!(ids, [3, 2, 1]);
}

#[test]
fn annotations_validate() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(&dir.path().join("log")).unwrap();
    let id = store.save_generation(generation("x")).unwrap().id;
    assert_eq!(store.add_rating(id, 5).unwrap().value, 5);
    assert!(matches!(store.add_rating(id, 6), Err(StoreError::OutOfRange(6))));
    assert!(matches!(store.add_rating(id, 0), Err(StoreError::OutOfRange(0))));
    assert!(matches!(store.add_rating(id, -300), Err(StoreError::OutOfRange(-300))));
    assert!(matches!(store.add_rating(id + 1, 3), Err(StoreError::NotFound(_))));
    assert!(matches!(store.add_comment(id, "  "), Err(StoreError::EmptyComment)));
    assert!(matches!(store.add_comment(id + 1, "nice"), Err(StoreError::NotFound(_))));
    assert!(store.add_comment(id, &"é".repeat(MAX_COMMENT_CHARS)).is_ok());
    assert!(matches!(store.add_comment(id, &"é".repeat(MAX_COMMENT_CHARS + 1)), Err(StoreError::CommentTooLong)));
    let g = store.get(id).unwrap();
    assert_eq!((g.ratings.len(), g.comments.len()), (1, 1));
}

#[test]
fn context_must_match_mode() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(&dir.path().join("log")).unwrap();
    let mut g = generation("x");
    g.mode = GenerationMode::Ingredients;
    assert!(matches!(store.save_generation(g), Err(StoreError::ModeMismatch(_))));
    assert!(store.is_empty());
}

#[test]
fn reopen_restores_everything() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log");
    let (a, b) = {
        let store = Store::open(&path).unwrap();
        let a = store.save_generation(generation("one")).unwrap();
        let b = store.save_generation(generation("two")).unwrap();
        store.add_rating(a.id, 4).unwrap();
        store.add_comment(b.id, "salty").unwrap();
        (store.get(a.id).unwrap(), store.get(b.id).unwrap())
    };
    let store = Store::open(&path).unwrap();
    assert_eq!(store.get(a.id).unwrap(), a);
    assert_eq!(store.get(b.id).unwrap(), b);
    assert_eq!(store.save_generation(generation("three")).unwrap().id, 3);
}

#[test]
fn torn_tail_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log");
    {
        let store = Store::open(&path).unwrap();
        store.save_generation(generation("kept")).unwrap();
    }
    let good = std::fs::metadata(&path).unwrap().len();
    let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(&[200, 0, 0, 0, 1, 9, 9]).unwrap();
    drop(f);
    let store = Store::open(&path).unwrap();
    assert_eq!(store.len(), 1);
    assert_eq!(std::fs::metadata(&path).unwrap().len(), good);
    assert_eq!(store.save_generation(generation("next")).unwrap().id, 2);
    drop(store);
    assert_eq!(Store::open(&path).unwrap().len(), 2);
}

#[test]
fn corruption_before_the_tail_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log");
    {
        let store = Store::open(&path).unwrap();
        store.save_generation(generation("first")).unwrap();
        store.save_generation(generation("second")).unwrap();
    }
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[12] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(Store::open(&path), Err(StoreError::Corrupt { offset: 0, .. })));
}

#[test]
fn log_records_are_self_describing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log");
    let store = Store::open(&path).unwrap();
    let id = store.save_generation(generation("x")).unwrap().id;
    store.add_rating(id, 2).unwrap();
    store.add_comment(id, "ok").unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let (records, valid) = parse_log(&bytes, &path).unwrap();
    assert_eq!(valid, bytes.len());
    assert_eq!(records.iter().map(|r| r.kind).collect::<Vec<_>>(), [1, 2, 3]);
    for r in &records {
        let v: serde_json::Value = serde_json::from_slice(&r.payload).unwrap();
        assert!(v.is_object());
    }
}

#[test]
fn concurrent_saves_get_distinct_ids() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log");
    let store = Arc::new(Store::open(&path).unwrap());
    let ids: Vec<u64> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|t| {
                let store = store.clone();
                s.spawn(move || (0..10).map(|i| store.save_generation(generation(&format!("{t}-{i}"))).unwrap().id).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted, (1..=80).collect::<Vec<u64>>());
    drop(store);
    assert_eq!(Store::open(&path).unwrap().len(), 80);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn arbitrary_text_survives_restart(output in "\\PC{0,200}", comment in "\\PC{1,100}") {
        prop_assume!(!comment.trim().is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        let saved = {
            let store = Store::open(&path).unwrap();
            let s = store.save_generation(generation(&output)).unwrap();
            store.add_comment(s.id, &comment).unwrap();
            store.get(s.id).unwrap()
        };
        let again = Store::open(&path).unwrap().get(saved.id).unwrap();
        prop_assert_eq!(again, saved);
    }
}
