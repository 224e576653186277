mod common;

use std::collections::HashMap;

use common::{brute_core, fixture, per_user, snapshot, FROZEN_COUNTS};
use toirec_core::datastore::{load_events, DatasetStats, LoadOptions};
use toirec_core::RawEvent;

#[test]
fn core_filter_matches_brute_force_fixed_point() {
    let events = fixture();
    let oracle = brute_core(&events, 5);
    let snap = snapshot(&events);

    let mut users: HashMap<&str, usize> = HashMap::new();
    let mut items: HashMap<&str, usize> = HashMap::new();
    for (_, e) in &oracle {
        *users.entry(&e.user_id).or_default() += 1;
        *items.entry(&e.item_id).or_default() += 1;
    }
    assert!(users.values().chain(items.values()).all(|&c| c >= 5));

    let oracle_events: Vec<RawEvent> = oracle.iter().map(|(_, e)| e.clone()).collect();
    assert_eq!(snap.stats, DatasetStats::compute(&oracle_events));
    // Frozen from the brute-force oracle on this fixture.
    assert_eq!(
        (snap.stats.sequences, snap.stats.items, snap.stats.actions),
        (users.len(), items.len(), oracle.len())
    );
    assert_eq!((users.len(), items.len(), oracle.len()), FROZEN_COUNTS);

    let mut vocab_items: Vec<&str> = snap.vocab.items().iter().map(String::as_str).collect();
    vocab_items.sort_unstable();
    let mut expected: Vec<&str> = items.keys().copied().collect();
    expected.sort_unstable();
    assert_eq!(vocab_items, expected);
}

#[test]
fn time_normalization_spans_unit_interval() {
    let snap = snapshot(&fixture());
    let all: Vec<f64> = snap.sequences.iter().flat_map(|s| s.times.iter().copied()).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(lo, 0.0);
    assert_eq!(hi, 1.0);
    for s in &snap.sequences {
        assert!(s.times.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn leave_one_out_assignment_matches_oracle() {
    let events = fixture();
    let snap = snapshot(&events);
    let chrono = per_user(&brute_core(&events, 5));
    let idx = |item: &str| snap.vocab.index_of(item).unwrap();

    let b = &snap.bundle;
    assert_eq!(b.test.len(), chrono.len());
    assert_eq!(b.valid.len(), chrono.len());
    let expected_train: usize = chrono.values().map(|v| v.len() - 3).sum();
    assert_eq!(b.train.len(), expected_train);

    for s in &b.test {
        let seq = &chrono[&s.user_id];
        assert_eq!(s.target_item, idx(&seq[seq.len() - 1].2));
        assert_eq!(s.position, seq.len() - 1);
        let hist: Vec<usize> = s.real_items().collect();
        let start = (seq.len() - 1).saturating_sub(10);
        let want: Vec<usize> = seq[start..seq.len() - 1].iter().map(|e| idx(&e.2)).collect();
        assert_eq!(hist, want);
    }
    for s in &b.valid {
        let seq = &chrono[&s.user_id];
        assert_eq!(s.target_item, idx(&seq[seq.len() - 2].2));
    }
    for s in &b.train {
        assert!(s.position + 2 < chrono[&s.user_id].len());
    }
}

/// Runs only when `TOIREC_BEAUTY_CSV` points at a local copy of the Amazon
/// Beauty ratings file (`user,item,rating,timestamp`).
#[test]
fn beauty_statistics_match_published_table() {
    let Ok(path) = std::env::var("TOIREC_BEAUTY_CSV") else {
        eprintln!("TOIREC_BEAUTY_CSV not set; skipping");
        return;
    };
    let events = load_events(path, &LoadOptions::amazon()).unwrap().events;
    let s = snapshot(&events).stats;
    assert_eq!((s.sequences, s.items, s.actions), (22_363, 12_101, 162_150));
    assert_eq!(format!("{:.2}", s.avg_len), "7.25");
    assert_eq!(format!("{:.2}", s.sparsity * 100.0), "99.94");
}
