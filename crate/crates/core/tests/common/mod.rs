//! Brute-force preprocessing oracle over the packaged Amazon-format fixture.

use std::collections::HashMap;
use std::path::PathBuf;

use toirec_core::datastore::{load_events, prepare, LoadOptions, PrepareOptions, Snapshot};
use toirec_core::{RawEvent, SplitKind};

/// `(users, items, actions)` of the 5-core of the fixture, frozen from
/// [`brute_core`].
pub const FROZEN_COUNTS: (usize, usize, usize) = (685, 337, 6643);

pub fn fixture() -> Vec<RawEvent> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/amazon_1k.csv");
    let report = load_events(path, &LoadOptions::amazon()).unwrap();
    assert!(report.skipped.is_empty());
    assert_eq!(report.rows_read, 7671);
    report.events
}

/// Removes one offending row at a time until none is left.
pub fn brute_core(events: &[RawEvent], k: usize) -> Vec<(usize, RawEvent)> {
    let mut alive: Vec<(usize, RawEvent)> = events.iter().cloned().enumerate().collect();
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for (_, e) in &alive {
            *users.entry(&e.user_id).or_default() += 1;
            *items.entry(&e.item_id).or_default() += 1;
        }
        let bad = alive
            .iter()
            .rposition(|(_, e)| users[e.user_id.as_str()] < k || items[e.item_id.as_str()] < k);
        match bad {
            Some(i) => {
                alive.remove(i);
            }
            None => return alive,
        }
    }
}

/// Per-user chronological item lists, ties kept in file order.
pub fn per_user(rows: &[(usize, RawEvent)]) -> HashMap<String, Vec<(i64, usize, String)>> {
    let mut out: HashMap<String, Vec<(i64, usize, String)>> = HashMap::new();
    for (line, e) in rows {
        out.entry(e.user_id.clone())
            .or_default()
            .push((e.timestamp, *line, e.item_id.clone()));
    }
    for v in out.values_mut() {
        v.sort();
    }
    out
}

pub fn snapshot(events: &[RawEvent]) -> Snapshot {
    prepare(
        events,
        &PrepareOptions {
            min_count: 5,
            max_len: 10,
            split: SplitKind::Loo,
            seed: 0,
        },
    )
    .unwrap()
}
