//! Interaction-log ingestion, core filtering, time normalization,
//! fixed-length sequence construction and train/valid/test splitting.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const PAD: usize = 0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEvent {
    pub user_id: String,
    pub item_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelimitedFormat {
    Csv,
    Tsv,
}

impl std::str::FromStr for DelimitedFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "tsv" => Ok(Self::Tsv),
            other => Err(Error::Config(format!("unknown input format `{other}`"))),
        }
    }
}

/// Column layout and error policy for [`load_events`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadOptions {
    pub format: DelimitedFormat,
    /// Overrides the format's delimiter when set.
    pub delimiter: Option<char>,
    pub has_header: bool,
    pub user_col: usize,
    pub item_col: usize,
    pub time_col: usize,
    /// Abort on the first malformed row instead of skipping it.
    pub strict: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            format: DelimitedFormat::Csv,
            delimiter: None,
            has_header: false,
            user_col: 0,
            item_col: 1,
            time_col: 2,
            strict: false,
        }
    }
}

impl LoadOptions {
    /// The `user,item,rating,timestamp` layout of the Amazon review dumps.
    pub fn amazon() -> Self {
        Self {
            time_col: 3,
            ..Self::default()
        }
    }

    fn delimiter_byte(&self) -> Result<u8> {
        let c = self.delimiter.unwrap_or(match self.format {
            DelimitedFormat::Csv => ',',
            DelimitedFormat::Tsv => '\t',
        });
        u8::try_from(c).map_err(|_| Error::Config(format!("delimiter {c:?} is not a single byte")))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub events: Vec<RawEvent>,
    pub rows_read: u64,
    /// `(line, reason)` for every skipped row.
    pub skipped: Vec<(u64, String)>,
}

pub fn load_events(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<LoadReport> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_events(file, opts)
}

/// [`load_events`] over any reader.
pub fn read_events(reader: impl std::io::Read, opts: &LoadOptions) -> Result<LoadReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter_byte()?)
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut report = LoadReport::default();
    let needed = opts.user_col.max(opts.item_col).max(opts.time_col);
    for (n, rec) in rdr.records().enumerate() {
        let line = n as u64 + 1 + u64::from(opts.has_header);
        report.rows_read += 1;
        let parsed = rec
            .map_err(|e| e.to_string())
            .and_then(|r| parse_row(&r, opts, needed));
        match parsed {
            Ok(ev) => report.events.push(ev),
            Err(reason) if opts.strict => return Err(Error::MalformedRow { line, reason }),
            Err(reason) => {
                log::warn!("skipping line {line}: {reason}");
                report.skipped.push((line, reason));
            }
        }
    }
    Ok(report)
}

fn parse_row(r: &csv::StringRecord, opts: &LoadOptions, needed: usize) -> Result<RawEvent, String> {
    if r.len() <= needed {
        return Err(format!("expected at least {} columns, found {}", needed + 1, r.len()));
    }
    let user = &r[opts.user_col];
    let item = &r[opts.item_col];
    if user.is_empty() || item.is_empty() {
        return Err("empty user or item id".into());
    }
    let raw = &r[opts.time_col];
    let timestamp = raw
        .parse::<i64>()
        .or_else(|_| {
            // Some dumps write integral seconds as floats ("1234.0").
            raw.parse::<f64>()
                .ok()
                .filter(|f| f.is_finite() && f.fract() == 0.0)
                .map(|f| f as i64)
                .ok_or(())
        })
        .map_err(|_| format!("timestamp `{raw}` is not an integer"))?;
    if timestamp < 0 {
        return Err(format!("negative timestamp {timestamp}"));
    }
    Ok(RawEvent {
        user_id: user.to_string(),
        item_id: item.to_string(),
        timestamp,
    })
}

/// Orders events by user (first appearance) then time, preserving input
/// order among equal timestamps.
pub fn chronological(events: &[RawEvent]) -> Vec<RawEvent> {
    let mut first_seen: HashMap<&str, usize> = HashMap::new();
    for e in events {
        let next = first_seen.len();
        first_seen.entry(e.user_id.as_str()).or_insert(next);
    }
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| (first_seen[events[i].user_id.as_str()], events[i].timestamp));
    order.into_iter().map(|i| events[i].clone()).collect()
}

/// Iteratively drops users and items with fewer than `min_count`
/// interactions until every survivor has at least `min_count`.
pub fn filter_core(events: &[RawEvent], min_count: usize) -> Result<Vec<RawEvent>> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let mut alive = vec![true; events.len()];
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for (e, _) in events.iter().zip(&alive).filter(|(_, &a)| a) {
            *users.entry(&e.user_id).or_default() += 1;
            *items.entry(&e.item_id).or_default() += 1;
        }
        let mut changed = false;
        for (e, a) in events.iter().zip(alive.iter_mut()) {
            if *a && (users[e.user_id.as_str()] < min_count || items[e.item_id.as_str()] < min_count) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let kept: Vec<RawEvent> = events
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(e, _)| e.clone())
        .collect();
    if kept.is_empty() {
        return Err(Error::DegenerateDataset(format!(
            "no user or item survives {min_count}-core filtering"
        )));
    }
    Ok(chronological(&kept))
}

/// Day-level, dataset-global normalization of timestamps into `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeNormalizer {
    pub min_day: i64,
    /// `max_day - min_day`; zero for single-day datasets.
    pub span_days: i64,
}

impl TimeNormalizer {
    pub fn fit(events: &[RawEvent]) -> Result<Self> {
        let days = events.iter().map(|e| e.timestamp.div_euclid(SECONDS_PER_DAY));
        let (min, max) = days.fold((i64::MAX, i64::MIN), |(lo, hi), d| (lo.min(d), hi.max(d)));
        if events.is_empty() {
            return Err(Error::DegenerateDataset("no events to normalize".into()));
        }
        Ok(Self {
            min_day: min,
            span_days: max - min,
        })
    }

    pub fn day(&self, timestamp: i64) -> i64 {
        timestamp.div_euclid(SECONDS_PER_DAY) - self.min_day
    }

    pub fn normalize(&self, timestamp: i64) -> f64 {
        if self.span_days == 0 {
            0.0
        } else {
            self.day(timestamp) as f64 / self.span_days as f64
        }
    }
}

/// Normalized times for every event, grouped per user in chronological order.
pub fn normalize_times(events: &[RawEvent]) -> Result<(TimeNormalizer, BTreeMap<String, Vec<f64>>)> {
    let norm = TimeNormalizer::fit(events)?;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for e in chronological(events) {
        out.entry(e.user_id.clone()).or_default().push(norm.normalize(e.timestamp));
    }
    Ok((norm, out))
}

/// Bijection between item ids and indices `1..=len`; index 0 is padding.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(items: Vec<String>) -> Self {
        Self::from_items(items)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.items
    }
}

impl Vocab {
    /// Assigns indices in order of first appearance.
    pub fn build(events: &[RawEvent]) -> Self {
        let mut v = Vocab::default();
        for e in events {
            if !v.index.contains_key(&e.item_id) {
                v.items.push(e.item_id.clone());
                v.index.insert(e.item_id.clone(), v.items.len());
            }
        }
        v
    }

    pub fn from_items(items: Vec<String>) -> Self {
        let index = items.iter().enumerate().map(|(i, s)| (s.clone(), i + 1)).collect();
        Self { items, index }
    }

    /// Number of real items (the embedding table has one more row).
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn index_of(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    pub fn item(&self, index: usize) -> Option<&str> {
        index.checked_sub(1).and_then(|i| self.items.get(i)).map(String::as_str)
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    /// Content hash recorded in checkpoints to catch vocab mismatches.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for it in &self.items {
            h.update(it.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub user_id: String,
    /// Left-padded item indices, length `max_len`.
    pub history_items: Vec<usize>,
    /// Normalized times aligned with `history_items`; 0 at padding.
    pub history_times: Vec<f64>,
    pub history_mask: Vec<bool>,
    pub target_item: usize,
    pub target_time: f64,
    /// Zero-based position of the target within the user's full sequence.
    pub position: usize,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.history_items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history_items.is_empty()
    }

    /// Slot of the most recent real interaction.
    pub fn last_index(&self) -> Option<usize> {
        self.history_mask.iter().rposition(|&m| m)
    }

    pub fn last_time(&self) -> Option<f64> {
        self.last_index().map(|i| self.history_times[i])
    }

    pub fn real_items(&self) -> impl Iterator<Item = usize> + '_ {
        self.history_items
            .iter()
            .zip(&self.history_mask)
            .filter(|(_, &m)| m)
            .map(|(&i, _)| i)
    }
}

/// One chronological user sequence after indexing and normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user_id: String,
    pub items: Vec<usize>,
    pub times: Vec<f64>,
}

/// Groups filtered events into indexed, normalized per-user sequences.
pub fn user_sequences(events: &[RawEvent], vocab: &Vocab, norm: &TimeNormalizer) -> Result<Vec<UserSequence>> {
    let mut out: Vec<UserSequence> = Vec::new();
    let mut pos: HashMap<String, usize> = HashMap::new();
    for e in chronological(events) {
        let item = vocab
            .index_of(&e.item_id)
            .ok_or_else(|| Error::DegenerateDataset(format!("item `{}` missing from vocab", e.item_id)))?;
        let slot = *pos.entry(e.user_id.clone()).or_insert_with(|| {
            out.push(UserSequence {
                user_id: e.user_id.clone(),
                items: Vec::new(),
                times: Vec::new(),
            });
            out.len() - 1
        });
        out[slot].items.push(item);
        out[slot].times.push(norm.normalize(e.timestamp));
    }
    Ok(out)
}

/// Builds the sample whose target is `seq.items[target]`, using the last
/// `max_len` preceding interactions as history.
pub fn sample_at(seq: &UserSequence, target: usize, max_len: usize) -> SequenceSample {
    assert!(target >= 1 && target < seq.items.len());
    let start = target.saturating_sub(max_len);
    let real = target - start;
    let pad = max_len - real;
    let mut history_items = vec![PAD; pad];
    let mut history_times = vec![0.0; pad];
    let mut history_mask = vec![false; pad];
    history_items.extend_from_slice(&seq.items[start..target]);
    history_times.extend_from_slice(&seq.times[start..target]);
    history_mask.extend(std::iter::repeat_n(true, real));
    SequenceSample {
        user_id: seq.user_id.clone(),
        history_items,
        history_times,
        history_mask,
        target_item: seq.items[target],
        target_time: seq.times[target],
        position: target,
    }
}

/// Every next-item sample of every user (targets at positions `1..n`),
/// users in first-appearance order, samples chronological within a user.
/// Users with fewer than two events contribute nothing.
pub fn build_sequences(sequences: &[UserSequence], max_len: usize) -> Result<Vec<SequenceSample>> {
    if max_len < 2 {
        return Err(Error::Config("max_len must be at least 2".into()));
    }
    Ok(sequences
        .iter()
        .filter(|s| s.items.len() >= 2)
        .flat_map(|s| (1..s.items.len()).map(move |t| sample_at(s, t, max_len)))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    /// Last target per user for test, second-to-last for validation.
    Loo,
    /// Seeded sample-level shuffle into 8:1:1.
    Temporal811,
}

impl std::str::FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loo" => Ok(Self::Loo),
            "temporal" | "temporal811" | "811" => Ok(Self::Temporal811),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitBundle {
    pub train: Vec<SequenceSample>,
    pub valid: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
    pub split_kind: SplitKind,
    pub seed: u64,
}

/// Partitions samples produced by [`build_sequences`].
pub fn split(samples: &[SequenceSample], kind: SplitKind, seed: u64) -> Result<SplitBundle> {
    if samples.is_empty() {
        return Err(Error::DegenerateDataset("no samples to split".into()));
    }
    let mut bundle = SplitBundle {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        split_kind: kind,
        seed,
    };
    match kind {
        SplitKind::Loo => {
            let mut last: HashMap<&str, usize> = HashMap::new();
            for s in samples {
                let e = last.entry(&s.user_id).or_insert(s.position);
                *e = (*e).max(s.position);
            }
            for s in samples {
                let l = last[s.user_id.as_str()];
                if s.position == l {
                    bundle.test.push(s.clone());
                } else if s.position + 1 == l {
                    bundle.valid.push(s.clone());
                } else {
                    bundle.train.push(s.clone());
                }
            }
        }
        SplitKind::Temporal811 => {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n = samples.len();
            let n_test = (n as f64 * 0.1).round() as usize;
            let n_valid = (n as f64 * 0.1).round() as usize;
            let n_train = n - n_test - n_valid;
            for (rank, &i) in order.iter().enumerate() {
                let s = samples[i].clone();
                if rank < n_train {
                    bundle.train.push(s);
                } else if rank < n_train + n_valid {
                    bundle.valid.push(s);
                } else {
                    bundle.test.push(s);
                }
            }
            log::info!("temporal 8:1:1 split with seed {seed}: {n_train}/{n_valid}/{n_test}");
        }
    }
    Ok(bundle)
}

/// Table-style dataset statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sequences: usize,
    pub items: usize,
    pub actions: usize,
    pub avg_len: f64,
    /// `1 - actions / (sequences * items)`.
    pub sparsity: f64,
}

impl DatasetStats {
    pub fn compute(events: &[RawEvent]) -> Self {
        let mut users: HashMap<&str, ()> = HashMap::new();
        let mut items: HashMap<&str, ()> = HashMap::new();
        for e in events {
            users.insert(&e.user_id, ());
            items.insert(&e.item_id, ());
        }
        let (u, i, a) = (users.len(), items.len(), events.len());
        Self {
            sequences: u,
            items: i,
            actions: a,
            avg_len: if u == 0 { 0.0 } else { a as f64 / u as f64 },
            sparsity: if u == 0 || i == 0 {
                1.0
            } else {
                1.0 - a as f64 / (u as f64 * i as f64)
            },
        }
    }
}

/// Everything needed to train and evaluate reproducibly, in one file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format_version: u32,
    pub vocab: Vocab,
    pub normalizer: TimeNormalizer,
    pub max_len: usize,
    pub min_count: usize,
    pub stats: DatasetStats,
    pub sequences: Vec<UserSequence>,
    pub bundle: SplitBundle,
}

pub const SNAPSHOT_VERSION: u32 = 1;

/// Settings for [`prepare`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub min_count: usize,
    pub max_len: usize,
    pub split: SplitKind,
    pub seed: u64,
}

/// Filter, normalize, index, window and split in one pass.
pub fn prepare(events: &[RawEvent], opts: &PrepareOptions) -> Result<Snapshot> {
    if events.is_empty() {
        return Err(Error::DegenerateDataset("input contains no events".into()));
    }
    let filtered = filter_core(events, opts.min_count)?;
    let vocab = Vocab::build(&filtered);
    let normalizer = TimeNormalizer::fit(&filtered)?;
    let sequences = user_sequences(&filtered, &vocab, &normalizer)?;
    let samples = build_sequences(&sequences, opts.max_len)?;
    let bundle = split(&samples, opts.split, opts.seed)?;
    Ok(Snapshot {
        format_version: SNAPSHOT_VERSION,
        stats: DatasetStats::compute(&filtered),
        vocab,
        normalizer,
        max_len: opts.max_len,
        min_count: opts.min_count,
        sequences,
        bundle,
    })
}

impl Snapshot {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let snap: Snapshot = serde_json::from_reader(std::io::BufReader::new(f))?;
        if snap.format_version != SNAPSHOT_VERSION {
            return Err(Error::Checkpoint(format!(
                "snapshot version {} is not supported (expected {SNAPSHOT_VERSION})",
                snap.format_version
            )));
        }
        Ok(snap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(u: &str, i: &str, t: i64) -> RawEvent {
        RawEvent {
            user_id: u.into(),
            item_id: i.into(),
            timestamp: t,
        }
    }

    fn seq(items: Vec<usize>) -> UserSequence {
        let n = items.len();
        UserSequence {
            user_id: "u".into(),
            items,
            times: (0..n).map(|i| i as f64 / n as f64).collect(),
        }
    }

    #[test]
    fn loads_well_formed_csv_in_order() {
        let data = "u1,a,10\nu2,b,20\nu1,c,5\n";
        let rep = read_events(data.as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(rep.events.len(), 3);
        assert_eq!(rep.events[2], ev("u1", "c", 5));
        assert!(rep.skipped.is_empty());
    }

    #[test]
    fn malformed_timestamp_skipped_or_fatal() {
        let data = "u1,a,10\nu2,b,yesterday\nu1,c,5\n";
        let rep = read_events(data.as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(rep.events.len(), 2);
        assert_eq!(rep.skipped.len(), 1);
        assert_eq!(rep.skipped[0].0, 2);
        let strict = LoadOptions {
            strict: true,
            ..LoadOptions::default()
        };
        match read_events(data.as_bytes(), &strict) {
            Err(Error::MalformedRow { line: 2, .. }) => {}
            other => panic!("expected malformed row error, got {other:?}"),
        }
    }

    #[test]
    fn header_and_tsv_and_amazon_layout() {
        let data = "user\titem\tts\nu1\ta\t7\n";
        let opts = LoadOptions {
            format: DelimitedFormat::Tsv,
            has_header: true,
            ..LoadOptions::default()
        };
        let rep = read_events(data.as_bytes(), &opts).unwrap();
        assert_eq!(rep.events, vec![ev("u1", "a", 7)]);
        let amazon = "A1,B00,5.0,1365811200\n";
        let rep = read_events(amazon.as_bytes(), &LoadOptions::amazon()).unwrap();
        assert_eq!(rep.events, vec![ev("A1", "B00", 1_365_811_200)]);
    }

    #[test]
    fn user_below_threshold_removed() {
        let mut events = Vec::new();
        for u in ["a", "b", "c", "d", "e"] {
            for i in 0..5 {
                events.push(ev(u, &format!("i{i}"), i));
            }
        }
        for i in 0..4 {
            events.push(ev("short", &format!("i{i}"), i));
        }
        let kept = filter_core(&events, 5).unwrap();
        assert!(kept.iter().all(|e| e.user_id != "short"));
        assert_eq!(kept.len(), 25);
    }

    #[test]
    fn min_count_one_is_identity_up_to_ordering() {
        let events = vec![ev("u1", "a", 3), ev("u2", "b", 1), ev("u1", "c", 2)];
        let kept = filter_core(&events, 1).unwrap();
        assert_eq!(kept, chronological(&events));
        assert_eq!(kept.len(), 3);
    }

    #[test]
    fn empty_filter_result_is_degenerate() {
        let events = vec![ev("u1", "a", 3)];
        assert!(matches!(filter_core(&events, 5), Err(Error::DegenerateDataset(_))));
    }

    #[test]
    fn ties_keep_input_order() {
        let events = vec![ev("u", "x", 5), ev("u", "y", 5), ev("u", "z", 1)];
        let out = chronological(&events);
        let ids: Vec<&str> = out.iter().map(|e| e.item_id.as_str()).collect();
        assert_eq!(ids, ["z", "x", "y"]);
    }

    #[test]
    fn normalization_endpoints_and_single_day() {
        let d = SECONDS_PER_DAY;
        let events: Vec<RawEvent> = [0, 3, 5, 5, 10]
            .iter()
            .enumerate()
            .map(|(k, &day)| ev("u", &format!("i{k}"), 1_000 * d + day * d + 17))
            .collect();
        let (_, per_user) = normalize_times(&events).unwrap();
        assert_eq!(per_user["u"], vec![0.0, 0.3, 0.5, 0.5, 1.0]);

        let same_day = vec![ev("u", "a", 5 * d + 1), ev("v", "b", 5 * d + 999)];
        let (norm, per_user) = normalize_times(&same_day).unwrap();
        assert_eq!(norm.span_days, 0);
        assert!(per_user.values().flatten().all(|&t| t == 0.0));
    }

    #[test]
    fn loo_three_event_user() {
        let s = seq(vec![1, 2, 3]);
        let samples = build_sequences(&[s], 10).unwrap();
        let b = split(&samples, SplitKind::Loo, 0).unwrap();
        assert!(b.train.is_empty());
        assert_eq!(b.test.len(), 1);
        assert_eq!(b.valid.len(), 1);
        assert_eq!(b.test[0].real_items().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(b.test[0].target_item, 3);
        assert_eq!(b.valid[0].real_items().collect::<Vec<_>>(), vec![1]);
        assert_eq!(b.valid[0].target_item, 2);
    }

    #[test]
    fn left_padding_contract() {
        let s = seq(vec![4, 5, 6]);
        let smp = sample_at(&s, 2, 5);
        assert_eq!(smp.history_items, vec![0, 0, 0, 4, 5]);
        assert_eq!(smp.history_mask, vec![false, false, false, true, true]);
        assert_eq!(&smp.history_times[..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn sliding_window_of_twelve() {
        // Oracle: the window is literally the max_len items before the target.
        let items: Vec<usize> = (1..=12).collect();
        let s = seq(items.clone());
        let samples = build_sequences(&[s], 10).unwrap();
        let b = split(&samples, SplitKind::Loo, 0).unwrap();
        let expected: Vec<usize> = items[1..11].to_vec();
        assert_eq!(b.test[0].history_items, expected);
        assert!(b.test[0].history_mask.iter().all(|&m| m));
        assert_eq!(b.test[0].target_item, 12);
        assert_eq!(b.train.len(), 9);
    }

    #[test]
    fn temporal_split_sizes_and_determinism() {
        let s = seq((1..=11).collect());
        let samples = build_sequences(&[s], 4).unwrap();
        assert_eq!(samples.len(), 10);
        let a = split(&samples, SplitKind::Temporal811, 7).unwrap();
        assert_eq!((a.train.len(), a.valid.len(), a.test.len()), (8, 1, 1));
        let b = split(&samples, SplitKind::Temporal811, 7).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn vocab_reserves_padding() {
        let v = Vocab::build(&[ev("u", "x", 0), ev("u", "y", 1), ev("v", "x", 2)]);
        assert_eq!(v.len(), 2);
        assert_eq!(v.index_of("x"), Some(1));
        assert_eq!(v.index_of("y"), Some(2));
        assert_eq!(v.item(0), None);
        assert_eq!(v.item(2), Some("y"));
    }

    #[test]
    fn stats_match_definition() {
        let events = vec![ev("u", "a", 0), ev("u", "b", 1), ev("v", "a", 2)];
        let st = DatasetStats::compute(&events);
        assert_eq!((st.sequences, st.items, st.actions), (2, 2, 3));
        assert!((st.avg_len - 1.5).abs() < 1e-15);
        assert!((st.sparsity - 0.25).abs() < 1e-15);
    }
}
