//! Synthetic interaction logs with a known, gap-dependent generating law,
//! plus exact Bayes predictors for them.
//!
//! Each user belongs to a latent archetype. Gaps between consecutive events
//! fall in a short or a long bucket, and the bucket sequence is a two-state
//! Markov chain. The item drawn at step `k` depends on the previous item and
//! on the bucket of the gap that preceded the previous item, so the most
//! recent gap (visible from timestamps) decides which transition table the
//! next item comes from.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{RawEvent, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::evaluator::{rank_items, sample_seed};

pub const SHORT: usize = 0;
pub const LONG: usize = 1;

/// Uniform distribution over whole days `min_days..=max_days`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRange {
    pub min_days: u32,
    pub max_days: u32,
}

impl GapRange {
    pub fn probability(&self, gap: i64) -> f64 {
        if gap >= self.min_days as i64 && gap <= self.max_days as i64 {
            1.0 / (self.max_days - self.min_days + 1) as f64
        } else {
            0.0
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> i64 {
        rng.random_range(self.min_days..=self.max_days) as i64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    /// Prior weight; normalized over archetypes.
    pub weight: f64,
    /// Distribution of the first item.
    pub initial_items: Vec<f64>,
    /// Distribution of the latent bucket before the first transition.
    pub initial_bucket: [f64; 2],
    /// `bucket_transition[b][b2]`: probability the next gap is in `b2`
    /// given the previous one was in `b`.
    pub bucket_transition: [[f64; 2]; 2],
    /// `transitions[b][from][to]`, used when the last gap was in bucket `b`.
    pub transitions: [Vec<Vec<f64>>; 2],
    pub gaps: [GapRange; 2],
}

/// Which gap decides the transition table of an item.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemBucket {
    /// The gap before the previous item, which is observed at prediction time.
    #[default]
    LastGap,
    /// The gap right before the item itself, unobserved at prediction time.
    NextGap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub user_count: usize,
    pub catalog_size: usize,
    pub archetypes: Vec<Archetype>,
    /// Gaps of at most this many days are short.
    pub gap_threshold_days: u32,
    pub min_events: usize,
    pub max_events: usize,
    /// First events are spread uniformly over this many days.
    pub start_spread_days: u32,
    #[serde(default)]
    pub item_bucket: ItemBucket,
    pub seed: u64,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Config(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.catalog_size == 0 || self.archetypes.is_empty() {
            return Err(Error::Config("synth spec needs items and archetypes".into()));
        }
        if self.min_events < 2 || self.max_events < self.min_events {
            return Err(Error::Config("need 2 <= min_events <= max_events".into()));
        }
        if self.archetypes.iter().any(|a| !(a.weight > 0.0 && a.weight.is_finite())) {
            return Err(Error::Config("archetype weights must be positive".into()));
        }
        for (i, a) in self.archetypes.iter().enumerate() {
            let n = self.catalog_size;
            if a.initial_items.len() != n {
                return Err(Error::Config(format!("archetype {i}: initial_items has wrong length")));
            }
            check_distribution(&a.initial_items, &format!("archetype {i} initial_items"))?;
            check_distribution(&a.initial_bucket, &format!("archetype {i} initial_bucket"))?;
            for b in [SHORT, LONG] {
                check_distribution(&a.bucket_transition[b], &format!("archetype {i} bucket row {b}"))?;
                if a.transitions[b].len() != n {
                    return Err(Error::Config(format!("archetype {i}: transition table {b} has wrong size")));
                }
                for (v, row) in a.transitions[b].iter().enumerate() {
                    if row.len() != n {
                        return Err(Error::Config(format!("archetype {i}: transition row {b}/{v} has wrong length")));
                    }
                    check_distribution(row, &format!("archetype {i} transition row {b}/{v}"))?;
                }
            }
            let g = a.gaps;
            let t = self.gap_threshold_days;
            if g[SHORT].min_days == 0 || g[SHORT].min_days > g[SHORT].max_days || g[SHORT].max_days > t {
                return Err(Error::Config(format!("archetype {i}: short gaps must lie in 1..={t} days")));
            }
            if g[LONG].min_days <= t || g[LONG].min_days > g[LONG].max_days {
                return Err(Error::Config(format!("archetype {i}: long gaps must exceed {t} days")));
            }
        }
        Ok(())
    }

    pub fn bucket_of(&self, gap_days: i64) -> usize {
        if gap_days <= self.gap_threshold_days as i64 {
            SHORT
        } else {
            LONG
        }
    }

    /// The spec used by the acceptance suite: two archetypes on disjoint
    /// halves of the catalog, each item having five likely successors after
    /// a short gap and five different ones after a long gap.
    pub fn gap_dependent(user_count: usize, catalog_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5EED);
        let n = catalog_size;
        let halves = [(0..n / 2).collect::<Vec<_>>(), (n / 2..n).collect::<Vec<_>>()];
        let follow = 0.9;
        let weights = [0.5, 0.2, 0.15, 0.1, 0.05];
        // (stay short, stay long) per archetype.
        let persistence = [(0.8, 0.7), (0.75, 0.65)];
        let archetypes = halves
            .iter()
            .zip(persistence)
            .map(|(own, (stay_short, stay_long))| {
                let mut initial_items = vec![0.0; n];
                for &v in own {
                    initial_items[v] = 1.0 / own.len() as f64;
                }
                let mut transitions = [vec![vec![0.0; n]; n], vec![vec![0.0; n]; n]];
                for v in 0..n {
                    // Rows for items outside this archetype are never used;
                    // keep them valid by staying inside the archetype.
                    let mut others: Vec<usize> = own.iter().copied().filter(|&x| x != v).collect();
                    others.shuffle(&mut rng);
                    let k = weights.len().min(others.len() / 2);
                    let mass: f64 = weights[..k].iter().sum();
                    for b in [SHORT, LONG] {
                        let row = &mut transitions[b][v];
                        for &x in own {
                            row[x] = (1.0 - follow) / own.len() as f64;
                        }
                        for (&x, w) in others[b * k..(b + 1) * k].iter().zip(weights) {
                            row[x] += follow * w / mass;
                        }
                    }
                }
                Archetype {
                    weight: 1.0,
                    initial_items,
                    initial_bucket: [0.5, 0.5],
                    bucket_transition: [[stay_short, 1.0 - stay_short], [1.0 - stay_long, stay_long]],
                    transitions,
                    gaps: [
                        GapRange { min_days: 1, max_days: 2 },
                        GapRange { min_days: 40, max_days: 60 },
                    ],
                }
            })
            .collect();
        Self {
            user_count,
            catalog_size,
            archetypes,
            gap_threshold_days: 10,
            min_events: 8,
            max_events: 14,
            start_spread_days: 60,
            item_bucket: ItemBucket::LastGap,
            seed,
        }
    }
}

/// Ground truth for one generated user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserTrace {
    pub user_id: String,
    pub archetype: usize,
    /// Catalog indices (zero-based, not vocabulary indices).
    pub items: Vec<usize>,
    pub days: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub traces: Vec<UserTrace>,
}

pub fn item_key(item: usize) -> String {
    format!("item{item:04}")
}

pub fn user_key(user: usize) -> String {
    format!("user{user:05}")
}

impl SynthData {
    pub fn events(&self) -> Vec<RawEvent> {
        self.traces
            .iter()
            .flat_map(|t| {
                t.items.iter().zip(&t.days).map(move |(&v, &d)| RawEvent {
                    user_id: t.user_id.clone(),
                    item_id: item_key(v),
                    timestamp: d * SECONDS_PER_DAY + SECONDS_PER_DAY / 2,
                })
            })
            .collect()
    }

    pub fn by_user(&self) -> BTreeMap<&str, &UserTrace> {
        self.traces.iter().map(|t| (t.user_id.as_str(), t)).collect()
    }

    /// Writes `user,item,rating,timestamp` rows (the Amazon ratings layout).
    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for e in self.events() {
            w.write_record([e.user_id.as_str(), e.item_id.as_str(), "5.0", &e.timestamp.to_string()])
                .map_err(|e| Error::Config(format!("csv write: {e}")))?;
        }
        w.flush().map_err(|e| Error::io("synthetic csv", e))?;
        Ok(())
    }
}

fn generate_user(spec: &SynthSpec, u: usize, prior: &WeightedIndex<f64>) -> UserTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, u));
    let a = prior.sample(&mut rng);
    let arch = &spec.archetypes[a];
    let n = rng.random_range(spec.min_events..=spec.max_events);
    let pick = |p: &[f64], rng: &mut ChaCha8Rng| WeightedIndex::new(p).expect("validated distribution").sample(rng);
    let mut items = vec![pick(&arch.initial_items, &mut rng)];
    let mut days = vec![rng.random_range(0..=spec.start_spread_days) as i64];
    let mut bucket = pick(&arch.initial_bucket, &mut rng);
    for _ in 1..n {
        let prev = *items.last().unwrap();
        match spec.item_bucket {
            ItemBucket::LastGap => {
                items.push(pick(&arch.transitions[bucket][prev], &mut rng));
                bucket = pick(&arch.bucket_transition[bucket], &mut rng);
            }
            ItemBucket::NextGap => {
                bucket = pick(&arch.bucket_transition[bucket], &mut rng);
                items.push(pick(&arch.transitions[bucket][prev], &mut rng));
            }
        }
        let gap = arch.gaps[bucket].sample(&mut rng);
        days.push(days.last().unwrap() + gap);
    }
    UserTrace {
        user_id: user_key(u),
        archetype: a,
        items,
        days,
    }
}

/// Draws every user from `spec`. Users are generated in parallel from
/// per-user seeds, so the output depends only on the spec.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let prior = WeightedIndex::new(spec.archetypes.iter().map(|a| a.weight))
        .map_err(|e| Error::Config(format!("archetype weights: {e}")))?;
    let traces = (0..spec.user_count)
        .into_par_iter()
        .map(|u| generate_user(spec, u, &prior))
        .collect();
    Ok(SynthData { traces })
}

/// Normalized forward pass for one archetype. Returns the log-likelihood of
/// the history and the filtered distribution of the bucket of the most
/// recent gap. Gaps are used as evidence only when `days` is given.
fn forward(spec: &SynthSpec, arch: &Archetype, items: &[usize], days: Option<&[i64]>) -> (f64, [f64; 2]) {
    let mut log_like = arch.initial_items[items[0]].ln();
    let mut alpha = arch.initial_bucket;
    for k in 1..items.len() {
        let (prev, cur) = (items[k - 1], items[k]);
        let mut next = [0.0; 2];
        for (b, &ab) in alpha.iter().enumerate() {
            for (b2, slot) in next.iter_mut().enumerate() {
                let table = match spec.item_bucket {
                    ItemBucket::LastGap => b,
                    ItemBucket::NextGap => b2,
                };
                *slot += ab * arch.bucket_transition[b][b2] * arch.transitions[table][prev][cur];
            }
        }
        if let Some(days) = days {
            let gap = days[k] - days[k - 1];
            let seen = spec.bucket_of(gap);
            for (b2, slot) in next.iter_mut().enumerate() {
                *slot *= if b2 == seen { arch.gaps[b2].probability(gap) } else { 0.0 };
            }
        }
        let z = next[0] + next[1];
        if z <= 0.0 {
            return (f64::NEG_INFINITY, [0.5, 0.5]);
        }
        log_like += z.ln();
        alpha = [next[0] / z, next[1] / z];
    }
    (log_like, alpha)
}

fn log_posterior(spec: &SynthSpec, items: &[usize], days: Option<&[i64]>) -> (Vec<f64>, Vec<[f64; 2]>) {
    let total: f64 = spec.archetypes.iter().map(|a| a.weight).sum();
    let runs: Vec<(f64, [f64; 2])> = spec.archetypes.iter().map(|a| forward(spec, a, items, days)).collect();
    let logs: Vec<f64> = spec
        .archetypes
        .iter()
        .zip(&runs)
        .map(|(a, (ll, _))| (a.weight / total).ln() + ll)
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let post = if max == f64::NEG_INFINITY {
        vec![1.0 / logs.len() as f64; logs.len()]
    } else {
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    };
    (post, runs.into_iter().map(|r| r.1).collect())
}

/// Posterior over archetypes given items and event days.
pub fn archetype_posterior(spec: &SynthSpec, items: &[usize], days: &[i64]) -> Vec<f64> {
    log_posterior(spec, items, Some(days)).0
}

fn predictive_with(spec: &SynthSpec, items: &[usize], days: Option<&[i64]>) -> Vec<f64> {
    assert!(!items.is_empty(), "empty history");
    let (post, alphas) = log_posterior(spec, items, days);
    let last = *items.last().unwrap();
    let mut out = vec![0.0; spec.catalog_size];
    for ((arch, p), alpha) in spec.archetypes.iter().zip(&post).zip(&alphas) {
        let governing = match spec.item_bucket {
            ItemBucket::LastGap => *alpha,
            ItemBucket::NextGap => [0, 1].map(|b2| (0..2).map(|b| alpha[b] * arch.bucket_transition[b][b2]).sum()),
        };
        for (b, &ab) in governing.iter().enumerate() {
            for (o, t) in out.iter_mut().zip(&arch.transitions[b][last]) {
                *o += p * ab * t;
            }
        }
    }
    out
}

/// Exact next-item distribution given the full history and its timestamps.
pub fn predictive(spec: &SynthSpec, items: &[usize], days: &[i64]) -> Vec<f64> {
    assert_eq!(items.len(), days.len());
    predictive_with(spec, items, Some(days))
}

/// Next-item distribution when the timestamps are hidden.
pub fn predictive_items_only(spec: &SynthSpec, items: &[usize]) -> Vec<f64> {
    predictive_with(spec, items, None)
}

fn ranking(probs: &[f64]) -> Vec<usize> {
    rank_items(probs, &[]).into_iter().map(|i| i - 1).collect()
}

/// Catalog items by descending Bayes posterior-predictive probability,
/// ties by ascending index.
pub fn bayes_optimal_rank(spec: &SynthSpec, items: &[usize], days: &[i64]) -> Vec<usize> {
    ranking(&predictive(spec, items, days))
}

/// Best ranking available to a predictor that sees items but not times.
pub fn items_only_rank(spec: &SynthSpec, items: &[usize]) -> Vec<usize> {
    ranking(&predictive_items_only(spec, items))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(catalog: usize, archetypes: Vec<Archetype>) -> SynthSpec {
        SynthSpec {
            user_count: 100,
            catalog_size: catalog,
            archetypes,
            gap_threshold_days: 5,
            min_events: 3,
            max_events: 8,
            start_spread_days: 10,
            item_bucket: ItemBucket::LastGap,
            seed: 42,
        }
    }

    fn identity(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
    }

    fn uniform_on(n: usize, support: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for &s in support {
            v[s] = 1.0 / support.len() as f64;
        }
        v
    }

    fn archetype(initial: Vec<f64>, short: Vec<Vec<f64>>, long: Vec<Vec<f64>>, rho: f64) -> Archetype {
        Archetype {
            weight: 1.0,
            initial_items: initial,
            initial_bucket: [0.6, 0.4],
            bucket_transition: [[rho, 1.0 - rho], [0.3, 0.7]],
            transitions: [short, long],
            gaps: [GapRange { min_days: 1, max_days: 2 }, GapRange { min_days: 7, max_days: 9 }],
        }
    }

    fn random_rows(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = r.iter().sum();
                r.into_iter().map(|x| x / s).collect()
            })
            .collect()
    }

    #[test]
    fn identity_transitions_repeat_one_item() {
        let spec = tiny_spec(5, vec![archetype(uniform_on(5, &[0, 1, 2, 3, 4]), identity(5), identity(5), 0.5)]);
        let data = generate(&spec).unwrap();
        for t in &data.traces {
            assert!(t.items.iter().all(|&v| v == t.items[0]));
        }
    }

    #[test]
    fn disjoint_catalogs_stay_disjoint() {
        let spec = SynthSpec::gap_dependent(200, 20, 3);
        let data = generate(&spec).unwrap();
        for t in &data.traces {
            let half = if t.archetype == 0 { 0..10 } else { 10..20 };
            assert!(t.items.iter().all(|v| half.contains(v)));
        }
        assert!(data.traces.iter().any(|t| t.archetype == 0));
        assert!(data.traces.iter().any(|t| t.archetype == 1));
    }

    #[test]
    fn regeneration_is_identical() {
        let spec = SynthSpec::gap_dependent(100, 20, 9);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        let hist = |d: &SynthData| {
            let mut h = BTreeMap::new();
            for t in &d.traces {
                *h.entry(t.items.len()).or_insert(0) += 1;
            }
            h
        };
        assert_eq!(hist(&a), hist(&b));
        assert_eq!(a, b);
        let other = generate(&SynthSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn gaps_respect_their_buckets() {
        let spec = SynthSpec::gap_dependent(50, 20, 1);
        for t in generate(&spec).unwrap().traces {
            for w in t.days.windows(2) {
                let g = w[1] - w[0];
                assert!((1..=2).contains(&g) || (40..=60).contains(&g), "gap {g}");
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SynthSpec::gap_dependent(10, 20, 1);
        spec.archetypes[0].transitions[0][3][0] += 0.1;
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
        let mut spec = SynthSpec::gap_dependent(10, 20, 1);
        spec.archetypes[1].gaps[LONG].min_days = 5;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn single_archetype_ranks_by_transition_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let short = random_rows(6, &mut rng);
        let long = random_rows(6, &mut rng);
        let spec = tiny_spec(6, vec![archetype(uniform_on(6, &[0, 1, 2, 3, 4, 5]), short.clone(), long.clone(), 0.8)]);
        let items = [2, 4, 1];
        for (days, table) in [([0, 8, 9], &short), ([0, 1, 9], &long)] {
            let p = predictive(&spec, &items, &days);
            for (a, b) in p.iter().zip(&table[1]) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(bayes_optimal_rank(&spec, &items, &days), ranking(&table[1]));
        }
    }

    #[test]
    fn identifying_history_gives_certain_posterior() {
        let spec = SynthSpec::gap_dependent(10, 20, 2);
        let post = archetype_posterior(&spec, &[12, 15], &[0, 2]);
        assert_eq!(post, vec![0.0, 1.0]);
    }

    /// Probability of the whole history under one archetype by summing over
    /// every assignment of latent buckets.
    fn enumerate_joint(spec: &SynthSpec, a: &Archetype, items: &[usize], days: &[i64], next: usize) -> f64 {
        let m = items.len();
        let mut total = 0.0;
        // Buckets b_0..b_m: b_0 latent, b_1..b_{m-1} tied to gaps, b_m unused.
        for mask in 0..(1usize << m) {
            let b: Vec<usize> = (0..m).map(|k| (mask >> k) & 1).collect();
            let mut p = a.initial_items[items[0]] * a.initial_bucket[b[0]];
            let table = |k: usize| match spec.item_bucket {
                ItemBucket::LastGap => b[k - 1],
                ItemBucket::NextGap => b[k],
            };
            for k in 1..m {
                p *= a.transitions[table(k)][items[k - 1]][items[k]];
                p *= a.bucket_transition[b[k - 1]][b[k]];
                let gap = days[k] - days[k - 1];
                p *= if spec.bucket_of(gap) == b[k] { a.gaps[b[k]].probability(gap) } else { 0.0 };
            }
            total += match spec.item_bucket {
                ItemBucket::LastGap => p * a.transitions[b[m - 1]][items[m - 1]][next],
                ItemBucket::NextGap => (0..2)
                    .map(|bn| p * a.bucket_transition[b[m - 1]][bn] * a.transitions[bn][items[m - 1]][next])
                    .sum(),
            };
        }
        total
    }

    #[test]
    fn predictive_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mk = |rng: &mut ChaCha8Rng, rho| {
            let init = random_rows(1, rng).remove(0);
            let mut a = archetype(init, random_rows(4, rng), random_rows(4, rng), rho);
            a.initial_items = random_rows(4, rng).remove(0);
            a
        };
        let mut first = mk(&mut rng, 0.9);
        first.weight = 2.0;
        let last_gap = tiny_spec(4, vec![first, mk(&mut rng, 0.2)]);
        let next_gap = SynthSpec {
            item_bucket: ItemBucket::NextGap,
            ..last_gap.clone()
        };
        for spec in [last_gap, next_gap] {
            check_against_enumeration(&spec);
        }
    }

    fn check_against_enumeration(spec: &SynthSpec) {
        let spec = spec.clone();
        let cases: [(&[usize], &[i64]); 4] = [
            (&[0], &[0]),
            (&[1, 3], &[0, 8]),
            (&[2, 2, 0, 1], &[0, 1, 9, 10]),
            (&[3, 0, 0, 2, 1], &[3, 11, 12, 20, 28]),
        ];
        let total_w: f64 = spec.archetypes.iter().map(|a| a.weight).sum();
        for (items, days) in cases {
            let mut joint = vec![0.0; 4];
            let mut arch_mass = vec![0.0; 2];
            for (ai, a) in spec.archetypes.iter().enumerate() {
                for (v, j) in joint.iter_mut().enumerate() {
                    let p = a.weight / total_w * enumerate_joint(&spec, a, items, days, v);
                    *j += p;
                    arch_mass[ai] += p;
                }
            }
            let z: f64 = joint.iter().sum();
            let got = predictive(&spec, items, days);
            for (g, j) in got.iter().zip(&joint) {
                assert!((g - j / z).abs() < 1e-12, "{got:?} vs {joint:?}");
            }
            let post = archetype_posterior(&spec, items, days);
            for (p, m) in post.iter().zip(&arch_mass) {
                assert!((p - m / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn next_item_depends_on_the_last_gap() {
        let spec = SynthSpec::gap_dependent(10, 40, 1);
        let items = [3, 7, 11];
        let short = bayes_optimal_rank(&spec, &items, &[0, 50, 52]);
        let long = bayes_optimal_rank(&spec, &items, &[0, 2, 52]);
        assert_ne!(short[0], long[0]);
        let blind = items_only_rank(&spec, &items);
        assert!(blind[0] == short[0] || blind[0] == long[0]);
    }

    #[test]
    fn bayes_beats_other_history_predictors() {
        let spec = SynthSpec::gap_dependent(600, 40, 77);
        let data = generate(&spec).unwrap();
        let mut bayes = Vec::new();
        let mut blind = Vec::new();
        let mut repeat_last = Vec::new();
        for t in &data.traces {
            let n = t.items.len() - 1;
            let (h, d, target) = (&t.items[..n], &t.days[..n], t.items[n]);
            bayes.push((bayes_optimal_rank(&spec, h, d)[0] == target) as u8 as f64);
            blind.push((items_only_rank(&spec, h)[0] == target) as u8 as f64);
            repeat_last.push((h[n - 1] == target) as u8 as f64);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let b = mean(&bayes);
        for other in [&blind, &repeat_last] {
            let diffs: Vec<f64> = bayes.iter().zip(other.iter()).map(|(x, y)| y - x).collect();
            let m = mean(&diffs);
            let sd = (diffs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt();
            assert!(m <= 3.0 * sd / (diffs.len() as f64).sqrt(), "predictor beats Bayes by {m}");
        }
        assert!(b > mean(&blind));
    }
}
