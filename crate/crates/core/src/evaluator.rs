//! Full-catalog ranking and top-K metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EvalConfig, Similarity, ValidationMetric};
use crate::datastore::SequenceSample;
use crate::encoder::score_candidates;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Mat;

pub const HISTOGRAM_BINS: usize = 20;

/// Items ordered by descending score, ties by ascending index. `scores[i]`
/// belongs to item `i + 1`; items in `exclude` are dropped.
pub fn rank_items(scores: &[f64], exclude: &[usize]) -> Vec<usize> {
    let mut items: Vec<usize> = (1..=scores.len()).filter(|i| !exclude.contains(i)).collect();
    items.sort_by(|&a, &b| scores[b - 1].total_cmp(&scores[a - 1]).then(a.cmp(&b)));
    items
}

/// One-based rank of `target` under [`rank_items`] ordering, without sorting.
pub fn rank_of(scores: &[f64], target: usize, exclude: &[usize]) -> usize {
    let st = scores[target - 1];
    1 + (1..=scores.len())
        .filter(|&j| j != target && !exclude.contains(&j))
        .filter(|&j| {
            let sj = scores[j - 1];
            sj > st || (sj == st && j < target)
        })
        .count()
}

pub fn hit_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub toi_cosine: Vec<f64>,
    pub sample_count: usize,
    /// Target rank of each sample, in input order.
    pub ranks: Vec<usize>,
}

impl MetricsReport {
    pub fn from_ranks(ranks: Vec<usize>, ks: &[usize], toi_cosine: Vec<f64>) -> Self {
        let n = ranks.len();
        let mut hr = BTreeMap::new();
        let mut ndcg = BTreeMap::new();
        for &k in ks {
            let (h, d) = ranks
                .iter()
                .fold((0.0, 0.0), |(h, d), &r| (h + hit_at_k(r, k), d + ndcg_at_k(r, k)));
            let denom = n.max(1) as f64;
            hr.insert(k, h / denom);
            ndcg.insert(k, d / denom);
        }
        Self {
            hr,
            ndcg,
            toi_cosine,
            sample_count: n,
            ranks,
        }
    }

    pub fn hr(&self, k: usize) -> f64 {
        self.hr.get(&k).copied().unwrap_or(0.0)
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        self.ndcg.get(&k).copied().unwrap_or(0.0)
    }

    pub fn metric(&self, which: ValidationMetric) -> f64 {
        match which {
            ValidationMetric::Ndcg10 => self.ndcg(10),
            ValidationMetric::Ndcg5 => self.ndcg(5),
            ValidationMetric::Hr10 => self.hr(10),
            ValidationMetric::Hr5 => self.hr(5),
        }
    }

    /// True when hit rate and NDCG are non-decreasing in K and NDCG never
    /// exceeds hit rate.
    pub fn is_monotone(&self) -> bool {
        let hr: Vec<f64> = self.hr.values().copied().collect();
        let nd: Vec<f64> = self.ndcg.values().copied().collect();
        hr.windows(2).all(|w| w[1] >= w[0])
            && nd.windows(2).all(|w| w[1] >= w[0])
            && self.hr.iter().all(|(k, h)| self.ndcg[k] <= *h)
    }

    pub fn toi_median(&self) -> Option<f64> {
        if self.toi_cosine.is_empty() {
            return None;
        }
        let mut v = self.toi_cosine.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        })
    }

    /// Counts of ToI cosines in [`HISTOGRAM_BINS`] equal bins over `[-1, 1]`.
    pub fn toi_histogram(&self) -> Vec<(f64, f64, usize)> {
        let width = 2.0 / HISTOGRAM_BINS as f64;
        let mut counts = vec![0usize; HISTOGRAM_BINS];
        for &c in &self.toi_cosine {
            let b = (((c + 1.0) / width).floor() as isize).clamp(0, HISTOGRAM_BINS as isize - 1);
            counts[b as usize] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(i, n)| (-1.0 + i as f64 * width, -1.0 + (i + 1) as f64 * width, n))
            .collect()
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (lo, hi, n) in self.toi_histogram() {
            let _ = writeln!(out, "{lo:.2},{hi:.2},{n}");
        }
        out
    }

    /// `key = value` lines.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples = {}", self.sample_count);
        for (k, v) in &self.hr {
            let _ = writeln!(out, "hr@{k} = {v:.6}");
        }
        for (k, v) in &self.ndcg {
            let _ = writeln!(out, "ndcg@{k} = {v:.6}");
        }
        if let Some(m) = self.toi_median() {
            let mean = self.toi_cosine.iter().sum::<f64>() / self.toi_cosine.len() as f64;
            let _ = writeln!(out, "toi_cosine_median = {m:.6}");
            let _ = writeln!(out, "toi_cosine_mean = {mean:.6}");
        }
        out
    }
}

/// Seed of the starting noise for sample `index` under evaluation seed `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    // SplitMix64 finalizer over the pair.
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn exclusions(sample: &SequenceSample, exclude_history: bool) -> Vec<usize> {
    if !exclude_history {
        return Vec::new();
    }
    sample.real_items().filter(|&i| i != sample.target_item).collect()
}

struct SampleOutcome {
    rank: usize,
    toi: Option<f64>,
}

fn evaluate_chunk(
    model: &Model,
    samples: &[SequenceSample],
    offset: usize,
    cfg: &EvalConfig,
    table: &Mat,
    similarity: Similarity,
) -> Result<Vec<SampleOutcome>> {
    let refs: Vec<&SequenceSample> = samples.iter().collect();
    let seeds: Vec<u64> = (0..samples.len()).map(|i| sample_seed(cfg.seed, offset + i)).collect();
    let preds = model.predict(&refs, &seeds)?;
    Ok(samples
        .iter()
        .zip(preds)
        .map(|(s, p)| {
            let scores = score_candidates(&p.embedding, table, similarity);
            SampleOutcome {
                rank: rank_of(&scores, s.target_item, &exclusions(s, cfg.exclude_history)),
                toi: p.toi_cosine,
            }
        })
        .collect())
}

/// Samples a next-item embedding for every test sample, ranks the catalog
/// and aggregates metrics. The result does not depend on `cfg.parallel`.
pub fn evaluate(model: &Model, samples: &[SequenceSample], cfg: &EvalConfig, batch_size: usize) -> Result<MetricsReport> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size_eval must be positive".into()));
    }
    let table = model.item_table();
    let similarity = model.config.similarity;
    let chunks: Vec<(usize, &[SequenceSample])> = samples
        .chunks(batch_size)
        .enumerate()
        .map(|(i, c)| (i * batch_size, c))
        .collect();
    let run = |&(off, chunk): &(usize, &[SequenceSample])| evaluate_chunk(model, chunk, off, cfg, table, similarity);
    let parts: Vec<Result<Vec<SampleOutcome>>> = if cfg.parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallel)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| chunks.par_iter().map(run).collect())
    } else {
        chunks.iter().map(run).collect()
    };
    let mut ranks = Vec::with_capacity(samples.len());
    let mut toi = Vec::new();
    for part in parts {
        for o in part? {
            ranks.push(o.rank);
            toi.extend(o.toi);
        }
    }
    Ok(MetricsReport::from_ranks(ranks, &cfg.ks, toi))
}

/// Metrics for an arbitrary scorer; `score(i, sample)` returns one score per item.
pub fn evaluate_scorer(
    samples: &[SequenceSample],
    ks: &[usize],
    exclude_history: bool,
    mut score: impl FnMut(usize, &SequenceSample) -> Vec<f64>,
) -> MetricsReport {
    let ranks = samples
        .iter()
        .enumerate()
        .map(|(i, s)| rank_of(&score(i, s), s.target_item, &exclusions(s, exclude_history)))
        .collect();
    MetricsReport::from_ranks(ranks, ks, Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, prop_assert_eq, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ranking_cases() {
        let scores = [0.0, 1.0, 0.0];
        assert_eq!(rank_items(&scores, &[])[0], 2);
        assert_eq!(rank_items(&scores, &[2])[0], 1);
        assert_eq!(rank_items(&scores, &[]), vec![2, 1, 3]);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s: Vec<f64> = (0..6).map(|_| (rng.random_range(0..4) as f64) * 0.5).collect();
        let mut oracle: Vec<usize> = (1..=6).collect();
        // Bubble sort: descending score, ascending index on ties.
        for i in 0..6 {
            for j in 0..5 - i {
                let (a, b) = (oracle[j], oracle[j + 1]);
                if s[b - 1] > s[a - 1] || (s[b - 1] == s[a - 1] && b < a) {
                    oracle.swap(j, j + 1);
                }
            }
        }
        assert_eq!(rank_items(&s, &[]), oracle);
    }

    #[test]
    fn metric_reference_points() {
        assert_eq!((hit_at_k(1, 5), ndcg_at_k(1, 5)), (1.0, 1.0));
        assert_eq!((hit_at_k(6, 5), ndcg_at_k(6, 5)), (0.0, 0.0));
        assert!((ndcg_at_k(3, 10) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uniform_scorer_expectation() {
        // Every target at each rank 1..=100 exactly once: H@5 = 0.05 exactly.
        let samples: Vec<SequenceSample> = (1..=100)
            .map(|t| SequenceSample {
                user_id: String::new(),
                history_items: vec![1],
                history_times: vec![0.0],
                history_mask: vec![true],
                target_item: t,
                target_time: 0.0,
                position: 1,
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut perm: Vec<usize> = (0..100).collect();
        for i in (1..100).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let report = evaluate_scorer(&samples, &[5, 10], false, |i, s| {
            // Put the target at rank perm[i] + 1.
            let want = perm[i] + 1;
            let mut scores = vec![0.0; 100];
            let mut order: Vec<usize> = (1..=100).filter(|&x| x != s.target_item).collect();
            order.insert(want - 1, s.target_item);
            for (pos, &item) in order.iter().enumerate() {
                scores[item - 1] = (100 - pos) as f64;
            }
            scores
        });
        assert!((report.hr(5) - 0.05).abs() < 1e-15);
        assert!((report.hr(10) - 0.10).abs() < 1e-15);
        assert!(report.is_monotone());
    }

    #[test]
    fn histogram_bins() {
        let r = MetricsReport::from_ranks(vec![1], &[5], vec![-1.0, 0.95, 1.0, 0.0]);
        let h = r.toi_histogram();
        assert_eq!(h.len(), 20);
        assert_eq!(h[0].2, 1);
        assert_eq!(h[19].2, 2);
        assert_eq!(h[10].2, 1);
        assert_eq!(r.toi_median(), Some(0.475));
    }

    proptest! {
        #[test]
        fn rank_is_permutation(scores in proptest::collection::vec(-3i32..3, 1..30), ex in proptest::collection::vec(1usize..30, 0..5)) {
            let s: Vec<f64> = scores.iter().map(|&x| x as f64).collect();
            let ex: Vec<usize> = ex.into_iter().filter(|&e| e <= s.len()).collect();
            let ranked = rank_items(&s, &ex);
            let mut sorted = ranked.clone();
            sorted.sort();
            let expect: Vec<usize> = (1..=s.len()).filter(|i| !ex.contains(i)).collect();
            prop_assert_eq!(sorted, expect);
            for (pos, &item) in ranked.iter().enumerate() {
                prop_assert_eq!(rank_of(&s, item, &ex), pos + 1);
            }
        }

        #[test]
        fn scaling_preserves_order(q in proptest::collection::vec(-1.0f64..1.0, 3), c in 0.01f64..50.0, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let table = Mat::from_vec(7, 3, (0..21).map(|_| rng.random_range(-1.0..1.0)).collect());
            let scaled: Vec<f64> = q.iter().map(|x| x * c).collect();
            let a = rank_items(&score_candidates(&q, &table, Similarity::Dot), &[]);
            let b = rank_items(&score_candidates(&scaled, &table, Similarity::Dot), &[]);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn reports_are_monotone(ranks in proptest::collection::vec(1usize..50, 1..40)) {
            let r = MetricsReport::from_ranks(ranks, &[1, 5, 10, 20], Vec::new());
            prop_assert!(r.is_monotone());
        }
    }
}
