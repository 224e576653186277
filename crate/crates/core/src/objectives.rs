//! Reconstruction, centroid-BPR and blended losses on plain vectors.
//!
//! The training graph in [`crate::model`] builds the same quantities from
//! differentiable ops; these functions are the scalar reference.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::neg_log_sigmoid;
use crate::config::BprSign;
use crate::tensor::cosine;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_normal: f64,
    pub l_bpr: f64,
    pub l_ioi: f64,
    pub l_toi: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_normal, self.l_bpr, self.l_ioi, self.l_toi, self.l_total]
            .iter()
            .all(|x| x.is_finite())
    }
}

/// `||e0_hat - e0||^2`.
pub fn loss_normal(e0_hat: &[f64], e0: &[f64]) -> f64 {
    e0_hat.iter().zip(e0).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Picks up to `k` batch indices whose target differs from the target at
/// `positive`, uniformly without replacement. Fewer are returned when the
/// batch cannot supply `k`.
pub fn sample_negatives(targets: &[usize], positive: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let pool: Vec<usize> = (0..targets.len())
        .filter(|&j| j != positive && targets[j] != targets[positive])
        .collect();
    let take = k.min(pool.len());
    if take < k {
        log::debug!("batch supplies {} of {k} negatives for sample {positive}", pool.len());
    }
    rand::seq::index::sample(rng, pool.len(), take)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Arithmetic mean of the given rows; `None` for an empty selection.
pub fn centroid(rows: &[&[f64]]) -> Option<Vec<f64>> {
    let first = rows.first()?;
    let mut acc = vec![0.0; first.len()];
    for r in rows {
        for (a, x) in acc.iter_mut().zip(r.iter()) {
            *a += x;
        }
    }
    let n = rows.len() as f64;
    Some(acc.into_iter().map(|a| a / n).collect())
}

/// Centroid of `k` in-batch target embeddings drawn by [`sample_negatives`].
pub fn negative_centroid(
    batch_targets: &[Vec<f64>],
    target_items: &[usize],
    positive: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Option<Vec<f64>> {
    let picks = sample_negatives(target_items, positive, k, rng);
    let rows: Vec<&[f64]> = picks.iter().map(|&j| batch_targets[j].as_slice()).collect();
    centroid(&rows)
}

/// Margin passed to the sigmoid: `k (S+ - S-)`, negated in verbatim mode.
pub fn bpr_margin(s_pos: f64, s_neg: f64, k: usize, sign: BprSign) -> f64 {
    let m = k as f64 * (s_pos - s_neg);
    match sign {
        BprSign::PaperIntent => m,
        BprSign::Verbatim => -m,
    }
}

/// `-ln sigmoid(margin)` over cosine similarities. `None` when a
/// similarity is undefined (zero-norm input).
pub fn loss_bpr(
    pos_hat: &[f64],
    pos: &[f64],
    neg_hat: &[f64],
    neg: &[f64],
    k: usize,
    sign: BprSign,
) -> Option<f64> {
    let s_pos = cosine(pos_hat, pos)?;
    let s_neg = cosine(neg_hat, neg)?;
    Some(neg_log_sigmoid(bpr_margin(s_pos, s_neg, k, sign)))
}

pub fn combine(l_normal: f64, l_bpr: f64, l_toi: f64, lambda: f64, eta: f64) -> LossBreakdown {
    let l_ioi = lambda * l_normal + (1.0 - lambda) * l_bpr;
    LossBreakdown {
        l_normal,
        l_bpr,
        l_ioi,
        l_toi,
        l_total: eta * l_ioi + (1.0 - eta) * l_toi,
    }
}
