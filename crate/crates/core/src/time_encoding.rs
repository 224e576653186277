//! Scalar timestamp → `d`-dimensional embedding.
//!
//! Three interchangeable encoders over normalized time in `[0, 1]`:
//! sinusoidal, Gaussian kernels at evenly spaced centers, and random
//! Fourier features with frequencies frozen at construction. The
//! `AbsolutePosition` kind carries no timestamp encoder; the model adds a
//! learned per-position table instead.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{TimeEncoderConfig, TimeEncoderKind};
use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeEncoder {
    kind: TimeEncoderKind,
    dim: usize,
    freq: f64,
    sigma: f64,
    /// RFF frequencies `b_k`, `dim / 2` of them; empty for other kinds.
    rff_freqs: Vec<f64>,
}

impl TimeEncoder {
    pub fn new(cfg: &TimeEncoderConfig, dim: usize) -> Result<Self> {
        match cfg.kind {
            TimeEncoderKind::Sinusoidal | TimeEncoderKind::Rff if !dim.is_multiple_of(2) => {
                return Err(Error::Config(format!("{:?} encoding needs an even dim, got {dim}", cfg.kind)));
            }
            TimeEncoderKind::Gaussian if dim < 2 => {
                return Err(Error::Config("gaussian encoding needs dim >= 2".into()));
            }
            _ => {}
        }
        if !(cfg.sigma > 0.0) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        let rff_freqs = if cfg.kind == TimeEncoderKind::Rff {
            sample_rff_frequencies(cfg.seed, cfg.sigma, dim / 2)
        } else {
            Vec::new()
        };
        Ok(Self {
            kind: cfg.kind,
            dim,
            freq: cfg.freq,
            sigma: cfg.sigma,
            rff_freqs,
        })
    }

    pub fn kind(&self) -> TimeEncoderKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rff_frequencies(&self) -> &[f64] {
        &self.rff_freqs
    }

    /// Replaces the frozen RFF frequencies, e.g. with those stored in a checkpoint.
    pub fn set_rff_frequencies(&mut self, freqs: Vec<f64>) -> Result<()> {
        if freqs.len() != self.rff_freqs.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} RFF frequencies, got {}",
                self.rff_freqs.len(),
                freqs.len()
            )));
        }
        self.rff_freqs = freqs;
        Ok(())
    }

    /// True if this encoder maps timestamps (i.e. is not the positional baseline).
    pub fn encodes_time(&self) -> bool {
        self.kind != TimeEncoderKind::AbsolutePosition
    }

    /// Embedding of one normalized timestamp. The positional baseline has
    /// no timestamp embedding and returns zeros.
    pub fn encode(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.encode_into(t, &mut out);
        out
    }

    pub fn encode_into(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match self.kind {
            TimeEncoderKind::Sinusoidal => sinusoidal_into(t, self.freq, out),
            TimeEncoderKind::Gaussian => {
                let denom = 2.0 * self.sigma * self.sigma;
                let last = (self.dim - 1) as f64;
                for (j, o) in out.iter_mut().enumerate() {
                    let c = j as f64 / last;
                    *o = (-(t - c) * (t - c) / denom).exp();
                }
            }
            TimeEncoderKind::Rff => {
                let half = self.dim / 2;
                for (k, &b) in self.rff_freqs.iter().enumerate() {
                    let phase = std::f64::consts::TAU * b * t;
                    out[k] = phase.cos();
                    out[half + k] = phase.sin();
                }
            }
            TimeEncoderKind::AbsolutePosition => out.fill(0.0),
        }
    }

    /// Encodes a batch of timestamps into the rows of a matrix; rows whose
    /// `mask` entry is false stay zero.
    pub fn encode_rows(&self, times: &[f64], mask: Option<&[bool]>) -> Mat {
        let mut out = Mat::zeros(times.len(), self.dim);
        for (r, &t) in times.iter().enumerate() {
            if mask.is_none_or(|m| m[r]) {
                self.encode_into(t, out.row_mut(r));
            }
        }
        out
    }
}

/// `out[2i] = sin(t / freq^(2i/d))`, `out[2i+1] = cos(t / freq^(2i/d))`.
pub fn sinusoidal_into(t: f64, freq: f64, out: &mut [f64]) {
    let d = out.len() as f64;
    for i in 0..out.len() / 2 {
        let angle = t / freq.powf(2.0 * i as f64 / d);
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
}

pub fn sinusoidal(t: f64, freq: f64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    sinusoidal_into(t, freq, &mut out);
    out
}

/// `count` draws from `N(0, sigma^2)` off a ChaCha8 stream seeded with `seed`.
pub fn sample_rff_frequencies(seed: u64, sigma: f64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated positive");
    (0..count).map(|_| normal.sample(&mut rng)).collect()
}

/// Adds time embeddings onto item embeddings at real positions; padding
/// rows pass through unchanged.
pub fn fuse_sequence(
    item_embeddings: &[Vec<f64>],
    times: &[f64],
    mask: &[bool],
    encoder: &TimeEncoder,
) -> Result<Vec<Vec<f64>>> {
    if item_embeddings.len() != times.len() || times.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "sequence lengths differ: {} items, {} times, {} mask",
            item_embeddings.len(),
            times.len(),
            mask.len()
        )));
    }
    item_embeddings
        .iter()
        .zip(times)
        .zip(mask)
        .map(|((e, &t), &m)| {
            if e.len() != encoder.dim() {
                return Err(Error::Dimension(format!(
                    "item embedding has width {}, encoder {}",
                    e.len(),
                    encoder.dim()
                )));
            }
            if !m {
                return Ok(e.clone());
            }
            let tau = encoder.encode(t);
            Ok(e.iter().zip(&tau).map(|(a, b)| a + b).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, prop_assert_eq, proptest};

    fn enc(kind: TimeEncoderKind, dim: usize, sigma: f64, seed: u64) -> TimeEncoder {
        let cfg = TimeEncoderConfig {
            kind,
            sigma,
            seed,
            ..TimeEncoderConfig::default()
        };
        TimeEncoder::new(&cfg, dim).unwrap()
    }

    #[test]
    fn sinusoidal_at_zero_alternates() {
        let e = enc(TimeEncoderKind::Sinusoidal, 8, 1.0, 0);
        assert_eq!(e.encode(0.0), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn sinusoidal_reference_values() {
        let e = enc(TimeEncoderKind::Sinusoidal, 2, 1.0, 0);
        let v = e.encode(1.0);
        assert!((v[0] - 0.841_470_984_807_896_5).abs() < 1e-15);
        assert!((v[1] - 0.540_302_305_868_139_8).abs() < 1e-15);

        // Term-by-term: d=4, t=0.5 uses divisors 1 and 10000^(1/2) = 100.
        let e = enc(TimeEncoderKind::Sinusoidal, 4, 1.0, 0);
        let v = e.encode(0.5);
        let expect = [0.5f64.sin(), 0.5f64.cos(), 0.005f64.sin(), 0.005f64.cos()];
        for (a, b) in v.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_center_and_reference() {
        let e = enc(TimeEncoderKind::Gaussian, 5, 0.05, 0);
        let v = e.encode(0.25);
        assert_eq!(v[1], 1.0);
        let e = enc(TimeEncoderKind::Gaussian, 2, 0.05, 0);
        let v = e.encode(0.0);
        assert_eq!(v[0], 1.0);
        assert!((v[1] - (-200.0f64).exp()).abs() < 1e-100);
        let flat = enc(TimeEncoderKind::Gaussian, 6, 1e6, 0).encode(0.7);
        assert!(flat.iter().all(|x| (x - 1.0).abs() < 1e-9));
    }

    #[test]
    fn rff_at_zero_and_seeded_oracle() {
        let e = enc(TimeEncoderKind::Rff, 6, 1.0, 9);
        assert_eq!(e.encode(0.0), vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);

        let e = enc(TimeEncoderKind::Rff, 4, 1.0, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let b: Vec<f64> = (0..2).map(|_| normal.sample(&mut rng)).collect();
        let t = 0.25;
        let tau = std::f64::consts::TAU;
        let expect = [
            (tau * b[0] * t).cos(),
            (tau * b[1] * t).cos(),
            (tau * b[0] * t).sin(),
            (tau * b[1] * t).sin(),
        ];
        assert_eq!(e.encode(t), expect.to_vec());
    }

    #[test]
    fn odd_dims_rejected() {
        let cfg = TimeEncoderConfig {
            kind: TimeEncoderKind::Rff,
            ..TimeEncoderConfig::default()
        };
        assert!(TimeEncoder::new(&cfg, 5).is_err());
    }

    #[test]
    fn fuse_is_elementwise_sum_at_real_positions() {
        let e = enc(TimeEncoderKind::Gaussian, 4, 0.3, 0);
        let items = vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.5; 4], vec![-1.0; 4]];
        let times = [0.0, 0.2, 0.9];
        let mask = [false, true, true];
        let fused = fuse_sequence(&items, &times, &mask, &e).unwrap();
        assert_eq!(fused[0], items[0]);
        for i in 1..3 {
            let tau = e.encode(times[i]);
            for j in 0..4 {
                assert_eq!(fused[i][j], items[i][j] + tau[j]);
            }
        }
        let single = fuse_sequence(&[vec![0.0; 4]], &[0.0], &[true], &enc(TimeEncoderKind::Sinusoidal, 4, 1.0, 0)).unwrap();
        assert_eq!(single[0], vec![0.0, 1.0, 0.0, 1.0]);
        assert!(fuse_sequence(&items, &times[..2], &mask, &e).is_err());
    }

    #[test]
    fn zero_time_embedding_is_additive_identity() {
        let e = enc(TimeEncoderKind::AbsolutePosition, 4, 1.0, 0);
        let items = vec![vec![0.3, -0.2, 0.1, 9.0]];
        assert_eq!(fuse_sequence(&items, &[0.4], &[true], &e).unwrap(), items);
    }

    proptest! {
        #[test]
        fn rff_norm_is_half_dim(t in 0.0f64..1.0, seed in 0u64..1000, half in 1usize..16) {
            let e = enc(TimeEncoderKind::Rff, 2 * half, 1.0, seed);
            let v = e.encode(t);
            let n: f64 = v.iter().map(|x| x * x).sum();
            prop_assert!((n - half as f64).abs() < 1e-12);
            prop_assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
        }

        #[test]
        fn gaussian_range_and_symmetry(j in 0usize..8, delta in 0.0f64..0.5, sigma in 0.01f64..2.0) {
            let e = enc(TimeEncoderKind::Gaussian, 8, sigma, 0);
            let c = j as f64 / 7.0;
            let up = e.encode(c + delta);
            let down = e.encode(c - delta);
            prop_assert!((up[j] - down[j]).abs() < 1e-15);
            prop_assert!(up.iter().all(|&x| x > 0.0 || delta > 0.0) && up.iter().all(|&x| x <= 1.0));
        }

        #[test]
        fn encoding_is_deterministic(t in 0.0f64..1.0, seed in 0u64..50) {
            for kind in [TimeEncoderKind::Sinusoidal, TimeEncoderKind::Gaussian, TimeEncoderKind::Rff] {
                let a = enc(kind, 6, 0.5, seed).encode(t);
                let b = enc(kind, 6, 0.5, seed).encode(t);
                prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
                prop_assert!(a.iter().all(|x| (-1.0..=1.0).contains(x)));
            }
        }
    }
}
