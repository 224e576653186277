//! Variance schedule, forward noising, the x0-predicting denoiser and the
//! guided DDIM sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autograd::{Graph, Var};
use crate::config::{DiffusionConfig, ScheduleKind};
use crate::error::{Error, Result};
use crate::params::{Mlp, ParamId, ParamStore};
use crate::tensor::Mat;
use crate::time_encoding::sinusoidal;

/// Frequency base of the diffusion-step embedding.
pub const STEP_FREQ: f64 = 10_000.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn from_config(cfg: &DiffusionConfig) -> Result<Self> {
        match cfg.schedule {
            ScheduleKind::Linear => Self::linear(cfg.steps, cfg.beta_start, cfg.beta_end),
        }
    }

    /// `beta_t` linearly interpolated from `beta_start` (t = 1) to `beta_end` (t = T).
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion needs T >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Config("every beta must lie in (0, 1)".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product up to `t`; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `sqrt(ab_t) e0 + sqrt(1 - ab_t) eps`.
    pub fn q_sample(&self, e0: &[f64], t: usize, eps: &[f64]) -> Vec<f64> {
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        e0.iter().zip(eps).map(|(x, n)| a * x + b * n).collect()
    }

    /// Noise implied by `e_t` and a clean estimate.
    pub fn implied_noise(&self, e_t: &[f64], e0_hat: &[f64], t: usize) -> Vec<f64> {
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        e_t.iter().zip(e0_hat).map(|(x, e)| (x - a * e) / b).collect()
    }

    /// Deterministic DDIM update from step `t` to `t_prev < t`.
    pub fn ddim_step_to(&self, e_t: &[f64], e0_hat: &[f64], t: usize, t_prev: usize) -> Vec<f64> {
        let eps = self.implied_noise(e_t, e0_hat, t);
        let ab = self.alpha_bar(t_prev);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        e0_hat.iter().zip(&eps).map(|(e, n)| a * e + b * n).collect()
    }

    pub fn ddim_step(&self, e_t: &[f64], e0_hat: &[f64], t: usize) -> Vec<f64> {
        self.ddim_step_to(e_t, e0_hat, t, t - 1)
    }

    /// `count` inference steps on a uniform stride over `1..=T`, ascending,
    /// always ending at `T`.
    pub fn inference_steps(&self, count: usize) -> Vec<usize> {
        let total = self.steps();
        let count = count.clamp(1, total);
        (1..=count).map(|i| i * total / count).collect()
    }

    /// Runs the DDIM chain over `steps` (ascending) from `init`, rows
    /// treated independently. `predict(e_t, t)` returns the clean estimate.
    pub fn sample_with(
        &self,
        steps: &[usize],
        init: Mat,
        mut predict: impl FnMut(&Mat, usize) -> Mat,
    ) -> Mat {
        let mut e = init;
        for i in (0..steps.len()).rev() {
            let t = steps[i];
            let t_prev = if i == 0 { 0 } else { steps[i - 1] };
            let e0_hat = predict(&e, t);
            let mut next = Mat::zeros(e.rows(), e.cols());
            for r in 0..e.rows() {
                let row = self.ddim_step_to(e.row(r), e0_hat.row(r), t, t_prev);
                next.row_mut(r).copy_from_slice(&row);
            }
            e = next;
        }
        e
    }
}

/// Sinusoidal embedding of the integer diffusion step.
pub fn step_embedding(t: usize, dim: usize) -> Vec<f64> {
    sinusoidal(t as f64, STEP_FREQ, dim)
}

/// `dim` standard-normal draws from a generator seeded with `seed`.
pub fn seeded_noise(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// `(1 + w) cond - w uncond`; exactly `cond` when `w == 0`.
pub fn guide(cond: &Mat, uncond: &Mat, w: f64) -> Mat {
    if w == 0.0 {
        return cond.clone();
    }
    cond.zip_map(uncond, |c, u| (1.0 + w) * c - w * u)
}

#[derive(Clone, Copy, Debug)]
pub struct Denoiser {
    /// `(e_t, step embedding, condition) -> e0_hat`.
    pub net: Mlp,
    /// Learned unconditional token.
    pub uncond: ParamId,
}

impl Denoiser {
    pub fn new(store: &mut ParamStore, dim: usize, hidden_mult: usize, rng: &mut impl Rng) -> Self {
        let net = Mlp::new(store, "denoiser", 3 * dim, hidden_mult * dim, dim, rng);
        let bound = 1.0 / (dim as f64).sqrt();
        let uncond = store.add_uniform("denoiser.uncond", 1, dim, bound, rng);
        Self { net, uncond }
    }

    /// Graph forward for a batch: `e_t` and `cond` are `n x d`, `steps[i]` the step of row `i`.
    pub fn forward(&self, g: &mut Graph<'_>, e_t: Var, steps: &[usize], cond: Var) -> Var {
        let d = g.value(e_t).cols();
        let mut emb = Mat::zeros(steps.len(), d);
        for (r, &t) in steps.iter().enumerate() {
            emb.row_mut(r).copy_from_slice(&step_embedding(t, d));
        }
        let emb = g.constant(emb);
        let x = g.concat(&[e_t, emb, cond]);
        self.net.forward(g, x)
    }

    /// Clean estimate for every row of `e_t` at a shared step `t`.
    pub fn denoise(&self, store: &ParamStore, e_t: &Mat, t: usize, cond: &Mat) -> Mat {
        let mut g = Graph::new(store);
        let e = g.constant(e_t.clone());
        let c = g.constant(cond.clone());
        let out = self.forward(&mut g, e, &vec![t; e_t.rows()], c);
        g.value(out).clone()
    }

    pub fn denoise_uncond(&self, store: &ParamStore, e_t: &Mat, t: usize) -> Mat {
        let mut g = Graph::new(store);
        let e = g.constant(e_t.clone());
        let phi = g.param(self.uncond);
        let c = g.broadcast_row(phi, e_t.rows());
        let out = self.forward(&mut g, e, &vec![t; e_t.rows()], c);
        g.value(out).clone()
    }

    pub fn guided_denoise(&self, store: &ParamStore, e_t: &Mat, t: usize, cond: &Mat, w: f64) -> Mat {
        let c = self.denoise(store, e_t, t, cond);
        if w == 0.0 {
            return c;
        }
        let u = self.denoise_uncond(store, e_t, t);
        guide(&c, &u, w)
    }

    /// Guided DDIM sampling for each row of `cond`, with row `i` starting
    /// from noise seeded by `seeds[i]`.
    pub fn sample(
        &self,
        store: &ParamStore,
        schedule: &DiffusionSchedule,
        steps: &[usize],
        cond: &Mat,
        w: f64,
        seeds: &[u64],
    ) -> Mat {
        assert_eq!(cond.rows(), seeds.len());
        let d = cond.cols();
        let mut init = Mat::zeros(seeds.len(), d);
        for (r, &s) in seeds.iter().enumerate() {
            init.row_mut(r).copy_from_slice(&seeded_noise(s, d));
        }
        schedule.sample_with(steps, init, |e, t| self.guided_denoise(store, e, t, cond, w))
    }
}
