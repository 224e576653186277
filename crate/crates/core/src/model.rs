//! The full recommender: parameters for every component, the training
//! loss graph and guided-sampling inference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::config::{BprSign, ModelConfig, TimeAnchor};
use crate::datastore::SequenceSample;
use crate::diffusion::{DiffusionSchedule, Denoiser};
use crate::encoder::{EncoderInput, SequenceEncoder};
use crate::error::{Error, Result};
use crate::objectives::{sample_negatives, LossBreakdown};
use crate::params::{NamedTensor, ParamStore};
use crate::tensor::{cosine, Mat};
use crate::time_encoding::TimeEncoder;
use crate::toi::ToiHead;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub time_encoder: TimeEncoder,
    pub encoder: SequenceEncoder,
    /// Present only when the ToI module is active.
    pub toi: Option<ToiHead>,
    pub denoiser: Denoiser,
    pub schedule: DiffusionSchedule,
    pub num_items: usize,
}

/// Random draws consumed by one training step; fixing them makes the
/// loss a deterministic function of the parameters.
#[derive(Clone, Debug)]
pub struct TrainDraws {
    pub steps: Vec<usize>,
    pub noise: Mat,
    /// Samples trained on the unconditional token.
    pub uncond: Vec<bool>,
    /// In-batch negative indices per sample (possibly empty).
    pub negatives: Vec<Vec<usize>>,
}

pub struct Representation {
    pub user: Var,
    pub fused: Var,
    pub tau_hat: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub embedding: Vec<f64>,
    /// Cosine between predicted and true next-time embeddings.
    pub toi_cosine: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub num_items: usize,
    pub vocab_fingerprint: Option<String>,
    pub rff_frequencies: Vec<f64>,
    pub tensors: Vec<NamedTensor>,
}

impl Model {
    pub fn new(config: &ModelConfig, num_items: usize) -> Result<Self> {
        config.validate()?;
        if num_items == 0 {
            return Err(Error::Config("model needs at least one item".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let time_encoder = TimeEncoder::new(&config.time_encoder, config.dim)?;
        let encoder = SequenceEncoder::new(
            &mut store,
            &config.encoder,
            num_items,
            config.dim,
            config.max_len,
            !time_encoder.encodes_time(),
            &mut rng,
        );
        let toi = config
            .toi_active()
            .then(|| ToiHead::new(&mut store, &config.toi, config.dim, &mut rng));
        let denoiser = Denoiser::new(&mut store, config.dim, config.diffusion.hidden_mult, &mut rng);
        let schedule = DiffusionSchedule::from_config(&config.diffusion)?;
        Ok(Self {
            config: config.clone(),
            store,
            time_encoder,
            encoder,
            toi,
            denoiser,
            schedule,
            num_items,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn item_table(&self) -> &Mat {
        self.store.value(self.encoder.item_table)
    }

    fn check_samples(&self, samples: &[&SequenceSample]) -> Result<()> {
        for s in samples {
            if s.len() != self.config.max_len {
                return Err(Error::Dimension(format!(
                    "sample history length {} differs from model max_len {}",
                    s.len(),
                    self.config.max_len
                )));
            }
            if s.target_item == 0 || s.target_item > self.num_items {
                return Err(Error::IndexOutOfRange {
                    index: s.target_item,
                    rows: self.num_items + 1,
                });
            }
        }
        Ok(())
    }

    pub fn encoder_input(&self, samples: &[&SequenceSample]) -> Result<EncoderInput> {
        let len = self.config.max_len;
        let mut items = Vec::with_capacity(samples.len() * len);
        let mut mask = Vec::with_capacity(samples.len() * len);
        let mut last = Vec::with_capacity(samples.len());
        let mut features = self
            .time_encoder
            .encodes_time()
            .then(|| Mat::zeros(samples.len() * len, self.dim()));
        for (b, s) in samples.iter().enumerate() {
            items.extend_from_slice(&s.history_items);
            mask.extend_from_slice(&s.history_mask);
            last.push(s.last_index().ok_or(Error::EmptySequence)?);
            if let Some(f) = features.as_mut() {
                for i in 0..len {
                    if s.history_mask[i] {
                        self.time_encoder
                            .encode_into(self.input_time(s, s.history_times[i]), f.row_mut(b * len + i));
                    }
                }
            }
        }
        Ok(EncoderInput {
            batch: samples.len(),
            len,
            items,
            mask,
            time_features: features,
            last,
        })
    }

    /// Timestamp as seen by the time encoder under the configured anchor.
    pub fn input_time(&self, sample: &SequenceSample, t: f64) -> f64 {
        let cfg = &self.config.time_encoder;
        match cfg.anchor {
            TimeAnchor::Global => t,
            TimeAnchor::LastEvent => t - sample.last_time().unwrap_or(0.0) + cfg.anchor_at,
        }
    }

    fn time_rows(&self, times: impl Iterator<Item = f64>) -> Mat {
        let times: Vec<f64> = times.collect();
        self.time_encoder.encode_rows(&times, None)
    }

    /// Encodes histories and applies the ToI head when active.
    pub fn represent(
        &self,
        g: &mut Graph<'_>,
        samples: &[&SequenceSample],
        dropout_rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<Representation> {
        let input = self.encoder_input(samples)?;
        let user = self.encoder.forward(g, &input, dropout_rng)?;
        let Some(head) = self.toi else {
            return Ok(Representation {
                user,
                fused: user,
                tau_hat: None,
            });
        };
        let prev = self.time_rows(samples.iter().map(|s| self.input_time(s, s.last_time().unwrap_or(0.0))));
        let prev = g.constant(prev);
        let tau_hat = head.predict(g, user, prev);
        let fused = head.fuse(g, user, tau_hat, self.config.toi.gamma);
        Ok(Representation {
            user,
            fused,
            tau_hat: Some(tau_hat),
        })
    }

    pub fn draw(&self, samples: &[&SequenceSample], rng: &mut impl Rng) -> TrainDraws {
        let n = samples.len();
        let d = self.dim();
        let total = self.schedule.steps();
        let steps = (0..n).map(|_| rng.random_range(1..=total)).collect();
        let noise = Mat::from_vec(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect());
        let p = self.config.diffusion.p_uncond;
        let uncond = (0..n).map(|_| p > 0.0 && rng.random::<f64>() < p).collect();
        let targets: Vec<usize> = samples.iter().map(|s| s.target_item).collect();
        let negatives = (0..n)
            .map(|i| sample_negatives(&targets, i, self.config.loss.k, rng))
            .collect();
        TrainDraws {
            steps,
            noise,
            uncond,
            negatives,
        }
    }

    /// `sqrt(ab_t) e0 + sqrt(1 - ab_t) eps` per row, differentiable in `e0`.
    fn noised(&self, g: &mut Graph<'_>, e0: Var, steps: &[usize], noise: &Mat) -> Var {
        let keep: Vec<f64> = steps.iter().map(|&t| self.schedule.alpha_bar(t).sqrt()).collect();
        let mut scaled = noise.clone();
        for (r, &t) in steps.iter().enumerate() {
            let s = (1.0 - self.schedule.alpha_bar(t)).sqrt();
            for x in scaled.row_mut(r) {
                *x *= s;
            }
        }
        let a = g.scale_rows(e0, keep);
        let b = g.constant(scaled);
        g.add(a, b)
    }

    /// Builds the total training loss for a batch under fixed draws.
    pub fn loss_graph(
        &self,
        g: &mut Graph<'_>,
        samples: &[&SequenceSample],
        draws: &TrainDraws,
        dropout_rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<(Var, LossBreakdown)> {
        if samples.is_empty() {
            return Err(Error::EmptySequence);
        }
        self.check_samples(samples)?;
        let n = samples.len();
        let cfg = &self.config;
        let rep = self.represent(g, samples, dropout_rng)?;

        let cond = if draws.uncond.iter().any(|&u| u) {
            let phi = g.param(self.denoiser.uncond);
            g.replace_rows(rep.fused, phi, draws.uncond.clone())
        } else {
            rep.fused
        };
        let table = g.param(self.encoder.item_table);
        let e0 = g.rows(table, samples.iter().map(|s| s.target_item).collect());
        let e_t = self.noised(g, e0, &draws.steps, &draws.noise);
        let hat = self.denoiser.forward(g, e_t, &draws.steps, cond);
        let dist = g.row_sq_dist(hat, e0);
        let l_normal = g.mean(dist);

        let valid: Vec<usize> = (0..n).filter(|&i| !draws.negatives[i].is_empty()).collect();
        let l_bpr = if cfg.loss.lambda < 1.0 && !valid.is_empty() {
            let groups = valid.iter().map(|&i| draws.negatives[i].clone()).collect();
            let neg0 = g.mean_rows(e0, groups);
            let steps: Vec<usize> = valid.iter().map(|&i| draws.steps[i]).collect();
            let noise = draws.noise.select_rows(&valid);
            let neg_t = self.noised(g, neg0, &steps, &noise);
            let cond_v = g.rows(cond, valid.clone());
            let neg_hat = self.denoiser.forward(g, neg_t, &steps, cond_v);
            let hat_v = g.rows(hat, valid.clone());
            let e0_v = g.rows(e0, valid.clone());
            let s_pos = g.row_cosine(hat_v, e0_v);
            let s_neg = g.row_cosine(neg_hat, neg0);
            let diff = g.sub(s_pos, s_neg);
            let k = cfg.loss.k as f64;
            let margin = match cfg.loss.sign_mode {
                BprSign::PaperIntent => g.scale(diff, k),
                BprSign::Verbatim => g.scale(diff, -k),
            };
            let per = g.neg_log_sigmoid(margin);
            let mean = g.mean(per);
            // Samples without negatives contribute zero to the batch mean.
            Some(g.scale(mean, valid.len() as f64 / n as f64))
        } else {
            None
        };

        let l_ioi = match l_bpr {
            _ if cfg.loss.lambda == 1.0 => l_normal,
            None => g.scale(l_normal, cfg.loss.lambda),
            Some(b) => {
                let a = g.scale(l_normal, cfg.loss.lambda);
                let b = g.scale(b, 1.0 - cfg.loss.lambda);
                g.add(a, b)
            }
        };

        let l_toi = rep.tau_hat.map(|tau_hat| {
            let truth = self.time_rows(samples.iter().map(|s| self.input_time(s, s.target_time)));
            let truth = g.constant(truth);
            let cos = g.row_cosine(truth, tau_hat);
            let m = g.mean(cos);
            g.scale(m, -1.0)
        });

        let total = match l_toi {
            Some(t) if cfg.loss.eta < 1.0 => {
                let a = g.scale(l_ioi, cfg.loss.eta);
                let b = g.scale(t, 1.0 - cfg.loss.eta);
                g.add(a, b)
            }
            _ => l_ioi,
        };
        let breakdown = LossBreakdown {
            l_normal: g.scalar(l_normal),
            l_bpr: l_bpr.map_or(0.0, |b| g.scalar(b)),
            l_ioi: g.scalar(l_ioi),
            l_toi: l_toi.map_or(0.0, |t| g.scalar(t)),
            l_total: g.scalar(total),
        };
        Ok((total, breakdown))
    }

    /// Loss value only, under fixed draws and no dropout.
    pub fn loss(&self, samples: &[&SequenceSample], draws: &TrainDraws) -> Result<LossBreakdown> {
        let mut g = Graph::new(&self.store);
        Ok(self.loss_graph(&mut g, samples, draws, None)?.1)
    }

    /// `(g_u, g_u')` for each sample, as `n x d` matrices.
    pub fn representations(&self, samples: &[&SequenceSample]) -> Result<(Mat, Mat)> {
        let mut g = Graph::new(&self.store);
        let rep = self.represent(&mut g, samples, None)?;
        Ok((g.value(rep.user).clone(), g.value(rep.fused).clone()))
    }

    /// Guided DDIM prediction of the next-item embedding for each sample,
    /// with row `i` seeded by `seeds[i]`. Never reads the target item.
    pub fn predict(&self, samples: &[&SequenceSample], seeds: &[u64]) -> Result<Vec<Prediction>> {
        if samples.len() != seeds.len() {
            return Err(Error::Dimension("one seed per sample required".into()));
        }
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new(&self.store);
        let rep = self.represent(&mut g, samples, None)?;
        let cond = g.value(rep.fused).clone();
        let tau_hat = rep.tau_hat.map(|t| g.value(t).clone());
        drop(g);
        let steps = self.schedule.inference_steps(self.config.diffusion.infer_steps);
        let sampled = self.denoiser.sample(
            &self.store,
            &self.schedule,
            &steps,
            &cond,
            self.config.diffusion.w,
            seeds,
        );
        Ok(samples
            .iter()
            .enumerate()
            .map(|(i, s)| Prediction {
                embedding: sampled.row(i).to_vec(),
                toi_cosine: tau_hat.as_ref().and_then(|th| {
                    let truth = self.time_encoder.encode(self.input_time(s, s.target_time));
                    cosine(&truth, th.row(i))
                }),
            })
            .collect())
    }

    pub fn checkpoint(&self, vocab_fingerprint: Option<String>) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            num_items: self.num_items,
            vocab_fingerprint,
            rff_frequencies: self.time_encoder.rff_frequencies().to_vec(),
            tensors: self.store.export(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        let mut model = Self::new(&ck.config, ck.num_items)?;
        model.store.import(&ck.tensors)?;
        model.time_encoder.set_rff_frequencies(ck.rff_frequencies.clone())?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>, vocab_fingerprint: Option<String>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(&self.checkpoint(vocab_fingerprint))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<(Self, Checkpoint)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        Ok((Self::from_checkpoint(&ck)?, ck))
    }
}
