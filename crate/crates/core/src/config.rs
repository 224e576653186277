//! Hyperparameters for every stage of the pipeline.
//!
//! Each section deserializes with defaults for missing keys and rejects
//! unknown keys, so a config file can be partial but never silently wrong.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeEncoderKind {
    Sinusoidal,
    Gaussian,
    Rff,
    /// Learned per-position vectors instead of timestamps (the "Base" row).
    AbsolutePosition,
}

impl std::str::FromStr for TimeEncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sinusoidal" => Ok(Self::Sinusoidal),
            "gaussian" | "gaussian_kernel" => Ok(Self::Gaussian),
            "rff" => Ok(Self::Rff),
            "absolute_position" | "position" => Ok(Self::AbsolutePosition),
            other => Err(Error::Config(format!("unknown time encoder `{other}`"))),
        }
    }
}

/// Reference point of the timestamps fed to the time encoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeAnchor {
    /// The dataset-wide [0, 1] normalization.
    #[default]
    Global,
    /// Shifted per sequence so the last observed event sits at `anchor_at`.
    LastEvent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeEncoderConfig {
    pub kind: TimeEncoderKind,
    pub anchor: TimeAnchor,
    pub anchor_at: f64,
    pub freq: f64,
    /// Bandwidth of the Gaussian kernels, or std of the RFF frequencies.
    pub sigma: f64,
    /// Seed for the frozen RFF frequencies.
    pub seed: u64,
}

impl Default for TimeEncoderConfig {
    fn default() -> Self {
        Self {
            kind: TimeEncoderKind::Gaussian,
            anchor: TimeAnchor::Global,
            anchor_at: 0.5,
            freq: 10_000.0,
            sigma: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of the model width.
    pub ffn_mult: usize,
    pub dropout: f64,
    /// Std of the normal init of item embeddings; uniform in
    /// `±1/sqrt(dim)` when unset.
    pub item_init_std: Option<f64>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            ffn_mult: 4,
            dropout: 0.0,
            item_init_std: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToiConfig {
    /// Residual weight of the ToI-fused representation.
    pub gamma: f64,
    /// Hidden width of the predictor and fusion networks, as a multiple of `dim`.
    pub hidden_mult: usize,
}

impl Default for ToiConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            hidden_mult: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    /// Number of training diffusion steps.
    #[serde(rename = "T")]
    pub steps: usize,
    /// Number of DDIM steps used at inference (uniform stride over `1..=T`).
    pub infer_steps: usize,
    pub schedule: ScheduleKind,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Classifier-free guidance weight.
    pub w: f64,
    /// Probability of training a sample on the unconditional token.
    pub p_uncond: f64,
    pub hidden_mult: usize,
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            infer_steps: 20,
            schedule: ScheduleKind::Linear,
            beta_start: 1e-4,
            beta_end: 0.02,
            w: 8.0,
            p_uncond: 0.1,
            hidden_mult: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BprSign {
    /// `-ln sigmoid(k (S+ - S-))`: rewards positives over the negative centroid.
    PaperIntent,
    /// `-ln sigmoid(-k (S+ - S-))`, the printed form.
    Verbatim,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub eta: f64,
    pub k: usize,
    pub sign_mode: BprSign,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.4,
            eta: 0.2,
            k: 4,
            sign_mode: BprSign::PaperIntent,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Dot,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub max_len: usize,
    pub init_seed: u64,
    pub similarity: Similarity,
    pub time_encoder: TimeEncoderConfig,
    pub encoder: EncoderConfig,
    pub toi: ToiConfig,
    pub diffusion: DiffusionConfig,
    pub loss: LossConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            max_len: 10,
            init_seed: 0,
            similarity: Similarity::Dot,
            time_encoder: TimeEncoderConfig::default(),
            encoder: EncoderConfig::default(),
            toi: ToiConfig::default(),
            diffusion: DiffusionConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

/// Which row of the component ablation a configuration corresponds to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationRow {
    /// Absolute positions, no ToI module.
    Base,
    /// Timestamps encoded, ToI module inert (`gamma = 0`, `eta = 1`).
    BaseTe,
    /// Timestamps encoded and the ToI module trained and fused.
    BaseTeTp,
}

impl AblationRow {
    pub fn label(self) -> &'static str {
        match self {
            Self::Base => "Base",
            Self::BaseTe => "Base+TE",
            Self::BaseTeTp => "Base+TE+TP",
        }
    }
}

impl ModelConfig {
    /// True when the ToI predictor participates in the forward pass.
    pub fn toi_active(&self) -> bool {
        self.time_encoder.kind != TimeEncoderKind::AbsolutePosition
            && !(self.toi.gamma == 0.0 && self.loss.eta == 1.0)
    }

    pub fn ablation_row(&self) -> AblationRow {
        if self.time_encoder.kind == TimeEncoderKind::AbsolutePosition {
            AblationRow::Base
        } else if self.toi_active() {
            AblationRow::BaseTeTp
        } else {
            AblationRow::BaseTe
        }
    }

    /// Rewrites this config into the given ablation row.
    ///
    /// `time_kind` is used for the two time-encoded rows; `gamma`/`eta`
    /// apply to the full row only.
    pub fn for_ablation(&self, row: AblationRow, time_kind: TimeEncoderKind, gamma: f64, eta: f64) -> Self {
        let mut cfg = self.clone();
        match row {
            AblationRow::Base => {
                cfg.time_encoder.kind = TimeEncoderKind::AbsolutePosition;
                cfg.toi.gamma = 0.0;
                cfg.loss.eta = 1.0;
            }
            AblationRow::BaseTe => {
                cfg.time_encoder.kind = time_kind;
                cfg.toi.gamma = 0.0;
                cfg.loss.eta = 1.0;
            }
            AblationRow::BaseTeTp => {
                cfg.time_encoder.kind = time_kind;
                cfg.toi.gamma = gamma;
                cfg.loss.eta = eta;
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return fail("dim must be positive".into());
        }
        if self.max_len < 1 {
            return fail("max_len must be at least 1".into());
        }
        match self.time_encoder.kind {
            TimeEncoderKind::Sinusoidal | TimeEncoderKind::Rff if !self.dim.is_multiple_of(2) => {
                return fail(format!("{:?} time encoding needs an even dim", self.time_encoder.kind));
            }
            TimeEncoderKind::Gaussian if self.dim < 2 => {
                return fail("gaussian time encoding needs dim >= 2".into());
            }
            _ => {}
        }
        if !self.time_encoder.anchor_at.is_finite() {
            return fail("time_encoder.anchor_at must be finite".into());
        }
        if !(self.time_encoder.sigma > 0.0) {
            return fail("time_encoder.sigma must be positive".into());
        }
        if !(self.time_encoder.freq > 0.0) {
            return fail("time_encoder.freq must be positive".into());
        }
        if self.encoder.layers == 0 || self.encoder.heads == 0 || self.encoder.ffn_mult == 0 {
            return fail("encoder layers, heads and ffn_mult must be positive".into());
        }
        if !self.dim.is_multiple_of(self.encoder.heads) {
            return fail(format!(
                "encoder.heads ({}) must divide dim ({})",
                self.encoder.heads, self.dim
            ));
        }
        if self.encoder.item_init_std.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return fail("encoder.item_init_std must be positive".into());
        }
        if !(0.0..1.0).contains(&self.encoder.dropout) {
            return fail("encoder.dropout must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.toi.gamma) {
            return fail("toi.gamma must lie in [0, 1]".into());
        }
        if self.toi.hidden_mult == 0 || self.diffusion.hidden_mult == 0 {
            return fail("hidden multipliers must be positive".into());
        }
        let d = &self.diffusion;
        if d.steps == 0 || d.infer_steps == 0 || d.infer_steps > d.steps {
            return fail("need 1 <= diffusion.infer_steps <= diffusion.T".into());
        }
        if !(d.beta_start > 0.0 && d.beta_start <= d.beta_end && d.beta_end < 1.0) {
            return fail("need 0 < beta_start <= beta_end < 1".into());
        }
        if !(d.w >= 0.0) {
            return fail("diffusion.w must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&d.p_uncond) {
            return fail("diffusion.p_uncond must lie in [0, 1]".into());
        }
        let l = &self.loss;
        if !(0.0..=1.0).contains(&l.lambda) || !(0.0..=1.0).contains(&l.eta) {
            return fail("loss.lambda and loss.eta must lie in [0, 1]".into());
        }
        if l.k == 0 {
            return fail("loss.k must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    #[serde(rename = "ndcg@10")]
    Ndcg10,
    #[serde(rename = "ndcg@5")]
    Ndcg5,
    #[serde(rename = "hr@10")]
    Hr10,
    #[serde(rename = "hr@5")]
    Hr5,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size_train: usize,
    pub batch_size_eval: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; off when absent.
    pub grad_clip: Option<f64>,
    pub validation_metric: ValidationMetric,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size_train: 256,
            batch_size_eval: 32,
            patience: 10,
            max_epochs: 200,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: None,
            validation_metric: ValidationMetric::Ndcg10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size_train == 0 || self.batch_size_eval == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// Drop the user's history items from the candidate list.
    pub exclude_history: bool,
    pub seed: u64,
    /// Worker threads for per-sample evaluation; results do not depend on it.
    pub parallel: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![5, 10],
            exclude_history: false,
            seed: 0,
            parallel: 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<ToiConfig>(r#"{"gamma": 0.5, "gama": 0.1}"#);
        assert!(err.is_err());
    }

    #[test]
    fn ablation_rows_classify() {
        let base = ModelConfig::default();
        let rows = [AblationRow::Base, AblationRow::BaseTe, AblationRow::BaseTeTp];
        for row in rows {
            let cfg = base.for_ablation(row, TimeEncoderKind::Rff, 0.5, 0.5);
            assert_eq!(cfg.ablation_row(), row);
        }
        let mut te = base.clone();
        te.loss.eta = 1.0;
        te.toi.gamma = 0.0;
        assert_eq!(te.ablation_row(), AblationRow::BaseTe);
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut cfg = ModelConfig::default();
        cfg.dim = 10;
        cfg.encoder.heads = 4;
        assert!(cfg.validate().is_err());
    }
}
