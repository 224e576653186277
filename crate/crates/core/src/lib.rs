//! Time-aware sequential recommendation with a conditional diffusion
//! item generator.
//!
//! The pipeline: [`datastore`] turns interaction logs into padded
//! sequences, [`model::Model`] encodes them (with [`time_encoding`] and the
//! [`toi`] head) and generates a next-item embedding by guided DDIM
//! sampling ([`diffusion`]), [`trainer`] fits it and [`evaluator`] ranks
//! the catalog. [`synth`] produces logs with a known generating law.

pub mod autograd;
pub mod config;
pub mod datastore;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod experiment;
pub mod gradcheck;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod time_encoding;
pub mod toi;
pub mod trainer;

pub use config::{
    AblationRow, BprSign, DiffusionConfig, EncoderConfig, EvalConfig, LossConfig, ModelConfig,
    Similarity, TimeAnchor, TimeEncoderConfig, TimeEncoderKind, ToiConfig, TrainConfig,
};
pub use datastore::{RawEvent, SequenceSample, SplitBundle, SplitKind, Vocab};
pub use error::{Error, Result};
pub use evaluator::MetricsReport;
pub use model::Model;
pub use objectives::LossBreakdown;
pub use tensor::Mat;
pub use trainer::{EpochLog, FitResult};
