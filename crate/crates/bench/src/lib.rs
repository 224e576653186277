//! Shared fixtures for the benchmarks.

use toirec_core::experiment::SynthBench;
use toirec_core::synth::SynthSpec;
use toirec_core::ModelConfig;

/// A 200-user synthetic dataset windowed to `max_len` events.
pub fn bench_data(max_len: usize) -> SynthBench {
    SynthBench::new(SynthSpec::gap_dependent(200, 40, 7), max_len).expect("synthetic data")
}

pub fn bench_config(dim: usize, max_len: usize) -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.dim = dim;
    cfg.max_len = max_len;
    cfg.diffusion.steps = 200;
    cfg.diffusion.infer_steps = 20;
    cfg
}
