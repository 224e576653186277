use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use toirec_core::datastore::{load_events, prepare as prepare_snapshot, PrepareOptions, Snapshot};
use toirec_core::evaluator::evaluate as evaluate_model;
use toirec_core::experiment::{train_and_evaluate, Reference, SynthBench};
use toirec_core::gradcheck::check_model;
use toirec_core::synth::{generate, SynthSpec};
use toirec_core::{AblationRow, EvalConfig, MetricsReport, Model, ModelConfig, SequenceSample, TrainConfig};

use crate::config::{ConfigError, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    Test,
    Valid,
}

/// Gradient check above tolerance (exit code 4).
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "numeric failure: {}", self.0)
    }
}

impl std::error::Error for NumericFailure {}

fn run_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir.clone().unwrap_or_else(|| PathBuf::from("run"));
    fs::create_dir_all(&dir).with_context(|| format!("creating run directory `{}`", dir.display()))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing `{}`", path.display()))
}

/// Writes the effective configuration so the run can be repeated with
/// `--config <run_dir>/config.toml`.
fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    write_file(&dir.join("config.toml"), cfg.to_toml())
}

fn snapshot_path(cfg: &RunConfig, dir: &Path, arg: Option<PathBuf>) -> PathBuf {
    arg.or_else(|| cfg.data.snapshot.clone())
        .unwrap_or_else(|| dir.join("snapshot.json"))
}

fn load_snapshot(path: &Path) -> Result<Snapshot> {
    Snapshot::load(path).with_context(|| format!("loading snapshot `{}`", path.display()))
}

fn stats_text(snap: &Snapshot) -> String {
    let s = &snap.stats;
    format!(
        "sequences = {}\nitems = {}\nactions = {}\navg_len = {:.2}\nsparsity_pct = {:.2}\n",
        s.sequences,
        s.items,
        s.actions,
        s.avg_len,
        s.sparsity * 100.0
    )
}

pub fn prepare(cfg: &mut RunConfig, input: Option<PathBuf>, output: Option<PathBuf>) -> Result<()> {
    let dir = run_dir(cfg)?;
    let input = input
        .or_else(|| cfg.data.input.clone())
        .ok_or_else(|| ConfigError("prepare needs --input or data.input".into()))?;
    cfg.data.input = Some(input.clone());
    let report = load_events(&input, &cfg.data.load)?;
    if !report.skipped.is_empty() {
        log::warn!("skipped {} malformed rows of {}", report.skipped.len(), report.rows_read);
    }
    let snap = prepare_snapshot(
        &report.events,
        &PrepareOptions {
            min_count: cfg.data.min_count,
            max_len: cfg.model.max_len,
            split: cfg.data.split,
            seed: cfg.data.split_seed,
        },
    )?;
    let out = output.unwrap_or_else(|| dir.join("snapshot.json"));
    snap.save(&out)?;
    cfg.data.snapshot = Some(out);
    echo_config(&dir, cfg)?;
    let stats = stats_text(&snap);
    write_file(&dir.join("stats.txt"), &stats)?;
    print!("{stats}");
    Ok(())
}

pub fn synth(cfg: &RunConfig, output: Option<PathBuf>) -> Result<()> {
    let dir = run_dir(cfg)?;
    let spec = SynthSpec::gap_dependent(cfg.synth.users, cfg.synth.items, cfg.synth.seed);
    let data = generate(&spec)?;
    let out = output.unwrap_or_else(|| dir.join("synth.csv"));
    let file = fs::File::create(&out).with_context(|| format!("creating `{}`", out.display()))?;
    data.write_csv(std::io::BufWriter::new(file))?;
    let spec_path = out.with_file_name("synth_spec.json");
    write_file(&spec_path, serde_json::to_string_pretty(&spec)?)?;
    echo_config(&dir, cfg)?;
    println!("wrote {} events to {}", data.events().len(), out.display());
    Ok(())
}

/// Train, save the best checkpoint and its validation report into `dir`.
fn train_into(
    dir: &Path,
    snap: &Snapshot,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
) -> Result<(Model, MetricsReport)> {
    let log_path = dir.join("training_log.csv");
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating `{}`", log_path.display()))?;
    let (model, outcome) = train_and_evaluate(
        &snap.bundle,
        snap.vocab.len(),
        model_cfg,
        train_cfg,
        eval_cfg,
        Some(&mut log),
    )?;
    model.save(dir.join("checkpoint.json"), Some(snap.vocab.fingerprint()))?;
    write_file(&dir.join("valid_metrics.txt"), outcome.valid.to_key_value())?;
    let mut run_log = String::new();
    run_log.push_str(&format!("ablation_row = {}\n", model_cfg.ablation_row().label()));
    run_log.push_str(&format!("init_seed = {}\n", model_cfg.init_seed));
    run_log.push_str(&format!("train_seed = {}\n", train_cfg.seed));
    run_log.push_str(&format!("eval_seed = {}\n", eval_cfg.seed));
    run_log.push_str(&format!("best_epoch = {}\n", outcome.fit.best_epoch));
    run_log.push_str(&format!("best_metric = {:.6}\n", outcome.fit.best_metric));
    run_log.push_str(&format!("validations = {}\n", outcome.fit.validations));
    run_log.push_str(&format!("stopped_early = {}\n", outcome.fit.stopped_early));
    write_file(&dir.join("run.log"), run_log)?;
    Ok((model, outcome.valid))
}

pub fn train(cfg: &mut RunConfig, snapshot: Option<PathBuf>) -> Result<()> {
    let dir = run_dir(cfg)?;
    let path = snapshot_path(cfg, &dir, snapshot);
    let snap = load_snapshot(&path)?;
    cfg.data.snapshot = Some(path);
    let model_cfg = with_snapshot_len(&cfg.model, &snap);
    echo_config(&dir, cfg)?;
    let (_, valid) = train_into(&dir, &snap, &model_cfg, &cfg.train, &cfg.eval)?;
    println!("ablation_row = {}", model_cfg.ablation_row().label());
    print!("{}", valid.to_key_value());
    Ok(())
}

/// The snapshot fixes the window length; the model must agree with it.
fn with_snapshot_len(model: &ModelConfig, snap: &Snapshot) -> ModelConfig {
    let mut m = model.clone();
    if m.max_len != snap.max_len {
        log::warn!("model.max_len {} replaced by snapshot max_len {}", m.max_len, snap.max_len);
        m.max_len = snap.max_len;
    }
    m
}

fn split_samples(snap: &Snapshot, split: EvalSplit) -> &[SequenceSample] {
    match split {
        EvalSplit::Test => &snap.bundle.test,
        EvalSplit::Valid => &snap.bundle.valid,
    }
}

fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    write_file(&dir.join("metrics.txt"), report.to_key_value())?;
    write_file(&dir.join("toi_histogram.csv"), report.histogram_csv())
}

pub fn evaluate(cfg: &mut RunConfig, snapshot: Option<PathBuf>, checkpoint: &Path, split: EvalSplit) -> Result<()> {
    let dir = run_dir(cfg)?;
    let path = snapshot_path(cfg, &dir, snapshot);
    let snap = load_snapshot(&path)?;
    cfg.data.snapshot = Some(path);
    let (model, ck) = Model::load(checkpoint).with_context(|| format!("loading checkpoint `{}`", checkpoint.display()))?;
    let expected = snap.vocab.fingerprint();
    if ck.vocab_fingerprint.as_deref().is_some_and(|f| f != expected) {
        return Err(toirec_core::Error::Checkpoint("checkpoint was trained on a different vocabulary".into()).into());
    }
    echo_config(&dir, cfg)?;
    let report = evaluate_model(&model, split_samples(&snap, split), &cfg.eval, cfg.train.batch_size_eval)?;
    write_report(&dir, &report)?;
    print!("{}", report.to_key_value());
    Ok(())
}

fn metric_columns(ks: &[usize]) -> Vec<String> {
    let mut cols: Vec<String> = ks.iter().map(|k| format!("hr@{k}")).collect();
    cols.extend(ks.iter().map(|k| format!("ndcg@{k}")));
    cols.push("toi_median".into());
    cols
}

fn metric_values(report: &MetricsReport, ks: &[usize]) -> Vec<String> {
    let mut vals: Vec<String> = ks.iter().map(|&k| format!("{:.6}", report.hr(k))).collect();
    vals.extend(ks.iter().map(|&k| format!("{:.6}", report.ndcg(k))));
    vals.push(report.toi_median().map_or_else(String::new, |m| format!("{m:.6}")));
    vals
}

pub fn ablate(cfg: &mut RunConfig, snapshot: Option<PathBuf>) -> Result<()> {
    let dir = run_dir(cfg)?;
    let (snap, bench) = match snapshot.or_else(|| cfg.data.snapshot.clone()) {
        Some(path) => (load_snapshot(&path)?, None),
        None => {
            let spec = SynthSpec::gap_dependent(cfg.synth.users, cfg.synth.items, cfg.synth.seed);
            let bench = SynthBench::new(spec, cfg.model.max_len)?;
            (bench.snapshot.clone(), Some(bench))
        }
    };
    echo_config(&dir, cfg)?;
    let ks = cfg.eval.ks.clone();
    let base = with_snapshot_len(&cfg.model, &snap);
    let mut jobs = Vec::new();
    for row in [AblationRow::Base, AblationRow::BaseTe, AblationRow::BaseTeTp] {
        for seed in 0..cfg.ablate.seeds {
            jobs.push((row, seed));
        }
    }
    let run_one = |&(row, seed): &(AblationRow, u64)| -> Result<MetricsReport> {
        let mut model_cfg = base.for_ablation(row, cfg.ablate.time_kind, cfg.model.toi.gamma, cfg.model.loss.eta);
        model_cfg.init_seed = seed;
        let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
        let eval_cfg = EvalConfig {
            seed,
            parallel: 1,
            ..cfg.eval.clone()
        };
        let (_, outcome) = train_and_evaluate(&snap.bundle, snap.vocab.len(), &model_cfg, &train_cfg, &eval_cfg, None)?;
        Ok(outcome.test)
    };
    let reports = run_pool(cfg.eval.parallel, &jobs, run_one)?;

    let mut csv = csv::Writer::from_path(dir.join("ablation.csv"))?;
    let mut header = vec!["row".to_string(), "seed".to_string()];
    header.extend(metric_columns(&ks));
    csv.write_record(&header)?;
    if let Some(bench) = &bench {
        for (name, r) in [("Bayes", Reference::Bayes), ("ItemsOnly", Reference::ItemsOnly)] {
            let report = bench.reference_report(r, &ks)?;
            let mut rec = vec![name.to_string(), String::new()];
            rec.extend(metric_values(&report, &ks));
            csv.write_record(&rec)?;
        }
    }
    for ((row, seed), report) in jobs.iter().zip(&reports) {
        let mut rec = vec![row.label().to_string(), seed.to_string()];
        rec.extend(metric_values(report, &ks));
        csv.write_record(&rec)?;
    }
    csv.flush()?;

    let k = ks.first().copied().unwrap_or(5);
    for row in [AblationRow::Base, AblationRow::BaseTe, AblationRow::BaseTeTp] {
        let hits: Vec<f64> = jobs
            .iter()
            .zip(&reports)
            .filter(|((r, _), _)| *r == row)
            .map(|(_, rep)| rep.hr(k))
            .collect();
        let mean = hits.iter().sum::<f64>() / hits.len().max(1) as f64;
        println!("{:<11} hr@{k} mean {mean:.4} over {} seeds", row.label(), hits.len());
    }
    Ok(())
}

/// Runs `f` over `jobs` on `threads` workers, keeping input order.
fn run_pool<J: Sync, T: Send>(threads: usize, jobs: &[J], f: impl Fn(&J) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if threads <= 1 {
        return jobs.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    pool.install(|| jobs.par_iter().map(f).collect())
}

fn cell_name(gamma: f64, eta: f64) -> String {
    format!("gamma{gamma:.2}_eta{eta:.2}")
}

pub fn sweep(cfg: &mut RunConfig, snapshot: Option<PathBuf>) -> Result<()> {
    let dir = run_dir(cfg)?;
    let path = snapshot_path(cfg, &dir, snapshot);
    let snap = load_snapshot(&path)?;
    cfg.data.snapshot = Some(path);
    echo_config(&dir, cfg)?;
    let mut cells = Vec::new();
    for &g in &cfg.sweep.gammas {
        for &e in &cfg.sweep.etas {
            cells.push((g, e));
        }
    }
    let base = with_snapshot_len(&cfg.model, &snap);
    let run_cell = |&(gamma, eta): &(f64, f64)| -> Result<MetricsReport> {
        let cell_dir = dir.join("sweep").join(cell_name(gamma, eta));
        fs::create_dir_all(&cell_dir).with_context(|| format!("creating `{}`", cell_dir.display()))?;
        let mut model_cfg = base.clone();
        model_cfg.toi.gamma = gamma;
        model_cfg.loss.eta = eta;
        let mut cell_cfg = cfg.clone();
        cell_cfg.run_dir = Some(cell_dir.clone());
        cell_cfg.model = model_cfg.clone();
        cell_cfg.eval.parallel = 1;
        echo_config(&cell_dir, &cell_cfg)?;
        let (model, _) = train_into(&cell_dir, &snap, &model_cfg, &cfg.train, &cell_cfg.eval)?;
        let report = evaluate_model(&model, &snap.bundle.test, &cell_cfg.eval, cfg.train.batch_size_eval)?;
        write_report(&cell_dir, &report)?;
        Ok(report)
    };
    let reports = run_pool(cfg.eval.parallel, &cells, run_cell)?;
    let ks = cfg.eval.ks.clone();
    let mut csv = csv::Writer::from_path(dir.join("sweep.csv"))?;
    let mut header = vec!["gamma".to_string(), "eta".to_string()];
    header.extend(metric_columns(&ks));
    csv.write_record(&header)?;
    for ((g, e), report) in cells.iter().zip(&reports) {
        let mut rec = vec![format!("{g}"), format!("{e}")];
        rec.extend(metric_values(report, &ks));
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    println!("{} cells written to {}", cells.len(), dir.join("sweep.csv").display());
    Ok(())
}

/// d=8, T=4, two encoder layers, on a handful of synthetic sequences.
pub fn gradcheck_model() -> Result<(Model, Vec<SequenceSample>)> {
    let spec = SynthSpec::gap_dependent(6, 10, 0);
    let bench = SynthBench::new(spec, 5)?;
    let mut cfg = ModelConfig::default();
    cfg.dim = 8;
    cfg.max_len = 5;
    cfg.encoder.layers = 2;
    cfg.encoder.heads = 2;
    cfg.encoder.dropout = 0.0;
    cfg.time_encoder.kind = toirec_core::TimeEncoderKind::Gaussian;
    cfg.time_encoder.sigma = 0.3;
    cfg.diffusion.steps = 4;
    cfg.diffusion.infer_steps = 4;
    cfg.diffusion.beta_end = 0.2;
    cfg.toi.gamma = 0.7;
    cfg.loss.eta = 0.6;
    cfg.loss.lambda = 0.5;
    cfg.loss.k = 2;
    let model = Model::new(&cfg, bench.num_items())?;
    let samples = bench.snapshot.bundle.train.iter().take(4).cloned().collect();
    Ok((model, samples))
}

pub fn gradcheck(cfg: &RunConfig, tolerance: f64) -> Result<()> {
    let _ = cfg;
    let (mut model, samples) = gradcheck_model()?;
    let refs: Vec<&SequenceSample> = samples.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let draws = model.draw(&refs, &mut rng);
    let checks = check_model(&mut model, &refs, &draws, 1e-6, 24)?;
    let mut out = std::io::stdout().lock();
    let mut worst = 0.0f64;
    for c in &checks {
        writeln!(out, "{:<40} {:>4} entries  max rel err {:.3e}", c.name, c.checked, c.max_rel_error)?;
        worst = worst.max(c.max_rel_error);
    }
    writeln!(out, "worst = {worst:.3e}")?;
    if worst > tolerance {
        return Err(NumericFailure(format!("max relative error {worst:.3e} exceeds {tolerance:.1e}")).into());
    }
    Ok(())
}
