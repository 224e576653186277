//! Train-and-evaluate runs on synthetic data, with the generator's exact
//! predictors as reference points.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::{EvalConfig, ModelConfig, TrainConfig};
use crate::datastore::{prepare, PrepareOptions, Snapshot, SplitBundle, SplitKind};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, evaluate_scorer, MetricsReport};
use crate::model::Model;
use crate::synth::{generate, item_key, predictive, predictive_items_only, SynthData, SynthSpec, UserTrace};
use crate::trainer::{fit, FitResult};

/// A generated dataset, prepared with leave-one-out splitting and no
/// frequency filtering so sample positions line up with the traces.
pub struct SynthBench {
    pub spec: SynthSpec,
    pub data: SynthData,
    pub snapshot: Snapshot,
    /// Catalog index of each vocabulary index (entry 0 is padding).
    catalog_of: Vec<usize>,
}

pub struct RunOutcome {
    pub fit: FitResult,
    pub valid: MetricsReport,
    pub test: MetricsReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reference {
    /// Exact posterior predictive given items and timestamps.
    Bayes,
    /// Exact posterior predictive given items only.
    ItemsOnly,
}

impl SynthBench {
    pub fn new(spec: SynthSpec, max_len: usize) -> Result<Self> {
        let data = generate(&spec)?;
        let snapshot = prepare(
            &data.events(),
            &PrepareOptions {
                min_count: 1,
                max_len,
                split: SplitKind::Loo,
                seed: spec.seed,
            },
        )?;
        let mut catalog_of = vec![usize::MAX; snapshot.vocab.len() + 1];
        for v in 0..spec.catalog_size {
            if let Some(i) = snapshot.vocab.index_of(&item_key(v)) {
                catalog_of[i] = v;
            }
        }
        Ok(Self {
            spec,
            data,
            snapshot,
            catalog_of,
        })
    }

    pub fn num_items(&self) -> usize {
        self.snapshot.vocab.len()
    }

    fn trace(&self, user: &str) -> Result<&UserTrace> {
        self.data
            .traces
            .iter()
            .find(|t| t.user_id == user)
            .ok_or_else(|| Error::DegenerateDataset(format!("no trace for `{user}`")))
    }

    /// Metrics of a reference predictor on the test split. It sees each
    /// user's full history, not only the last `max_len` events.
    pub fn reference_report(&self, reference: Reference, ks: &[usize]) -> Result<MetricsReport> {
        let by_user = self.data.by_user();
        for s in &self.snapshot.bundle.test {
            self.trace(&s.user_id)?;
        }
        Ok(evaluate_scorer(&self.snapshot.bundle.test, ks, false, |_, s| {
            let t = by_user[s.user_id.as_str()];
            let (items, days) = (&t.items[..s.position], &t.days[..s.position]);
            let probs = match reference {
                Reference::Bayes => predictive(&self.spec, items, days),
                Reference::ItemsOnly => predictive_items_only(&self.spec, items),
            };
            self.catalog_of[1..].iter().map(|&v| probs[v]).collect()
        }))
    }

    pub fn run(&self, model_cfg: &ModelConfig, train_cfg: &TrainConfig, eval_cfg: &EvalConfig) -> Result<RunOutcome> {
        Ok(train_and_evaluate(&self.snapshot.bundle, self.num_items(), model_cfg, train_cfg, eval_cfg, None)?.1)
    }
}

/// Trains with early stopping on the validation split, then evaluates the
/// restored best model on the test split.
pub fn train_and_evaluate(
    bundle: &SplitBundle,
    num_items: usize,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    log_sink: Option<&mut dyn Write>,
) -> Result<(Model, RunOutcome)> {
    let mut model = Model::new(model_cfg, num_items)?;
    let batch = train_cfg.batch_size_eval;
    let fit = fit(
        &mut model,
        &bundle.train,
        train_cfg,
        |m, _| evaluate(m, &bundle.valid, eval_cfg, batch),
        log_sink,
    )?;
    let valid = evaluate(&model, &bundle.valid, eval_cfg, batch)?;
    let test = evaluate(&model, &bundle.test, eval_cfg, batch)?;
    Ok((model, RunOutcome { fit, valid, test }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bayes_reference_dominates_items_only() {
        let bench = SynthBench::new(SynthSpec::gap_dependent(300, 20, 4), 10).unwrap();
        assert_eq!(bench.snapshot.bundle.test.len(), 300);
        let bayes = bench.reference_report(Reference::Bayes, &[1, 5]).unwrap();
        let blind = bench.reference_report(Reference::ItemsOnly, &[1, 5]).unwrap();
        assert!(bayes.hr(5) > blind.hr(5));
        assert!(bayes.hr(1) > blind.hr(1));
    }
}
