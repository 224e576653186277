//! Central finite-difference check of the analytic gradients.

use crate::autograd::Graph;
use crate::datastore::SequenceSample;
use crate::error::Result;
use crate::model::{Model, TrainDraws};
use crate::params::ParamId;
use crate::tensor::Mat;

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`, zero when both agree exactly.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

pub const DENOMINATOR_FLOOR: f64 = 1e-6;

/// Compares analytic and central-difference gradients of the total loss
/// for every parameter tensor, holding the training draws fixed.
/// `max_entries` caps the coordinates probed per tensor (evenly strided).
pub fn check_model(
    model: &mut Model,
    samples: &[&SequenceSample],
    draws: &TrainDraws,
    step: f64,
    max_entries: usize,
) -> Result<Vec<TensorCheck>> {
    let grads = {
        let mut g = Graph::new(&model.store);
        let (loss, _) = model.loss_graph(&mut g, samples, draws, None)?;
        dense(&model.store, g.backward(loss))
    };
    let ids: Vec<(ParamId, String)> = model.store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    let mut out = Vec::with_capacity(ids.len());
    for (id, name) in ids {
        let len = model.store.value(id).data().len();
        let stride = len.div_ceil(max_entries.max(1)).max(1);
        let mut worst = 0.0f64;
        let mut checked = 0;
        for j in (0..len).step_by(stride) {
            let orig = model.store.value(id).data()[j];
            model.store.value_mut(id).data_mut()[j] = orig + step;
            let plus = model.loss(samples, draws)?.l_total;
            model.store.value_mut(id).data_mut()[j] = orig - step;
            let minus = model.loss(samples, draws)?.l_total;
            model.store.value_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads[id.index()].data()[j];
            worst = worst.max(relative_error(analytic, numeric, DENOMINATOR_FLOOR));
            checked += 1;
        }
        out.push(TensorCheck {
            name,
            max_rel_error: worst,
            checked,
        });
    }
    Ok(out)
}

fn dense(store: &crate::params::ParamStore, sparse: Vec<(ParamId, Mat)>) -> Vec<Mat> {
    let mut out: Vec<Mat> = store
        .iter()
        .map(|(_, p)| Mat::zeros(p.value.rows(), p.value.cols()))
        .collect();
    for (id, g) in sparse {
        out[id.index()] = g;
    }
    out
}
