//! Item embedding table and the pre-norm Transformer that turns a fused
//! history into a user representation.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::config::{EncoderConfig, Similarity};
use crate::error::{Error, Result};
use crate::params::{Linear, Mlp, Norm, ParamId, ParamStore};
use crate::tensor::{dot, norm, Mat};

#[derive(Clone, Copy, Debug)]
pub struct Block {
    pub attn_norm: Norm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub ffn_norm: Norm,
    pub ffn: Mlp,
}

#[derive(Clone, Debug)]
pub struct SequenceEncoder {
    /// `(num_items + 1) x dim`; row 0 is padding.
    pub item_table: ParamId,
    /// `max_len x dim` learned positions, present only for the positional baseline.
    pub positions: Option<ParamId>,
    pub blocks: Vec<Block>,
    pub final_norm: Norm,
    pub heads: usize,
    pub dropout: f64,
    pub dim: usize,
}

/// One batch of left-padded histories, flattened sample-major.
#[derive(Clone, Debug)]
pub struct EncoderInput {
    pub batch: usize,
    pub len: usize,
    pub items: Vec<usize>,
    pub mask: Vec<bool>,
    /// Time embeddings added to each position (zero rows at padding).
    /// `None` for the positional baseline.
    pub time_features: Option<Mat>,
    /// Position of the last real item in each sample, within `0..len`.
    pub last: Vec<usize>,
}

impl SequenceEncoder {
    pub fn new(
        store: &mut ParamStore,
        cfg: &EncoderConfig,
        num_items: usize,
        dim: usize,
        max_len: usize,
        learned_positions: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let item_table = match cfg.item_init_std {
            Some(std) => store.add_normal("items", num_items + 1, dim, std, rng),
            None => store.add_uniform("items", num_items + 1, dim, bound, rng),
        };
        store.value_mut(item_table).row_mut(0).fill(0.0);
        let positions =
            learned_positions.then(|| store.add_uniform("positions", max_len, dim, bound, rng));
        let blocks = (0..cfg.layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                Block {
                    attn_norm: Norm::new(store, &format!("{p}.attn_norm"), dim),
                    query: Linear::new(store, &format!("{p}.query"), dim, dim, rng),
                    key: Linear::new(store, &format!("{p}.key"), dim, dim, rng),
                    value: Linear::new(store, &format!("{p}.value"), dim, dim, rng),
                    out: Linear::new(store, &format!("{p}.out"), dim, dim, rng),
                    ffn_norm: Norm::new(store, &format!("{p}.ffn_norm"), dim),
                    ffn: Mlp::new(store, &format!("{p}.ffn"), dim, cfg.ffn_mult * dim, dim, rng),
                }
            })
            .collect();
        Self {
            item_table,
            positions,
            blocks,
            final_norm: Norm::new(store, "encoder.final_norm", dim),
            heads: cfg.heads,
            dropout: cfg.dropout,
            dim,
        }
    }

    /// Returns the `batch x dim` user representations at each sample's last
    /// real position. `dropout_rng` enables dropout on the residual branches.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        input: &EncoderInput,
        mut dropout_rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<Var> {
        let n = input.batch * input.len;
        if input.items.len() != n || input.mask.len() != n || input.last.len() != input.batch {
            return Err(Error::Dimension("encoder input lengths disagree with batch x len".into()));
        }
        for b in 0..input.batch {
            if !input.mask[b * input.len..(b + 1) * input.len].iter().any(|&m| m) {
                return Err(Error::EmptySequence);
            }
        }
        let rows = g.value_rows(self.item_table);
        if let Some(&bad) = input.items.iter().find(|&&i| i >= rows) {
            return Err(Error::IndexOutOfRange { index: bad, rows });
        }
        let table = g.param(self.item_table);
        let mut x = g.rows(table, input.items.clone());
        match (&input.time_features, self.positions) {
            (Some(tf), _) => {
                if tf.shape() != (n, self.dim) {
                    return Err(Error::Dimension("time features shape".into()));
                }
                let tf = g.constant(tf.clone());
                x = g.add(x, tf);
            }
            (None, Some(pos)) => {
                let p = g.param(pos);
                let idx = (0..input.batch).flat_map(|_| 0..input.len).collect();
                let p = g.rows(p, idx);
                x = g.add(x, p);
            }
            (None, None) => {}
        }
        for block in &self.blocks {
            let h = block.attn_norm.forward(g, x);
            let q = block.query.forward(g, h);
            let k = block.key.forward(g, h);
            let v = block.value.forward(g, h);
            let a = g.attention(q, k, v, &input.mask, input.batch, input.len, self.heads);
            let o = block.out.forward(g, a);
            let o = self.apply_dropout(g, o, &mut dropout_rng);
            x = g.add(x, o);
            let h = block.ffn_norm.forward(g, x);
            let f = block.ffn.forward(g, h);
            let f = self.apply_dropout(g, f, &mut dropout_rng);
            x = g.add(x, f);
        }
        let readout = input
            .last
            .iter()
            .enumerate()
            .map(|(b, &l)| b * input.len + l)
            .collect();
        let last = g.rows(x, readout);
        Ok(self.final_norm.forward(g, last))
    }

    fn apply_dropout(&self, g: &mut Graph<'_>, x: Var, rng: &mut Option<&mut dyn rand::RngCore>) -> Var {
        let Some(rng) = rng.as_mut() else { return x };
        if self.dropout <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.dropout;
        let mut mask = g.value(x).clone();
        for m in mask.data_mut() {
            *m = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
        }
        let mask = g.constant(mask);
        g.mul(x, mask)
    }
}

/// Row gather from the item table.
pub fn lookup(table: &Mat, indices: &[usize]) -> Result<Mat> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= table.rows()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            rows: table.rows(),
        });
    }
    Ok(table.select_rows(indices))
}

/// Similarity of `query` against every real item; entry `i` scores item `i + 1`.
pub fn score_candidates(query: &[f64], table: &Mat, similarity: Similarity) -> Vec<f64> {
    let qn = norm(query);
    (1..table.rows())
        .map(|i| {
            let row = table.row(i);
            match similarity {
                Similarity::Dot => dot(query, row),
                Similarity::Cosine => {
                    let d = qn * norm(row);
                    if d == 0.0 {
                        0.0
                    } else {
                        dot(query, row) / d
                    }
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(layers: usize, dim: usize, len: usize, positions: bool) -> (ParamStore, SequenceEncoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = EncoderConfig {
            layers,
            heads: 2,
            ..EncoderConfig::default()
        };
        let enc = SequenceEncoder::new(&mut store, &cfg, 6, dim, len, positions, &mut rng);
        (store, enc)
    }

    fn input(items: &[usize], times: &Mat) -> EncoderInput {
        let mask: Vec<bool> = items.iter().map(|&i| i != 0).collect();
        EncoderInput {
            batch: 1,
            len: items.len(),
            items: items.to_vec(),
            last: vec![items.len() - 1],
            mask,
            time_features: Some(times.clone()),
        }
    }

    fn run(store: &ParamStore, enc: &SequenceEncoder, inp: &EncoderInput) -> Vec<f64> {
        let mut g = Graph::new(store);
        let out = enc.forward(&mut g, inp, None).unwrap();
        g.value(out).row(0).to_vec()
    }

    #[test]
    fn lookup_gathers_rows() {
        let t = Mat::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(lookup(&t, &[0]).unwrap().row(0), &[0.0, 0.0]);
        let two = lookup(&t, &[2, 2]).unwrap();
        assert_eq!(two.row(0), two.row(1));
        let three = lookup(&t, &[1, 0, 2]).unwrap();
        for (r, &i) in [1, 0, 2].iter().enumerate() {
            assert_eq!(three.row(r), lookup(&t, &[i]).unwrap().row(0));
        }
        assert!(lookup(&t, &[3]).is_err());
    }

    #[test]
    fn single_item_identity_block_is_layer_norm_of_input() {
        let (mut store, enc) = build(1, 4, 1, false);
        let b = enc.blocks[0];
        for lin in [b.query, b.key, b.value, b.out] {
            *store.value_mut(lin.weight) = Mat::identity(4);
        }
        store.value_mut(b.ffn.output.weight).fill(0.0);
        let item = store.value(enc.item_table).row(2).to_vec();
        let tau = vec![0.0, 1.0, 0.0, 1.0];
        let x: Vec<f64> = item.iter().zip(&tau).map(|(a, b)| a + b).collect();
        let out = run(&store, &enc, &input(&[2], &Mat::row_vector(&tau)));

        // Oracle: x + LN(x) has the same direction after centering, so the
        // final LN returns LN(x) up to the epsilon inside the square root.
        let ln = |v: &[f64]| -> Vec<f64> {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / v.len() as f64;
            v.iter().map(|a| (a - m) / (var + 1e-5).sqrt()).collect()
        };
        let lx = ln(&x);
        let expect = ln(&x.iter().zip(&lx).map(|(a, b)| a + b).collect::<Vec<_>>());
        for ((o, e), l) in out.iter().zip(&expect).zip(&lx) {
            assert!((o - e).abs() < 1e-12);
            assert!((o - l).abs() < 1e-4);
        }
    }

    #[test]
    fn padding_prefix_does_not_change_output() {
        let (store, enc) = build(2, 4, 4, false);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ta: Vec<f64> = (0..4).map(|_| rng.random()).collect();
        let tb: Vec<f64> = (0..4).map(|_| rng.random()).collect();
        let z = vec![0.0; 4];
        let four = Mat::from_rows(&[z.clone(), z.clone(), ta.clone(), tb.clone()]);
        let three = Mat::from_rows(&[z.clone(), ta.clone(), tb.clone()]);
        let a = run(&store, &enc, &input(&[0, 0, 3, 5], &four));
        let b = run(&store, &enc, &input(&[0, 3, 5], &three));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn order_matters() {
        let (store, enc) = build(2, 4, 3, true);
        let mk = |items: &[usize]| EncoderInput {
            batch: 1,
            len: 3,
            items: items.to_vec(),
            mask: vec![true; 3],
            time_features: None,
            last: vec![2],
        };
        let a = run(&store, &enc, &mk(&[1, 2, 3]));
        let b = run(&store, &enc, &mk(&[2, 1, 3]));
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let (store, enc) = build(1, 4, 2, true);
        let mut g = Graph::new(&store);
        let inp = EncoderInput {
            batch: 1,
            len: 2,
            items: vec![1, 4],
            mask: vec![true; 2],
            time_features: None,
            last: vec![1],
        };
        enc.forward(&mut g, &inp, None).unwrap();
        let probs: Vec<&[f64]> = (0..g.len())
            .filter_map(|i| g.attention_probs(crate::autograd::Var::from_index(i)))
            .collect();
        assert_eq!(probs.len(), 1);
        for q in probs[0].chunks(2) {
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_padding_is_an_error() {
        let (store, enc) = build(1, 4, 2, false);
        let mut g = Graph::new(&store);
        let inp = input(&[0, 0], &Mat::zeros(2, 4));
        assert!(matches!(enc.forward(&mut g, &inp, None), Err(Error::EmptySequence)));
    }

    #[test]
    fn scoring() {
        let table = Mat::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let s = score_candidates(&[0.0, 1.0, 0.0], &table, Similarity::Dot);
        assert_eq!(s, vec![0.0, 1.0, 0.0]);
        let z = score_candidates(&[0.0; 3], &table, Similarity::Dot);
        assert!(z.iter().all(|&x| x == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = Mat::from_vec(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect());
        let q = [0.3, -0.7, 0.2];
        let s = score_candidates(&q, &t, Similarity::Dot);
        for i in 1..6 {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += q[j] * t[(i, j)];
            }
            assert!((s[i - 1] - acc).abs() < 1e-15);
        }
    }
}
