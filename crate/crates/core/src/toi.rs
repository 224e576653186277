//! Time-of-interest head: predicts the next time embedding from the user
//! representation and the last observed time embedding, then folds the
//! prediction back into the representation.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::config::ToiConfig;
use crate::params::{Mlp, ParamStore};
use crate::tensor::cosine;

#[derive(Clone, Copy, Debug)]
pub struct ToiHead {
    /// `(g_u, tau_prev) -> tau_hat`.
    pub predictor: Mlp,
    /// `(g_u, tau_hat) -> fused representation`.
    pub fusion: Mlp,
}

impl ToiHead {
    pub fn new(store: &mut ParamStore, cfg: &ToiConfig, dim: usize, rng: &mut impl Rng) -> Self {
        let hidden = cfg.hidden_mult * dim;
        Self {
            predictor: Mlp::new(store, "toi.predictor", 2 * dim, hidden, dim, rng),
            fusion: Mlp::new(store, "toi.fusion", 2 * dim, hidden, dim, rng),
        }
    }

    pub fn predict(&self, g: &mut Graph<'_>, user: Var, tau_prev: Var) -> Var {
        let x = g.concat(&[user, tau_prev]);
        self.predictor.forward(g, x)
    }

    /// `(1 - gamma) * user + gamma * fusion(user, tau_hat)`; returns `user`
    /// itself when `gamma == 0`.
    pub fn fuse(&self, g: &mut Graph<'_>, user: Var, tau_hat: Var, gamma: f64) -> Var {
        if gamma == 0.0 {
            return user;
        }
        let x = g.concat(&[user, tau_hat]);
        let fused = self.fusion.forward(g, x);
        if gamma == 1.0 {
            return fused;
        }
        let keep = g.scale(user, 1.0 - gamma);
        let mix = g.scale(fused, gamma);
        g.add(keep, mix)
    }
}

/// `(1 - gamma) * user + gamma * fused`, elementwise.
pub fn blend(user: &[f64], fused: &[f64], gamma: f64) -> Vec<f64> {
    if gamma == 0.0 {
        return user.to_vec();
    }
    user.iter()
        .zip(fused)
        .map(|(u, f)| (1.0 - gamma) * u + gamma * f)
        .collect()
}

/// `-cos(tau, tau_hat)`, or `None` when either side has zero norm.
pub fn toi_loss(tau_hat: &[f64], tau: &[f64]) -> Option<f64> {
    cosine(tau, tau_hat).map(|c| -c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mat;
    use proptest::{prop_assert, prop_assume, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn head(dim: usize) -> (ParamStore, ToiHead) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = ToiHead::new(&mut store, &ToiConfig::default(), dim, &mut rng);
        (store, h)
    }

    fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044_715 * x * x * x)).tanh())
    }

    #[test]
    fn zero_output_layer_predicts_zero() {
        let (mut store, h) = head(4);
        store.value_mut(h.predictor.output.weight).fill(0.0);
        let mut g = Graph::new(&store);
        let u = g.constant(Mat::row_vector(&[0.1, 0.2, 0.3, 0.4]));
        let t = g.constant(Mat::row_vector(&[1.0, 0.0, 1.0, 0.0]));
        let out = h.predict(&mut g, u, t);
        assert!(g.value(out).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn predictor_matches_hand_forward() {
        let (mut store, h) = head(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for id in [h.predictor.hidden.weight, h.predictor.hidden.bias, h.predictor.output.weight, h.predictor.output.bias] {
            let v = store.value_mut(id);
            for x in v.data_mut() {
                *x = rng.random_range(-0.1..0.1);
            }
        }
        let u = [0.5, -0.25, 0.125, 1.0];
        let tp = [0.0, 1.0, 0.3, -0.2];
        let x: Vec<f64> = u.iter().chain(&tp).copied().collect();
        let w1 = store.value(h.predictor.hidden.weight);
        let b1 = store.value(h.predictor.hidden.bias);
        let w2 = store.value(h.predictor.output.weight);
        let b2 = store.value(h.predictor.output.bias);
        let hid: Vec<f64> = (0..w1.cols())
            .map(|j| gelu((0..8).map(|i| x[i] * w1[(i, j)]).sum::<f64>() + b1[(0, j)]))
            .collect();
        let expect: Vec<f64> = (0..4)
            .map(|j| (0..hid.len()).map(|i| hid[i] * w2[(i, j)]).sum::<f64>() + b2[(0, j)])
            .collect();
        let mut g = Graph::new(&store);
        let uv = g.constant(Mat::row_vector(&u));
        let tv = g.constant(Mat::row_vector(&tp));
        let out = h.predict(&mut g, uv, tv);
        for (a, b) in g.value(out).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
        let again = h.predict(&mut g, uv, tv);
        assert_eq!(g.value(out), g.value(again));
    }

    #[test]
    fn fuse_endpoints_and_convexity() {
        let (store, h) = head(4);
        let mut g = Graph::new(&store);
        let u = g.constant(Mat::row_vector(&[0.5, -1.0, 2.0, 0.0]));
        let t = g.constant(Mat::row_vector(&[0.1, 0.9, -0.3, 0.2]));
        let zero = h.fuse(&mut g, u, t, 0.0);
        assert_eq!(zero, u);
        let one = h.fuse(&mut g, u, t, 1.0);
        let x = g.concat(&[u, t]);
        let net = h.fusion.forward(&mut g, x);
        assert_eq!(g.value(one), g.value(net));

        let mixed = h.fuse(&mut g, u, t, 0.8);
        let expect = blend(g.value(u).row(0), g.value(net).row(0), 0.8);
        for (a, b) in g.value(mixed).row(0).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let mid = h.fuse(&mut g, u, t, 0.5);
        for j in 0..4 {
            let m = 0.5 * (g.value(u)[(0, j)] + g.value(net)[(0, j)]);
            assert!((g.value(mid)[(0, j)] - m).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_reference_points() {
        let t = [0.3, -0.4, 0.5];
        assert!((toi_loss(&t, &t).unwrap() + 1.0).abs() < 1e-15);
        let neg: Vec<f64> = t.iter().map(|x| -x).collect();
        assert!((toi_loss(&neg, &t).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(toi_loss(&[1.0, 0.0], &[0.0, 1.0]), Some(0.0));
        assert_eq!(toi_loss(&[0.0, 0.0], &[0.0, 1.0]), None);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let store = ParamStore::new();
        let tau = Mat::row_vector(&[0.2, -0.5, 0.9, 0.1]);
        let hat = Mat::row_vector(&[0.4, 0.3, -0.2, 0.7]);
        let mut g = Graph::new(&store);
        let a = g.constant(tau.clone());
        let b = g.constant(hat.clone());
        let c = g.row_cosine(a, b);
        let loss = g.scale(c, -1.0);
        let grads = g.backward_all(loss);
        let grad = grads[b.index()].as_ref().unwrap();
        let h = 1e-6;
        for j in 0..4 {
            let mut p = hat.clone();
            p.data_mut()[j] += h;
            let mut m = hat.clone();
            m.data_mut()[j] -= h;
            let fd = (toi_loss(p.row(0), tau.row(0)).unwrap() - toi_loss(m.row(0), tau.row(0)).unwrap()) / (2.0 * h);
            let an = grad[(0, j)];
            assert!((fd - an).abs() / an.abs().max(fd.abs()).max(1e-8) < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn loss_scale_invariant(v in proptest::collection::vec(-1.0f64..1.0, 4), w in proptest::collection::vec(-1.0f64..1.0, 4), c in 0.01f64..100.0) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3) && w.iter().any(|x| x.abs() > 1e-3));
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let a = toi_loss(&v, &w).unwrap();
            let b = toi_loss(&scaled, &w).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
        }

        #[test]
        fn blend_is_affine(gamma in 0.0f64..1.0, u in proptest::collection::vec(-2.0f64..2.0, 3), f in proptest::collection::vec(-2.0f64..2.0, 3)) {
            let b = blend(&u, &f, gamma);
            for j in 0..3 {
                prop_assert!((b[j] - (u[j] + gamma * (f[j] - u[j]))).abs() < 1e-12);
            }
        }
    }
}
