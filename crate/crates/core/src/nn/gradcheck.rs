//! Central finite-difference gradient checks.

use crate::error::Result;
use crate::nn::params::ParamStore;
use crate::nn::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// max |analytic − numeric| / max(1, |analytic|)
    pub max_error: f64,
    pub checked: usize,
}

/// Compare tape gradients of every trainable scalar in `store` with central
/// differences of step `h`. `loss` must rebuild the whole forward pass.
pub fn check<F>(store: &mut ParamStore, h: f64, mut loss: F) -> Result<GradCheck>
where
    F: FnMut(&mut Tape, &mut ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let root = loss(&mut tape, store)?;
    let grads = tape.backward(root)?;
    let analytic: Vec<Option<Vec<f64>>> = store.ids().map(|id| grads.param(id).map(|g| g.to_vec())).collect();

    let mut eval = |store: &mut ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let r = loss(&mut t, store)?;
        Ok(t.scalar(r))
    };

    let mut out = GradCheck { max_error: 0.0, checked: 0 };
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        if !store.entries()[pi].trainable {
            continue;
        }
        for j in 0..store.get(id).len() {
            let x0 = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = x0 + h;
            let fp = eval(store)?;
            store.get_mut(id).data_mut()[j] = x0 - h;
            let fm = eval(store)?;
            store.get_mut(id).data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[pi].as_ref().map_or(0.0, |g| g[j]);
            let err = (a - numeric).abs() / a.abs().max(1.0);
            out.max_error = out.max_error.max(err);
            out.checked += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{Conv2d, Ctx, Dense, Lstm};
    use crate::nn::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn three_layer_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let d1 = Dense::new(&mut store, "d1", 5, 7, &mut rng);
        let d2 = Dense::new(&mut store, "d2", 7, 6, &mut rng);
        let d3 = Dense::new(&mut store, "d3", 6, 2, &mut rng);
        for e in store.entries_mut() {
            e.tensor.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
        let x = random_input(&mut rng, &[4, 5]);
        let r = check(&mut store, 1e-6, |tape, s| {
            let xi = tape.constant(&x);
            let h = d1.forward(tape, s, xi)?;
            let h = tape.tanh(h);
            let h = d2.forward(tape, s, h)?;
            let h = tape.sigmoid(h);
            let y = d3.forward(tape, s, h)?;
            let sq = tape.square(y);
            Ok(tape.mean(sq))
        })
        .unwrap();
        assert!(r.max_error < 1e-4, "{r:?}");
    }

    #[test]
    fn conv_pool_relu_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let c1 = Conv2d::new(&mut store, "c1", 2, 3, (3, 2), (1, 0), &mut rng);
        for e in store.entries_mut() {
            e.tensor.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
        let x = random_input(&mut rng, &[2, 2, 6, 3]);
        let r = check(&mut store, 1e-6, |tape, s| {
            let xi = tape.constant(&x);
            let h = c1.forward(tape, s, xi)?;
            let h = tape.max_pool(h, (2, 1))?;
            let sq = tape.square(h);
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(r.max_error < 1e-4, "{r:?}");
    }

    #[test]
    fn lstm_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let l = Lstm::new(&mut store, "l", 3, 4, &mut rng);
        for e in store.entries_mut() {
            e.tensor.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
        let xs: Vec<Tensor> = (0..3).map(|_| random_input(&mut rng, &[2, 3])).collect();
        let r = check(&mut store, 1e-6, |tape, s| {
            let vs: Vec<_> = xs.iter().map(|x| tape.constant(x)).collect();
            let out = l.forward_sequence(tape, s, &vs)?;
            let sq = tape.square(*out.last().unwrap());
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(r.max_error < 1e-4, "{r:?}");
    }

    #[test]
    fn batchnorm_and_row_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 3, 4, &mut rng);
        let bn = crate::nn::layers::BatchNorm1d::new(&mut store, "bn", 4);
        store.get_mut(bn.gamma).data_mut().copy_from_slice(&[0.5, 1.5, -0.7, 1.1]);
        let x = random_input(&mut rng, &[5, 3]);
        let target = random_input(&mut rng, &[5, 4]);
        let r = check(&mut store, 1e-6, |tape, s| {
            let xi = tape.constant(&x);
            let h = d.forward(tape, s, xi)?;
            let h = bn.forward(tape, s, h, true)?;
            let h = tape.row_normalize(h, 2.0)?;
            let t = tape.constant(&target);
            let diff = tape.sub(h, t)?;
            let sq = tape.square(diff);
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(r.max_error < 1e-4, "{r:?}");
    }

    #[test]
    fn dropout_with_fixed_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 4, 4, &mut rng);
        let x = random_input(&mut rng, &[3, 4]);
        let r = check(&mut store, 1e-6, |tape, s| {
            let xi = tape.constant(&x);
            let h = d.forward(tape, s, xi)?;
            let mut mrng = ChaCha8Rng::seed_from_u64(99);
            let mut ctx = Ctx::train(&mut mrng);
            let h = crate::nn::layers::dropout(tape, h, 0.3, &mut ctx)?;
            let e = tape.exp(h);
            Ok(tape.sum(e))
        })
        .unwrap();
        assert!(r.max_error < 1e-4, "{r:?}");
    }
}
