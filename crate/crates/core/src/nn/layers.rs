//! Layers on top of the tape. Each layer owns [`ParamId`]s into a
//! [`ParamStore`] and records its forward computation on a [`Tape`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::init::xavier_uniform;
use crate::nn::params::{ParamId, ParamStore};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;

/// Forward-pass mode plus the randomness dropout needs while training.
pub struct Ctx<'a> {
    pub training: bool,
    pub rng: Option<&'a mut dyn rand::RngCore>,
}

impl<'a> Ctx<'a> {
    pub fn eval() -> Self {
        Self { training: false, rng: None }
    }

    pub fn train(rng: &'a mut dyn rand::RngCore) -> Self {
        Self { training: true, rng: Some(rng) }
    }
}

/// Affine map y = x·W + b with W stored [in, out].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let w = store.add(format!("{name}.w"), xavier_uniform(&[in_dim, out_dim], in_dim, out_dim, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out_dim]));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        if tape.shape(x).len() != 2 || tape.shape(x)[1] != self.in_dim {
            return Err(Error::shape(format!(
                "dense expects [B, {}], got {:?}",
                self.in_dim,
                tape.shape(x)
            )));
        }
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }
}

/// Stride-1 2-D convolution over [B, C, H, W] maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub pad: (usize, usize),
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        pad: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let area = kernel.0 * kernel.1;
        let w = store.add(
            format!("{name}.w"),
            xavier_uniform(&[out_ch, in_ch, kernel.0, kernel.1], in_ch * area, out_ch * area, rng),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out_ch]));
        Self { w, b, in_ch, out_ch, kernel, pad }
    }

    /// Padding that keeps the spatial size for odd kernels.
    pub fn same_pad(kernel: (usize, usize)) -> (usize, usize) {
        ((kernel.0 - 1) / 2, (kernel.1 - 1) / 2)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.conv2d(x, w, b, self.pad)
    }
}

/// LSTM layer with separate forget/input/candidate/output weights, each
/// acting on the concatenation [m_prev, x_t].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lstm {
    /// W_f, W_i, W_C, W_o, each [hidden + input, hidden].
    pub w: [ParamId; 4],
    /// b_f, b_i, b_C, b_o.
    pub b: [ParamId; 4],
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let gates = ["f", "i", "c", "o"];
        let w = gates.map(|g| {
            store.add(
                format!("{name}.w_{g}"),
                xavier_uniform(&[hidden + input, hidden], hidden + input, hidden, rng),
            )
        });
        let b = gates.map(|g| store.add(format!("{name}.b_{g}"), Tensor::zeros(&[hidden])));
        Self { w, b, input, hidden }
    }

    /// One time step. Returns (m_t, C_t).
    pub fn cell(&self, tape: &mut Tape, store: &ParamStore, x_t: Var, m_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        let bs = tape.shape(x_t)[0];
        if tape.shape(x_t) != [bs, self.input] {
            return Err(Error::shape(format!("lstm input {:?}, expected [{bs}, {}]", tape.shape(x_t), self.input)));
        }
        if tape.shape(m_prev) != [bs, self.hidden] || tape.shape(c_prev) != [bs, self.hidden] {
            return Err(Error::shape("lstm state dims"));
        }
        let z = tape.concat_cols(&[m_prev, x_t])?;
        let mut pre = [z; 4];
        for g in 0..4 {
            let w = tape.param(store, self.w[g]);
            let b = tape.param(store, self.b[g]);
            let a = tape.matmul(z, w)?;
            pre[g] = tape.add_bias(a, b)?;
        }
        let f = tape.sigmoid(pre[0]);
        let i = tape.sigmoid(pre[1]);
        let cand = tape.tanh(pre[2]);
        let o = tape.sigmoid(pre[3]);
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, cand)?;
        let c_t = tape.add(keep, write)?;
        let squashed = tape.tanh(c_t);
        let m_t = tape.mul(o, squashed)?;
        Ok((m_t, c_t))
    }

    /// Run over a chronological sequence from zero state; returns every m_t.
    pub fn forward_sequence(&self, tape: &mut Tape, store: &ParamStore, xs: &[Var]) -> Result<Vec<Var>> {
        let Some(&first) = xs.first() else {
            return Err(Error::Empty("lstm sequence"));
        };
        let bs = tape.shape(first)[0];
        let zero = Tensor::zeros(&[bs, self.hidden]);
        let mut m = tape.constant(&zero);
        let mut c = tape.constant(&zero);
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            let (m2, c2) = self.cell(tape, store, x, m, c)?;
            m = m2;
            c = c2;
            out.push(m);
        }
        Ok(out)
    }
}

/// Batch normalization over the feature axis of [B, N] activations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, n: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(&[n], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[n])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[n])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::filled(&[n], 1.0)),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Training mode normalizes with batch statistics and updates the
    /// running averages; evaluation mode uses the frozen running averages.
    pub fn forward(&self, tape: &mut Tape, store: &mut ParamStore, x: Var, training: bool) -> Result<Var> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        let bs = tape.shape(x)[0];
        if training && bs > 1 {
            let (y, mean, var) = tape.batch_norm_train(x, gamma, beta, self.eps)?;
            let unbias = bs as f64 / (bs as f64 - 1.0);
            let mom = self.momentum;
            for (r, m) in store.get_mut(self.running_mean).data_mut().iter_mut().zip(&mean) {
                *r = (1.0 - mom) * *r + mom * m;
            }
            for (r, v) in store.get_mut(self.running_var).data_mut().iter_mut().zip(&var) {
                *r = (1.0 - mom) * *r + mom * v * unbias;
            }
            Ok(y)
        } else {
            self.forward_eval(tape, store, x)
        }
    }

    /// Normalize with the frozen running averages.
    pub fn forward_eval(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        let rm = store.get(self.running_mean).data();
        let rv = store.get(self.running_var).data();
        let inv: Vec<f64> = rv.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let shift: Vec<f64> = rm.iter().zip(&inv).map(|(m, s)| -m * s).collect();
        let inv = tape.input(vec![inv.len()], inv)?;
        let shift = tape.input(vec![shift.len()], shift)?;
        let xn = tape.mul_cols(x, inv)?;
        let xn = tape.add_bias(xn, shift)?;
        let y = tape.mul_cols(xn, gamma)?;
        tape.add_bias(y, beta)
    }
}

/// Inverted dropout: survivors are scaled by 1/(1-rate) while training, and
/// evaluation is the identity.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, ctx: &mut Ctx) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0,1)")));
    }
    if !ctx.training || rate == 0.0 {
        return Ok(x);
    }
    let rng = ctx
        .rng
        .as_deref_mut()
        .ok_or_else(|| Error::invalid("training-mode dropout needs an rng"))?;
    let keep = 1.0 / (1.0 - rate);
    let n = tape.value(x).len();
    let mask = (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
    tape.dropout_mask(x, mask)
}

/// Declarative layer description used by sequential stacks.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    MaxPool((usize, usize)),
    /// Input [B, T, F]; output [B, T, H].
    Lstm(Lstm),
    Dropout(f64),
    Flatten,
    Reshape(Vec<usize>),
    Relu,
    Tanh,
    BatchNorm(BatchNorm1d),
    /// Row-normalize to the given total power.
    LambdaPower(f64),
}

impl Layer {
    /// Forward one layer. `Reshape` dims exclude the batch axis.
    pub fn forward(&self, tape: &mut Tape, store: &mut ParamStore, x: Var, ctx: &mut Ctx) -> Result<Var> {
        let bs = tape.shape(x)[0];
        match self {
            Layer::Dense(d) => d.forward(tape, store, x),
            Layer::Conv2d(c) => c.forward(tape, store, x),
            Layer::MaxPool(w) => tape.max_pool(x, *w),
            Layer::Lstm(l) => {
                let s = tape.shape(x).to_vec();
                if s.len() != 3 || s[2] != l.input {
                    return Err(Error::shape(format!("lstm layer expects [B, T, {}], got {s:?}", l.input)));
                }
                let flat = tape.reshape(x, vec![bs, s[1] * s[2]])?;
                let steps = (0..s[1])
                    .map(|t| tape.slice_cols(flat, t * s[2], s[2]))
                    .collect::<Result<Vec<_>>>()?;
                let outs = l.forward_sequence(tape, store, &steps)?;
                let cat = tape.concat_cols(&outs)?;
                tape.reshape(cat, vec![bs, s[1], l.hidden])
            }
            Layer::Dropout(rate) => dropout(tape, x, *rate, ctx),
            Layer::Flatten => {
                let n = tape.value(x).len() / bs;
                tape.reshape(x, vec![bs, n])
            }
            Layer::Reshape(dims) => {
                let mut shape = vec![bs];
                shape.extend_from_slice(dims);
                tape.reshape(x, shape)
            }
            Layer::Relu => Ok(tape.relu(x)),
            Layer::Tanh => Ok(tape.tanh(x)),
            Layer::BatchNorm(b) => b.forward(tape, store, x, ctx.training),
            Layer::LambdaPower(p) => tape.row_normalize(x, p.sqrt()),
        }
    }
}

/// Convenience: run a sequential stack.
pub fn forward_stack(layers: &[Layer], tape: &mut Tape, store: &mut ParamStore, x: Var, ctx: &mut Ctx) -> Result<Var> {
    layers.iter().try_fold(x, |h, l| l.forward(tape, store, h, ctx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_lstm(store: &mut ParamStore, input: usize, hidden: usize) -> Lstm {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Lstm::new(store, "l", input, hidden, &mut rng);
        for id in l.w {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        l
    }

    #[test]
    fn zero_lstm_zero_state_stays_zero() {
        let mut store = ParamStore::new();
        let l = zero_lstm(&mut store, 3, 2);
        let mut tape = Tape::new();
        let x = tape.input(vec![1, 3], vec![0.3, -1.0, 2.0]).unwrap();
        let m = tape.input(vec![1, 2], vec![0.0; 2]).unwrap();
        let c = tape.input(vec![1, 2], vec![0.0; 2]).unwrap();
        let (mt, ct) = l.cell(&mut tape, &store, x, m, c).unwrap();
        assert_eq!(tape.value(mt), &[0.0, 0.0]);
        assert_eq!(tape.value(ct), &[0.0, 0.0]);
    }

    #[test]
    fn zero_lstm_halves_cell() {
        let mut store = ParamStore::new();
        let l = zero_lstm(&mut store, 1, 1);
        let mut tape = Tape::new();
        let c0 = 1.7;
        let x = tape.input(vec![1, 1], vec![5.0]).unwrap();
        let m = tape.input(vec![1, 1], vec![0.2]).unwrap();
        let c = tape.input(vec![1, 1], vec![c0]).unwrap();
        let (mt, ct) = l.cell(&mut tape, &store, x, m, c).unwrap();
        assert!((tape.value(ct)[0] - 0.5 * c0).abs() < 1e-15);
        assert!((tape.value(mt)[0] - 0.5 * (0.5 * c0).tanh()).abs() < 1e-15);
    }

    #[test]
    fn unit_weight_scalar_lstm() {
        let mut store = ParamStore::new();
        let l = zero_lstm(&mut store, 1, 1);
        for id in l.w {
            store.get_mut(id).data_mut().copy_from_slice(&[1.0, 1.0]);
        }
        let mut tape = Tape::new();
        let x = tape.input(vec![1, 1], vec![0.0]).unwrap();
        let m = tape.input(vec![1, 1], vec![0.0]).unwrap();
        let c = tape.input(vec![1, 1], vec![1.0]).unwrap();
        let (mt, ct) = l.cell(&mut tape, &store, x, m, c).unwrap();
        assert!((tape.value(ct)[0] - 0.5).abs() < 1e-15);
        assert!((tape.value(mt)[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn identity_dense() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dense::new(&mut store, "d", 3, 3, &mut rng);
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        store.get_mut(d.w).data_mut().copy_from_slice(&eye);
        let mut tape = Tape::new();
        let x = tape.input(vec![2, 3], vec![1.0, 2.0, 3.0, -4.0, 5.0, -6.0]).unwrap();
        let y = d.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn dropout_eval_is_identity_and_train_rescales() {
        let mut tape = Tape::new();
        let x = tape.input(vec![1, 1000], vec![1.0; 1000]).unwrap();
        let y = dropout(&mut tape, x, 0.2, &mut Ctx::eval()).unwrap();
        assert_eq!(y, x);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ctx = Ctx::train(&mut rng);
        let y = dropout(&mut tape, x, 0.2, &mut ctx).unwrap();
        let v = tape.value(y);
        assert!(v.iter().all(|&a| a == 0.0 || (a - 1.25).abs() < 1e-15));
        let zeros = v.iter().filter(|&&a| a == 0.0).count();
        assert!((150..250).contains(&zeros));
        assert!(dropout(&mut tape, x, 1.0, &mut Ctx::eval()).is_err());
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut store = ParamStore::new();
        let bn = BatchNorm1d::new(&mut store, "bn", 2);
        store.get_mut(bn.running_mean).data_mut().copy_from_slice(&[1.0, -1.0]);
        store.get_mut(bn.running_var).data_mut().copy_from_slice(&[4.0, 1.0]);
        let mut tape = Tape::new();
        let x = tape.input(vec![1, 2], vec![3.0, 0.0]).unwrap();
        let y = bn.forward(&mut tape, &mut store, x, false).unwrap();
        let v = tape.value(y);
        assert!((v[0] - 2.0 / (4.0f64 + 1e-5).sqrt()).abs() < 1e-12);
        assert!((v[1] - 1.0 / (1.0f64 + 1e-5).sqrt()).abs() < 1e-12);
    }
}
