//! CNN + LSTM channel prediction network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PredictorHyper;
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::nn::layers::dropout;
use crate::nn::optim::fit;
use crate::nn::{Checkpoint, Conv2d, Ctx, Dense, Lstm, ParamStore, Tape, TrainReport, Var};
use crate::predictor::samples::{PredictionSample, SampleSet};
use crate::predictor::transform::{nmse, zeta, zeta_inv, Standardizer};
use crate::rng::{derive_seed, stream};

pub const CHECKPOINT_KIND: &str = "dlpdn";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlpdnArch {
    pub antennas: usize,
    pub devices: usize,
    pub w_step: usize,
    pub filters: [usize; 3],
    pub kernels: [usize; 3],
    pub pool: usize,
    pub lstm_hidden: [usize; 2],
    pub dropout: f64,
}

impl DlpdnArch {
    pub fn from_hyper(hyper: &PredictorHyper, antennas: usize, devices: usize) -> Self {
        Self {
            antennas,
            devices,
            w_step: hyper.w_step,
            filters: hyper.filters,
            kernels: hyper.kernels,
            pool: hyper.pool,
            lstm_hidden: hyper.lstm_hidden,
            dropout: hyper.dropout,
        }
    }

    /// Real values per channel matrix, 2MK.
    pub fn frame_len(&self) -> usize {
        2 * self.antennas * self.devices
    }

    /// Rows left after the three pooling stages.
    fn pooled_rows(&self) -> Result<usize> {
        let mut r = 2 * self.antennas;
        for _ in 0..3 {
            r /= self.pool;
        }
        if r == 0 {
            return Err(Error::Config(format!(
                "2M = {} is too small for three pooling stages of {}",
                2 * self.antennas,
                self.pool
            )));
        }
        Ok(r)
    }

    pub fn features_per_step(&self) -> Result<usize> {
        Ok(self.filters[2] * self.pooled_rows()? * self.devices)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    arch: DlpdnArch,
    norm: Standardizer,
    seed: u64,
    report: Option<TrainReport>,
}

#[derive(Debug, Clone)]
pub struct Dlpdn {
    pub arch: DlpdnArch,
    pub norm: Standardizer,
    pub store: ParamStore,
    pub seed: u64,
    pub report: Option<TrainReport>,
    convs: [Conv2d; 3],
    lstms: [Lstm; 2],
    head: Dense,
}

impl Dlpdn {
    pub fn new(arch: DlpdnArch, norm: Standardizer, seed: u64) -> Result<Self> {
        if arch.w_step == 0 || arch.pool == 0 {
            return Err(Error::Config("w_step and pool must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&arch.dropout) {
            return Err(Error::Config("dropout must lie in [0,1)".into()));
        }
        if norm.len() != arch.frame_len() {
            return Err(Error::shape("standardizer length differs from 2MK"));
        }
        let feat = arch.features_per_step()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::INIT, 0));
        let mut store = ParamStore::new();
        let mut in_ch = 1;
        let convs = [0, 1, 2].map(|i| {
            let kernel = (arch.kernels[i], 1);
            let c = Conv2d::new(&mut store, &format!("conv{i}"), in_ch, arch.filters[i], kernel, Conv2d::same_pad(kernel), &mut rng);
            in_ch = arch.filters[i];
            c
        });
        let l0 = Lstm::new(&mut store, "lstm0", feat, arch.lstm_hidden[0], &mut rng);
        let l1 = Lstm::new(&mut store, "lstm1", arch.lstm_hidden[0], arch.lstm_hidden[1], &mut rng);
        let head = Dense::new(&mut store, "head", arch.lstm_hidden[1], arch.frame_len(), &mut rng);
        Ok(Self { arch, norm, store, seed, report: None, convs, lstms: [l0, l1], head })
    }

    /// Forward pass on standardized, chronologically ordered inputs laid out
    /// [B][w_step][2M][K]. Returns standardized outputs [B, 2MK].
    fn forward(&self, store: &ParamStore, tape: &mut Tape, inputs: Vec<f64>, bs: usize, ctx: &mut Ctx) -> Result<Var> {
        let a = &self.arch;
        let (w, rows, k) = (a.w_step, 2 * a.antennas, a.devices);
        let mut x = tape.input(vec![bs * w, 1, rows, k], inputs)?;
        for c in &self.convs {
            x = c.forward(tape, store, x)?;
            x = tape.relu(x);
            x = tape.max_pool(x, (a.pool, 1))?;
        }
        let feat = a.features_per_step()?;
        let seq = tape.reshape(x, vec![bs, w * feat])?;
        let steps = (0..w).map(|t| tape.slice_cols(seq, t * feat, feat)).collect::<Result<Vec<_>>>()?;
        let h0 = self.lstms[0].forward_sequence(tape, store, &steps)?;
        let h1 = self.lstms[1].forward_sequence(tape, store, &h0)?;
        let last = *h1.last().expect("w_step >= 1");
        let d = dropout(tape, last, a.dropout, ctx)?;
        self.head.forward(tape, store, d)
    }

    fn check_history(&self, history: &[CMat]) -> Result<()> {
        if history.len() != self.arch.w_step {
            return Err(Error::shape(format!("history of {} matrices, model expects {}", history.len(), self.arch.w_step)));
        }
        if history.iter().any(|h| h.shape() != (self.arch.antennas, self.arch.devices)) {
            return Err(Error::shape(format!(
                "history matrices must be {}x{}",
                self.arch.antennas, self.arch.devices
            )));
        }
        Ok(())
    }

    fn encode(&self, history: &[CMat]) -> Vec<f64> {
        let mut v: Vec<f64> = history.iter().rev().flat_map(zeta).collect();
        self.norm.apply(&mut v);
        v
    }

    /// H̃ for each history (most recent first).
    pub fn predict_batch(&self, histories: &[&[CMat]]) -> Result<Vec<CMat>> {
        const CHUNK: usize = 256;
        let parts: Vec<Result<Vec<CMat>>> = histories
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut inputs = Vec::with_capacity(chunk.len() * self.arch.w_step * self.arch.frame_len());
                for h in chunk {
                    self.check_history(h)?;
                    inputs.extend(self.encode(h));
                }
                let mut tape = Tape::new();
                let y = self.forward(&self.store, &mut tape, inputs, chunk.len(), &mut Ctx::eval())?;
                let n = self.arch.frame_len();
                tape.value(y)
                    .chunks(n)
                    .map(|row| {
                        let mut r = row.to_vec();
                        self.norm.invert(&mut r);
                        zeta_inv(&r, self.arch.antennas, self.arch.devices)
                    })
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(histories.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    pub fn predict(&self, history: &[CMat]) -> Result<CMat> {
        Ok(self.predict_batch(&[history])?.remove(0))
    }

    pub fn predict_samples(&self, samples: &[PredictionSample]) -> Result<Vec<CMat>> {
        let hs: Vec<&[CMat]> = samples.iter().map(|s| s.history.as_slice()).collect();
        self.predict_batch(&hs)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let meta = Meta { arch: self.arch.clone(), norm: self.norm.clone(), seed: self.seed, report: self.report.clone() };
        Ok(Checkpoint::from_store(CHECKPOINT_KIND, serde_json::to_value(meta)?, &self.store))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let meta: Meta = serde_json::from_value(ck.meta.clone())?;
        let mut model = Self::new(meta.arch, meta.norm, meta.seed)?;
        ck.load_into(&mut model.store)?;
        model.report = meta.report;
        Ok(model)
    }
}

/// Mean per-sample NMSE of predictions against Ĥ(t).
pub fn mean_nmse(samples: &[PredictionSample], predictions: &[CMat]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("prediction samples"));
    }
    if samples.len() != predictions.len() {
        return Err(Error::shape("prediction count differs from sample count"));
    }
    let mut total = 0.0;
    for (s, p) in samples.iter().zip(predictions) {
        total += nmse(&s.target, p)?;
    }
    Ok(total / samples.len() as f64)
}

/// Train on `train`; the tail fraction given by `hyper.train.validation_split`
/// is held out for early stopping.
pub fn train_dlpdn(train: &SampleSet, hyper: &PredictorHyper) -> Result<Dlpdn> {
    if train.is_empty() {
        return Err(Error::Empty("predictor training set"));
    }
    if train.w_step != hyper.w_step {
        return Err(Error::Config(format!("samples use w_step {}, config says {}", train.w_step, hyper.w_step)));
    }
    let (fit_set, val_set) = train.validation_split(hyper.train.validation_split)?;
    let arch = DlpdnArch::from_hyper(hyper, train.antennas, train.devices);
    let frames: Vec<Vec<f64>> = fit_set.samples.iter().flat_map(|s| s.history.iter().map(zeta)).collect();
    let norm = Standardizer::fit(frames.iter().map(|f| f.as_slice()))?;
    let mut model = Dlpdn::new(arch, norm, hyper.train.seed)?;

    let target_of = |s: &PredictionSample| if hyper.true_csi_target { zeta(&s.truth) } else { zeta(&s.target) };
    let encode = |set: &SampleSet| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let x = set.samples.iter().map(|s| model.encode(&s.history)).collect();
        let y = set
            .samples
            .iter()
            .map(|s| {
                let mut t = target_of(s);
                model.norm.apply(&mut t);
                t
            })
            .collect();
        (x, y)
    };
    let (xf, yf) = encode(&fit_set);
    let (xv, yv) = encode(&val_set);

    let layout = model.clone();
    let n_out = model.arch.frame_len();
    let batch_loss = |store: &ParamStore, tape: &mut Tape, idx: &[usize], xs: &[Vec<f64>], ys: &[Vec<f64>], ctx: &mut Ctx| -> Result<Var> {
        let inputs: Vec<f64> = idx.iter().flat_map(|&i| xs[i].iter().copied()).collect();
        let targets: Vec<f64> = idx.iter().flat_map(|&i| ys[i].iter().copied()).collect();
        let out = layout.forward(store, tape, inputs, idx.len(), ctx)?;
        let t = tape.input(vec![idx.len(), n_out], targets)?;
        let d = tape.sub(out, t)?;
        let sq = tape.square(d);
        Ok(tape.mean(sq))
    };

    let report = fit(
        &mut model.store,
        &hyper.train,
        xf.len(),
        |store, idx, rng| {
            let mut tape = Tape::new();
            let loss = batch_loss(store, &mut tape, idx, &xf, &yf, &mut Ctx::train(rng))?;
            tape.backward(loss)?.attach(store)?;
            Ok(tape.scalar(loss))
        },
        |store| {
            let all: Vec<usize> = (0..xv.len()).collect();
            let total = all
                .chunks(512)
                .map(|c| {
                    let mut tape = Tape::new();
                    let l = batch_loss(store, &mut tape, c, &xv, &yv, &mut Ctx::eval())?;
                    Ok(tape.scalar(l) * c.len() as f64)
                })
                .sum::<Result<f64>>()?;
            Ok(total / xv.len() as f64)
        },
    )?;
    log::info!(
        "dlpdn: {} epochs, best val {:.5} at epoch {}",
        report.epochs_run(),
        report.best_val,
        report.best_epoch
    );
    model.report = Some(report);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainHyper;
    use crate::linalg::C64;

    fn arch() -> DlpdnArch {
        DlpdnArch {
            antennas: 4,
            devices: 2,
            w_step: 3,
            filters: [8, 4, 2],
            kernels: [5, 3, 3],
            pool: 2,
            lstm_hidden: [6, 5],
            dropout: 0.2,
        }
    }

    fn history(seed: f64) -> Vec<CMat> {
        (0..3).map(|t| CMat::from_fn(4, 2, |i, j| C64::new((seed + i as f64 * 0.3 - j as f64 + t as f64).sin(), 0.1 * t as f64))).collect()
    }

    #[test]
    fn zero_head_predicts_zero() {
        let mut net = Dlpdn::new(arch(), Standardizer::identity(16), 1).unwrap();
        for id in [net.head.w, net.head.b] {
            net.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let p = net.predict(&history(0.0)).unwrap();
        assert_eq!(p, CMat::zeros(4, 2));
        let target = history(1.0)[0].clone();
        assert_eq!(nmse(&target, &p).unwrap(), 1.0);
    }

    #[test]
    fn prediction_is_deterministic_and_survives_checkpoint() {
        let net = Dlpdn::new(arch(), Standardizer::identity(16), 3).unwrap();
        let h = history(0.5);
        let a = net.predict(&h).unwrap();
        assert_eq!(a, net.predict(&h).unwrap());
        let json = net.checkpoint().unwrap().to_json().unwrap();
        let back = Dlpdn::from_checkpoint(&Checkpoint::from_json(&json).unwrap()).unwrap();
        assert_eq!(back.predict(&h).unwrap(), a);
        assert!(net.predict(&h[..2]).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let net = Dlpdn::new(arch(), Standardizer::identity(16), 2).unwrap();
        let hs: Vec<Vec<CMat>> = (0..5).map(|s| history(s as f64)).collect();
        let refs: Vec<&[CMat]> = hs.iter().map(|h| h.as_slice()).collect();
        let batch = net.predict_batch(&refs).unwrap();
        for (h, b) in hs.iter().zip(&batch) {
            assert!((net.predict(h).unwrap() - b).norm() < 1e-12);
        }
    }

    #[test]
    fn too_few_rows_for_pooling() {
        let a = DlpdnArch { antennas: 2, ..arch() };
        assert!(Dlpdn::new(a, Standardizer::identity(8), 0).is_err());
    }

    #[test]
    fn learns_constant_channels() {
        let samples: Vec<PredictionSample> = (0..200)
            .map(|s| {
                let h = CMat::from_fn(4, 2, |i, j| C64::new(((s * 7 + i * 3 + j) as f64).sin(), ((s + i) as f64).cos()));
                PredictionSample { episode: s, slot: 3, history: vec![h.clone(); 3], target: h.clone(), truth: h }
            })
            .collect();
        let set = SampleSet { w_step: 3, antennas: 4, devices: 2, samples };
        let hyper = PredictorHyper {
            w_step: 3,
            lstm_hidden: [32, 32],
            dropout: 0.0,
            train: TrainHyper { epochs: 400, batch_size: 32, learning_rate: 3e-3, early_stop_patience: 60, ..TrainHyper::default() },
            ..PredictorHyper::default()
        };
        let net = train_dlpdn(&set, &hyper).unwrap();
        let report = net.report.as_ref().unwrap();
        assert!(report.train_loss.last().unwrap() <= &report.train_loss[0]);
        let preds = net.predict_samples(&set.samples).unwrap();
        let e = mean_nmse(&set.samples, &preds).unwrap();
        assert!(e < 0.05, "nmse {e}");
    }
}
