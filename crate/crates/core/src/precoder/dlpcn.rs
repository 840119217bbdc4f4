//! Convolutional precoding network trained with the outage-penalized loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::ErrorSet;
use crate::config::{PrecoderHyper, Robustness, SystemConfig};
use crate::error::{Error, Result};
use crate::linalg::{frob_sq, CMat, CVec};
use crate::nn::optim::fit;
use crate::nn::{BatchNorm1d, Checkpoint, Conv2d, Dense, ParamStore, Tape, TrainReport, Var};
use crate::precoder::loss::{augment_channels, batch_penalty_loss, LossSpec};
use crate::precoder::metrics::unpack_precoder;
use crate::predictor::zeta;
use crate::rng::{derive_seed, stream};

pub const CHECKPOINT_KIND: &str = "dlpcn";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlpcnArch {
    pub antennas: usize,
    pub devices: usize,
    pub filters: [usize; 3],
    pub kernels: [[usize; 2]; 3],
    pub dense_multipliers: [usize; 4],
    pub mlp_only: bool,
    /// Total transmit power P_2 enforced by the output layer.
    pub power: f64,
}

impl DlpcnArch {
    pub fn from_hyper(hyper: &PrecoderHyper, cfg: &SystemConfig) -> Self {
        Self {
            antennas: cfg.antennas,
            devices: cfg.devices,
            filters: hyper.filters,
            kernels: hyper.kernels,
            dense_multipliers: hyper.dense_multipliers,
            mlp_only: hyper.mlp_only,
            power: cfg.tx_power(),
        }
    }

    pub fn output_len(&self) -> usize {
        2 * self.antennas * self.devices
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    arch: DlpcnArch,
    seed: u64,
    robustness: Robustness,
    report: Option<TrainReport>,
}

#[derive(Debug, Clone)]
pub struct Dlpcn {
    pub arch: DlpcnArch,
    pub seed: u64,
    pub robustness: Robustness,
    pub store: ParamStore,
    pub report: Option<TrainReport>,
    convs: Vec<Conv2d>,
    dense: Vec<Dense>,
    norms: Vec<BatchNorm1d>,
}

/// ζ(H̃)/‖H̃‖_F; a zero matrix stays zero.
pub fn network_input(h: &CMat) -> Vec<f64> {
    let n = frob_sq(h).sqrt();
    let mut x = zeta(h);
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    x
}

impl Dlpcn {
    pub fn new(arch: DlpcnArch, seed: u64, robustness: Robustness) -> Result<Self> {
        if arch.antennas == 0 || arch.devices == 0 {
            return Err(Error::Config("precoder needs M, K >= 1".into()));
        }
        if !(arch.power > 0.0) {
            return Err(Error::Config("transmit power must be positive".into()));
        }
        if arch.dense_multipliers[3] != 2 {
            return Err(Error::Config("the last dense layer must have 2MK outputs".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::INIT, 2));
        let mut store = ParamStore::new();
        let (m2, k) = (2 * arch.antennas, arch.devices);
        let mut convs = Vec::new();
        let mut width = m2 * k;
        if !arch.mlp_only {
            let mut in_ch = 1;
            for (i, (&f, kern)) in arch.filters.iter().zip(&arch.kernels).enumerate() {
                let kernel = (kern[0], kern[1]);
                if kernel.0 % 2 == 0 || kernel.1 % 2 == 0 {
                    return Err(Error::Config("precoder kernels must be odd".into()));
                }
                convs.push(Conv2d::new(&mut store, &format!("conv{i}"), in_ch, f, kernel, Conv2d::same_pad(kernel), &mut rng));
                in_ch = f;
            }
            width = in_ch * m2 * k;
        }
        let mk = arch.antennas * arch.devices;
        let mut dense = Vec::new();
        let mut norms = Vec::new();
        for (i, mult) in arch.dense_multipliers.iter().enumerate() {
            let out = mult * mk;
            dense.push(Dense::new(&mut store, &format!("dense{i}"), width, out, &mut rng));
            if i < 3 {
                norms.push(BatchNorm1d::new(&mut store, &format!("bn{i}"), out));
            }
            width = out;
        }
        Ok(Self { arch, seed, robustness, store, report: None, convs, dense, norms })
    }

    pub fn num_trainable(&self) -> usize {
        self.store.entries().iter().filter(|e| e.trainable).map(|e| e.tensor.len()).sum()
    }

    /// Packed precoders [B, 2MK] on the power sphere, normalizing with batch
    /// statistics and updating the running averages.
    fn forward_train(&self, store: &mut ParamStore, tape: &mut Tape, inputs: Vec<f64>, bs: usize) -> Result<Var> {
        let (m2, k) = (2 * self.arch.antennas, self.arch.devices);
        let mut x = tape.input(vec![bs, 1, m2, k], inputs)?;
        for c in &self.convs {
            x = c.forward(tape, store, x)?;
            x = tape.relu(x);
        }
        let n = tape.value(x).len() / bs;
        x = tape.reshape(x, vec![bs, n])?;
        for (i, d) in self.dense.iter().enumerate() {
            x = d.forward(tape, store, x)?;
            if let Some(bn) = self.norms.get(i) {
                x = tape.relu(x);
                x = bn.forward(tape, store, x, true)?;
            }
        }
        tape.row_normalize(x, self.arch.power.sqrt())
    }

    fn forward_eval(&self, tape: &mut Tape, inputs: Vec<f64>, bs: usize) -> Result<Var> {
        let (m2, k) = (2 * self.arch.antennas, self.arch.devices);
        let store = &self.store;
        let mut x = tape.input(vec![bs, 1, m2, k], inputs)?;
        for c in &self.convs {
            x = c.forward(tape, store, x)?;
            x = tape.relu(x);
        }
        let n = tape.value(x).len() / bs;
        x = tape.reshape(x, vec![bs, n])?;
        for (i, d) in self.dense.iter().enumerate() {
            x = d.forward(tape, store, x)?;
            if let Some(bn) = self.norms.get(i) {
                x = tape.relu(x);
                x = bn.forward_eval(tape, store, x)?;
            }
        }
        tape.row_normalize(x, self.arch.power.sqrt())
    }

    /// W = f_θ(H̃) for every input, evaluated in parallel chunks.
    pub fn precode_batch(&self, h_tilde: &[CMat]) -> Result<Vec<CMat>> {
        let (m, k) = (self.arch.antennas, self.arch.devices);
        if h_tilde.iter().any(|h| h.shape() != (m, k)) {
            return Err(Error::shape(format!("precoder expects {m}x{k} channels")));
        }
        let parts: Vec<Result<Vec<CMat>>> = h_tilde
            .par_chunks(256)
            .map(|chunk| {
                let inputs: Vec<f64> = chunk.iter().flat_map(network_input).collect();
                let mut tape = Tape::new();
                let y = self.forward_eval(&mut tape, inputs, chunk.len())?;
                tape.value(y).chunks(2 * m * k).map(|r| unpack_precoder(r, m, k)).collect()
            })
            .collect();
        let mut out = Vec::with_capacity(h_tilde.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    pub fn precode(&self, h_tilde: &CMat) -> Result<CMat> {
        Ok(self.precode_batch(std::slice::from_ref(h_tilde))?.remove(0))
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let meta = Meta { arch: self.arch.clone(), seed: self.seed, robustness: self.robustness, report: self.report.clone() };
        Ok(Checkpoint::from_store(CHECKPOINT_KIND, serde_json::to_value(meta)?, &self.store))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let meta: Meta = serde_json::from_value(ck.meta.clone())?;
        let mut net = Self::new(meta.arch, meta.seed, meta.robustness)?;
        ck.load_into(&mut net.store)?;
        net.report = meta.report;
        Ok(net)
    }
}

/// Loss settings for a configuration and robustness mode.
pub fn loss_spec(cfg: &SystemConfig, hyper: &PrecoderHyper) -> LossSpec {
    let mu = if hyper.robustness == Robustness::NonRobust { 0.0 } else { hyper.penalty_weight };
    LossSpec {
        alpha: cfg.weights_vec(),
        gamma: cfg.thresholds_vec(),
        mu: vec![mu; cfg.devices],
        eps: cfg.outage_vec(),
        noise: cfg.noise_var(),
    }
}

/// Train on predicted channels H̃ with channel errors from `errors`. The
/// non-robust mode ignores `errors` and trains on ξ·h̃ alone.
pub fn train_dlpcn(cfg: &SystemConfig, h_tilde: &[CMat], xi: &CMat, errors: &ErrorSet, hyper: &PrecoderHyper) -> Result<Dlpcn> {
    if h_tilde.is_empty() {
        return Err(Error::Empty("predicted channel set"));
    }
    let arch = DlpcnArch::from_hyper(hyper, cfg);
    let mut net = Dlpcn::new(arch, hyper.train.seed, hyper.robustness)?;
    let spec = loss_spec(cfg, hyper);
    let zero;
    let (errors, n_aug) = if hyper.robustness == Robustness::NonRobust {
        zero = ErrorSet::new(crate::dataset::Provenance::None, 0, cfg.clone(), vec![CVec::zeros(cfg.antennas)])?;
        (&zero, 1)
    } else {
        (errors, hyper.augmentations.max(1))
    };
    let n_val = ((h_tilde.len() as f64) * hyper.train.validation_split).round().max(1.0) as usize;
    if n_val >= h_tilde.len() {
        return Err(Error::invalid("validation split leaves no training samples"));
    }
    let (fit_h, val_h) = h_tilde.split_at(h_tilde.len() - n_val);
    let fit_x: Vec<Vec<f64>> = fit_h.iter().map(network_input).collect();
    let val_x: Vec<f64> = val_h.iter().flat_map(network_input).collect();
    let (m, k) = (cfg.antennas, cfg.devices);
    let layout = net.clone();
    let val_seed = derive_seed(hyper.train.seed, stream::AUGMENT, u64::MAX);

    let augment = |hs: &[&CMat], seed: u64| -> Result<Vec<Vec<Vec<CVec>>>> {
        hs.par_iter()
            .enumerate()
            .map(|(i, h)| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::AUGMENT, i as u64));
                augment_channels(h, xi, errors, n_aug, &mut rng)
            })
            .collect()
    };

    let report = fit(
        &mut net.store,
        &hyper.train,
        fit_h.len(),
        |store, idx, rng| {
            let batch_seed: u64 = rng.gen();
            let hs: Vec<&CMat> = idx.iter().map(|&i| &fit_h[i]).collect();
            let channels = augment(&hs, batch_seed)?;
            let inputs: Vec<f64> = idx.iter().flat_map(|&i| fit_x[i].iter().copied()).collect();
            let mut tape = Tape::new();
            let wv = layout.forward_train(store, &mut tape, inputs, idx.len())?;
            let ws: Vec<CMat> = tape.value(wv).chunks(2 * m * k).map(|r| unpack_precoder(r, m, k)).collect::<Result<_>>()?;
            let (loss, _, grad) = batch_penalty_loss(&ws, &channels, &spec)?;
            let root = tape.custom_scalar(loss, vec![(wv, grad)])?;
            tape.backward(root)?.attach(store)?;
            Ok(loss)
        },
        |store| {
            let mut tape = Tape::new();
            let probe = Dlpcn { store: store.clone(), ..layout.clone() };
            let wv = probe.forward_eval(&mut tape, val_x.clone(), val_h.len())?;
            let ws: Vec<CMat> = tape.value(wv).chunks(2 * m * k).map(|r| unpack_precoder(r, m, k)).collect::<Result<_>>()?;
            let hs: Vec<&CMat> = val_h.iter().collect();
            let channels = augment(&hs, val_seed)?;
            Ok(batch_penalty_loss(&ws, &channels, &spec)?.0)
        },
    )?;
    log::info!("dlpcn: {} epochs, best val {:.5} at epoch {}", report.epochs_run(), report.best_val, report.best_epoch);
    net.report = Some(report);
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainHyper;
    use crate::precoder::metrics::total_power;
    use crate::linalg::C64;

    fn cfg() -> SystemConfig {
        SystemConfig { antennas: 4, devices: 2, pilot_len: 4, ..SystemConfig::default() }
    }

    fn channels(n: usize) -> Vec<CMat> {
        (0..n).map(|s| CMat::from_fn(4, 2, |i, j| C64::new(((s * 5 + i + 3 * j) as f64).sin(), ((s + 2 * i) as f64).cos()))).collect()
    }

    #[test]
    fn untrained_output_meets_power_exactly() {
        for mlp in [false, true] {
            let hyper = PrecoderHyper { mlp_only: mlp, ..PrecoderHyper::default() };
            let net = Dlpcn::new(DlpcnArch::from_hyper(&hyper, &cfg()), 3, Robustness::Vae).unwrap();
            for w in net.precode_batch(&channels(20)).unwrap() {
                assert!((total_power(&w) / cfg().tx_power() - 1.0).abs() < 1e-12);
            }
            let w0 = net.precode(&CMat::zeros(4, 2)).unwrap();
            assert!((total_power(&w0) / cfg().tx_power() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_has_fewer_parameters() {
        let full = Dlpcn::new(DlpcnArch::from_hyper(&PrecoderHyper::default(), &cfg()), 0, Robustness::Vae).unwrap();
        let hyper = PrecoderHyper { mlp_only: true, ..PrecoderHyper::default() };
        let mlp = Dlpcn::new(DlpcnArch::from_hyper(&hyper, &cfg()), 0, Robustness::Vae).unwrap();
        assert!(mlp.num_trainable() < full.num_trainable());
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Dlpcn::new(DlpcnArch::from_hyper(&PrecoderHyper::default(), &cfg()), 5, Robustness::Gaussian).unwrap();
        let back = Dlpcn::from_checkpoint(&Checkpoint::from_json(&net.checkpoint().unwrap().to_json().unwrap()).unwrap()).unwrap();
        assert_eq!(back.robustness, Robustness::Gaussian);
        assert_eq!(net.precode_batch(&channels(3)).unwrap(), back.precode_batch(&channels(3)).unwrap());
    }

    #[test]
    fn short_training_is_deterministic_and_improves() {
        let c = cfg();
        let errs = crate::augment::estimation_error_set(&c, 200, 1).unwrap();
        let hyper = PrecoderHyper {
            augmentations: 16,
            train: TrainHyper { epochs: 8, batch_size: 16, ..TrainHyper::default() },
            ..PrecoderHyper::default()
        };
        let hs: Vec<CMat> = channels(80).into_iter().map(|h| h * C64::new(3.0, 0.0)).collect();
        let a = train_dlpcn(&c, &hs, &CMat::identity(4, 4), &errs, &hyper).unwrap();
        let b = train_dlpcn(&c, &hs, &CMat::identity(4, 4), &errs, &hyper).unwrap();
        assert_eq!(a.report, b.report);
        let r = a.report.unwrap();
        assert!(r.best_val <= r.val_loss[0]);
    }
}
