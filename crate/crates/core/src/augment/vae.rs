//! Variational autoencoder over real-stacked prediction-error vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::augment::errors::ErrorSet;
use crate::config::{SystemConfig, VaeHyper};
use crate::dataset::Provenance;
use crate::error::{Error, Result};
use crate::linalg::{CVec, C64};
use crate::nn::optim::fit;
use crate::nn::{Checkpoint, Dense, ParamStore, Tape, TrainReport, Var};
use crate::rng::{derive_seed, rng_for, stream};

pub const CHECKPOINT_KIND: &str = "vae";
pub const MIN_TRAINING_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeArch {
    /// Input dimension 2M.
    pub input: usize,
    /// Hidden width 3·input.
    pub hidden: usize,
    pub latent: usize,
}

impl VaeArch {
    pub fn new(antennas: usize, latent: Option<usize>) -> Self {
        let input = 2 * antennas;
        Self { input, hidden: 3 * input, latent: latent.unwrap_or(input) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Mlp2 {
    a: Dense,
    b: Dense,
}

impl Mlp2 {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, i: usize, h: usize, o: usize, rng: &mut R) -> Self {
        Self { a: Dense::new(store, &format!("{name}.0"), i, h, rng), b: Dense::new(store, &format!("{name}.1"), h, o, rng) }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.a.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.b.forward(tape, store, h)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    arch: VaeArch,
    scale: f64,
    seed: u64,
    report: Option<TrainReport>,
}

#[derive(Debug, Clone)]
pub struct Vae {
    pub arch: VaeArch,
    /// Multiplier applied to raw error values before encoding.
    pub scale: f64,
    pub seed: u64,
    pub store: ParamStore,
    pub report: Option<TrainReport>,
    enc_mu: Mlp2,
    enc_logvar: Mlp2,
    dec: Mlp2,
}

/// Σ ½(μ² + σ² − ln σ² − 1).
pub fn kl_gaussian(mu: &[f64], var: &[f64]) -> Result<f64> {
    if mu.len() != var.len() {
        return Err(Error::shape("kl operands differ in length"));
    }
    if var.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("variances must be positive"));
    }
    Ok(mu.iter().zip(var).map(|(m, v)| 0.5 * (m * m + v - v.ln() - 1.0)).sum())
}

/// z = μ + exp(½·logvar)⊙ε on the tape.
pub fn reparameterize(tape: &mut Tape, mu: Var, logvar: Var, eps: Var) -> Result<Var> {
    let half = tape.scale(logvar, 0.5);
    let sigma = tape.exp(half);
    let noise = tape.mul(sigma, eps)?;
    tape.add(mu, noise)
}

/// Real-stacked [Re e; Im e].
pub fn stack(e: &CVec) -> Vec<f64> {
    e.iter().map(|z| z.re).chain(e.iter().map(|z| z.im)).collect()
}

pub fn unstack(x: &[f64]) -> CVec {
    let m = x.len() / 2;
    CVec::from_fn(m, |i, _| C64::new(x[i], x[m + i]))
}

impl Vae {
    pub fn new(arch: VaeArch, scale: f64, seed: u64) -> Result<Self> {
        if arch.input == 0 || arch.latent == 0 || arch.hidden == 0 {
            return Err(Error::Config("vae dimensions must be >= 1".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config("vae data scale must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::INIT, 1));
        let mut store = ParamStore::new();
        let enc_mu = Mlp2::new(&mut store, "enc_mu", arch.input, arch.hidden, arch.latent, &mut rng);
        let enc_logvar = Mlp2::new(&mut store, "enc_logvar", arch.input, arch.hidden, arch.latent, &mut rng);
        let dec = Mlp2::new(&mut store, "dec", arch.latent, arch.hidden, arch.input, &mut rng);
        Ok(Self { arch, scale, seed, store, report: None, enc_mu, enc_logvar, dec })
    }

    /// (μ_z, logvar_z) for a batch x[B, 2M] of scaled inputs.
    pub fn encode_tape(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        Ok((self.enc_mu.forward(tape, store, x)?, self.enc_logvar.forward(tape, store, x)?))
    }

    pub fn decode_tape(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        self.dec.forward(tape, store, z)
    }

    /// Batch-mean of ‖e − ê‖² + KL(q(z|e) ‖ N(0, I)) with the given ε[B, d_z].
    pub fn loss_tape(&self, tape: &mut Tape, store: &ParamStore, x: Var, eps: Var) -> Result<(Var, Var)> {
        let bs = tape.shape(x)[0] as f64;
        let (mu, logvar) = self.encode_tape(tape, store, x)?;
        let z = reparameterize(tape, mu, logvar, eps)?;
        let recon = self.decode_tape(tape, store, z)?;
        let d = tape.sub(recon, x)?;
        let sq = tape.square(d);
        let rec = tape.sum(sq);
        let rec = tape.scale(rec, 1.0 / bs);
        let mu2 = tape.square(mu);
        let var = tape.exp(logvar);
        let t = tape.add(mu2, var)?;
        let t = tape.sub(t, logvar)?;
        let kl = tape.sum(t);
        let kl = tape.scale(kl, 0.5 / bs);
        let kl = tape.add_scalar(kl, -0.5 * self.arch.latent as f64);
        Ok((tape.add(rec, kl)?, rec))
    }

    /// μ_z and σ_z² of one raw error vector.
    pub fn encode(&self, e: &CVec) -> Result<(Vec<f64>, Vec<f64>)> {
        if 2 * e.len() != self.arch.input {
            return Err(Error::shape("error vector length"));
        }
        let x: Vec<f64> = stack(e).into_iter().map(|v| v * self.scale).collect();
        let mut tape = Tape::new();
        let xv = tape.input(vec![1, self.arch.input], x)?;
        let (mu, lv) = self.encode_tape(&mut tape, &self.store, xv)?;
        let var = tape.value(lv).iter().map(|v| v.exp()).collect();
        Ok((tape.value(mu).to_vec(), var))
    }

    /// Decode latent draws z ~ N(0, I). Only decoder parameters are read.
    pub fn generate(&self, cfg: &SystemConfig, n: usize, seed: u64) -> Result<ErrorSet> {
        if 2 * cfg.antennas != self.arch.input {
            return Err(Error::shape("config antenna count differs from the vae input"));
        }
        let mut rng = rng_for(seed, stream::VAE_SAMPLES, 0);
        let mut errors = Vec::with_capacity(n);
        let chunk = 4096;
        let mut done = 0;
        while done < n {
            let b = chunk.min(n - done);
            let z: Vec<f64> = (0..b * self.arch.latent).map(|_| rng.sample(StandardNormal)).collect();
            let mut tape = Tape::new();
            let zv = tape.input(vec![b, self.arch.latent], z)?;
            let out = self.decode_tape(&mut tape, &self.store, zv)?;
            for row in tape.value(out).chunks(self.arch.input) {
                let v: Vec<f64> = row.iter().map(|x| x / self.scale).collect();
                errors.push(unstack(&v));
            }
            done += b;
        }
        ErrorSet::new(Provenance::Vae, seed, cfg.clone(), errors)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let meta = Meta { arch: self.arch.clone(), scale: self.scale, seed: self.seed, report: self.report.clone() };
        Ok(Checkpoint::from_store(CHECKPOINT_KIND, serde_json::to_value(meta)?, &self.store))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let meta: Meta = serde_json::from_value(ck.meta.clone())?;
        let mut v = Self::new(meta.arch, meta.scale, meta.seed)?;
        ck.load_into(&mut v.store)?;
        v.report = meta.report;
        Ok(v)
    }

    /// Parameter names read during generation.
    pub fn decoder_param_names(&self) -> Vec<String> {
        [self.dec.a.w, self.dec.a.b, self.dec.b.w, self.dec.b.b].iter().map(|id| self.store.name(*id).to_string()).collect()
    }
}

/// Fit a VAE to raw error vectors. The tail `validation_split` fraction is
/// held out for early stopping.
pub fn train_vae(samples: &ErrorSet, hyper: &VaeHyper) -> Result<Vae> {
    if samples.len() < MIN_TRAINING_SAMPLES {
        return Err(Error::invalid(format!(
            "vae needs at least {MIN_TRAINING_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let arch = VaeArch::new(samples.antennas(), hyper.latent_dim);
    let rows: Vec<Vec<f64>> = samples.errors.iter().map(stack).collect();
    let pooled = rows.iter().flatten().map(|v| v * v).sum::<f64>() / (rows.len() * arch.input) as f64;
    if !(pooled > 0.0) {
        return Err(Error::invalid("error samples are all zero"));
    }
    let scale = hyper.data_scale / pooled.sqrt();
    let rows: Vec<Vec<f64>> = rows.into_iter().map(|r| r.into_iter().map(|v| v * scale).collect()).collect();
    let n_val = ((rows.len() as f64) * hyper.train.validation_split).round().max(1.0) as usize;
    let (fit_rows, val_rows) = rows.split_at(rows.len() - n_val);

    let mut vae = Vae::new(arch, scale, hyper.train.seed)?;
    let layout = vae.clone();
    let (d, dz) = (layout.arch.input, layout.arch.latent);
    let val_eps: Vec<f64> = {
        let mut r = rng_for(hyper.train.seed, stream::VAE_SAMPLES, 1);
        (0..val_rows.len() * dz).map(|_| r.sample(StandardNormal)).collect()
    };
    let report = fit(
        &mut vae.store,
        &hyper.train,
        fit_rows.len(),
        |store, idx, rng| {
            let mut tape = Tape::new();
            let x: Vec<f64> = idx.iter().flat_map(|&i| fit_rows[i].iter().copied()).collect();
            let eps: Vec<f64> = (0..idx.len() * dz).map(|_| rng.sample(StandardNormal)).collect();
            let xv = tape.input(vec![idx.len(), d], x)?;
            let ev = tape.input(vec![idx.len(), dz], eps)?;
            let (loss, _) = layout.loss_tape(&mut tape, store, xv, ev)?;
            tape.backward(loss)?.attach(store)?;
            Ok(tape.scalar(loss))
        },
        |store| {
            let mut tape = Tape::new();
            let x: Vec<f64> = val_rows.iter().flatten().copied().collect();
            let xv = tape.input(vec![val_rows.len(), d], x)?;
            let ev = tape.input(vec![val_rows.len(), dz], val_eps.clone())?;
            let (loss, _) = layout.loss_tape(&mut tape, store, xv, ev)?;
            Ok(tape.scalar(loss))
        },
    )?;
    log::info!("vae: {} epochs, best val {:.5}", report.epochs_run(), report.best_val);
    vae.report = Some(report);
    Ok(vae)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check;

    #[test]
    fn kl_closed_form_examples() {
        assert_eq!(kl_gaussian(&[0.0], &[1.0]).unwrap(), 0.0);
        assert!((kl_gaussian(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(kl_gaussian(&[0.0], &[0.0]).is_err());
        assert!(kl_gaussian(&[0.1, 0.0], &[1.0, 1.0]).unwrap() > 0.0);
    }

    #[test]
    fn zero_sigma_reparameterization_is_mean() {
        let mut tape = Tape::new();
        let mu = tape.input(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let lv = tape.input(vec![1, 3], vec![-800.0; 3]).unwrap();
        let eps = tape.input(vec![1, 3], vec![3.0, -1.0, 2.0]).unwrap();
        let z = reparameterize(&mut tape, mu, lv, eps).unwrap();
        assert_eq!(tape.value(z), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_weight_encoder_gives_prior() {
        let mut v = Vae::new(VaeArch::new(2, None), 1.0, 0).unwrap();
        for e in v.store.entries_mut() {
            if e.name.starts_with("enc") {
                e.tensor.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let (mu, var) = v.encode(&CVec::from_element(2, C64::new(3.0, -1.0))).unwrap();
        assert!(mu.iter().all(|m| *m == 0.0));
        assert!(var.iter().all(|s| *s == 1.0));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut v = Vae::new(VaeArch { input: 4, hidden: 6, latent: 3 }, 1.0, 4).unwrap();
        let layout = v.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..5 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eps: Vec<f64> = (0..5 * 3).map(|_| rng.sample(StandardNormal)).collect();
        let r = check(&mut v.store, 1e-6, |tape, store| {
            let xv = tape.input(vec![5, 4], x.clone())?;
            let ev = tape.input(vec![5, 3], eps.clone())?;
            Ok(layout.loss_tape(tape, store, xv, ev)?.0)
        })
        .unwrap();
        assert!(r.max_error < 1e-6, "{}", r.max_error);
    }

    #[test]
    fn generate_is_deterministic_and_sized() {
        let cfg = SystemConfig { antennas: 3, ..SystemConfig::default() };
        let v = Vae::new(VaeArch::new(3, None), 2.0, 1).unwrap();
        let a = v.generate(&cfg, 10, 5).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, v.generate(&cfg, 10, 5).unwrap());
        assert_ne!(a, v.generate(&cfg, 10, 6).unwrap());
        assert_eq!(v.decoder_param_names(), ["dec.0.w", "dec.0.b", "dec.1.w", "dec.1.b"]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let v = Vae::new(VaeArch::new(2, Some(3)), 2.5, 8).unwrap();
        let back = Vae::from_checkpoint(&Checkpoint::from_json(&v.checkpoint().unwrap().to_json().unwrap()).unwrap()).unwrap();
        let cfg = SystemConfig { antennas: 2, ..SystemConfig::default() };
        assert_eq!(v.generate(&cfg, 4, 1).unwrap(), back.generate(&cfg, 4, 1).unwrap());
        assert_eq!(back.scale, 2.5);
    }
}
