//! End-to-end run: data → predictor → errors → VAE → error sets →
//! precoders → evaluation, with every stage cached by content hash.

use std::path::Path;

use serde_json::json;

use crate::augment::{compose_error_set, estimation_error_set, gaussian_error_set, train_vae, ErrorSet, Vae};
use crate::config::{Robustness, RunConfig};
use crate::dataset::{ChannelDataset, Provenance};
use crate::error::Result;
use crate::harness::cache::{StageCache, StageEvent};
use crate::harness::eval::evaluate_precoding;
use crate::harness::metrics::{read_rows, write_rows, MetricsRow};
use crate::harness::spec::Scheme;
use crate::linalg::{CMat, CVec, C64};
use crate::nn::Checkpoint;
use crate::precoder::{train_dlpcn, zfbf, Dlpcn};
use crate::predictor::{mean_nmse, nmse, to_db, train_dlpdn, Dlpdn, LinearPredictor, PredictionSample, SampleSet};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub rows: Vec<MetricsRow>,
    pub stages: Vec<StageEvent>,
}

/// Seed of stage `index` under the master seed.
pub fn stage_seed(master: u64, index: u64) -> u64 {
    derive_seed(master, stream::STAGE, index)
}

/// Column-wise e_2 = Ĥ − H̃ for each sample.
pub fn prediction_error_vectors(samples: &[PredictionSample], predictions: &[CMat]) -> Vec<CVec> {
    samples
        .iter()
        .zip(predictions)
        .flat_map(|(s, p)| {
            let e = &s.target - p;
            (0..e.ncols()).map(move |k| e.column(k).into_owned()).collect::<Vec<_>>()
        })
        .collect()
}

/// Train/test windows of a dataset under the data settings of `cfg`.
pub fn prediction_split(cfg: &RunConfig, ds: &ChannelDataset, w_step: usize) -> Result<(SampleSet, SampleSet)> {
    let samples = SampleSet::from_dataset(ds, w_step, cfg.data.targets_per_episode)?;
    samples.split(cfg.data.train_samples, cfg.data.test_samples)
}

/// Prediction errors on the validation tail of the training split, at most `cap`.
/// The tail is never fitted, so these errors reflect generalisation.
pub fn validation_tail_errors(train: &SampleSet, predictions: &[CMat], fraction: f64, cap: usize) -> Vec<CVec> {
    let n_val = ((train.len() as f64) * fraction).round() as usize;
    let start = train.len() - n_val.min(train.len());
    let mut pool = prediction_error_vectors(&train.samples[start..], &predictions[start..]);
    pool.truncate(cap);
    pool
}

/// Mean NMSE of predictions against the true channels.
pub fn mean_nmse_true(samples: &[PredictionSample], predictions: &[CMat]) -> Result<f64> {
    let mut t = 0.0;
    for (s, p) in samples.iter().zip(predictions) {
        t += nmse(&s.truth, p)?;
    }
    Ok(t / samples.len() as f64)
}

/// Precoder hyperparameters for a learned scheme.
pub fn precoder_variant(cfg: &RunConfig, scheme: Scheme) -> crate::config::PrecoderHyper {
    let mut h = cfg.precoder.clone();
    h.mlp_only = scheme == Scheme::Mlp;
    h.robustness = match scheme {
        Scheme::DlpcnGaussian => Robustness::Gaussian,
        Scheme::DlpcnNonrobust => Robustness::NonRobust,
        _ => Robustness::Vae,
    };
    h
}

/// System parameters that influence channels, estimation and prediction.
/// Downlink-only settings are dropped so sweeps over them reuse upstream stages.
pub fn channel_key(sys: &crate::config::SystemConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(sys).unwrap_or_default();
    if let Some(o) = v.as_object_mut() {
        for k in ["tx_power_dbw", "weight", "weights", "sinr_threshold_db", "outage_prob"] {
            o.remove(k);
        }
    }
    v
}

pub fn run_pipeline(cfg: &RunConfig, schemes: &[Scheme], seed: u64, cache_dir: &Path) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut cache = StageCache::new(cache_dir)?;
    let sys = &cfg.system;
    let d = &cfg.data;
    let chan = channel_key(sys);

    let data_in = json!({ "system": chan, "episodes": d.episodes, "slots": d.slots_per_episode(), "seed": seed });
    let (h_data, p) = cache.stage("data", &data_in, &["bin"], |o| {
        ChannelDataset::generate(sys, d.episodes, d.slots_per_episode(), seed)?.save(&o[0])
    })?;
    let ds = ChannelDataset::load(&p[0])?;
    let (train, test) = prediction_split(cfg, &ds, cfg.predictor.w_step)?;
    let mut rows = Vec::new();

    if schemes.contains(&Scheme::Lr) {
        let lr = LinearPredictor::fit(&train, cfg.predictor.ridge)?;
        let preds = test.samples.iter().map(|s| lr.predict(&s.history)).collect::<Result<Vec<_>>>()?;
        let e = mean_nmse(&test.samples, &preds)?;
        rows.push(MetricsRow::new("lr", "NMSE", e, seed));
        rows.push(MetricsRow::new("lr", "NMSE_dB", to_db(e), seed));
        rows.push(MetricsRow::new("lr", "NMSE_true_dB", to_db(mean_nmse_true(&test.samples, &preds)?), seed));
    }
    let precoders: Vec<Scheme> = schemes.iter().copied().filter(|s| !s.is_predictor()).collect();
    if !schemes.contains(&Scheme::Dlpdn) && precoders.is_empty() {
        return Ok(PipelineOutput { rows, stages: cache.events });
    }

    let mut ph = cfg.predictor.clone();
    ph.train.seed = stage_seed(seed, 1);
    let pred_in = json!({ "data": h_data, "hyper": ph, "targets": d.targets_per_episode, "train": d.train_samples });
    let (h_pred, p) = cache.stage("dlpdn", &pred_in, &["json"], |o| train_dlpdn(&train, &ph)?.checkpoint()?.save(&o[0]))?;
    let net = Dlpdn::from_checkpoint(&Checkpoint::load(&p[0])?)?;
    let train_pred = net.predict_samples(&train.samples)?;
    let test_pred = net.predict_samples(&test.samples)?;
    if schemes.contains(&Scheme::Dlpdn) {
        let e = mean_nmse(&test.samples, &test_pred)?;
        rows.push(MetricsRow::new("dlpdn", "NMSE", e, seed));
        rows.push(MetricsRow::new("dlpdn", "NMSE_dB", to_db(e), seed));
        rows.push(MetricsRow::new("dlpdn", "NMSE_true_dB", to_db(mean_nmse_true(&test.samples, &test_pred)?), seed));
        if let Some(r) = &net.report {
            rows.push(MetricsRow::new("dlpdn", "loss", r.best_val, seed));
        }
    }
    if precoders.is_empty() {
        return Ok(PipelineOutput { rows, stages: cache.events });
    }

    // Prediction errors: training pool from the validation tail, held-out pool from the test split.
    let err_in = json!({ "dlpdn": h_pred, "n": d.prediction_errors, "split": ph.train.validation_split, "test": d.test_samples });
    let (h_err, p) = cache.stage("e2", &err_in, &["train.bin", "test.bin"], |o| {
        let pool = validation_tail_errors(&train, &train_pred, ph.train.validation_split, d.prediction_errors);
        ErrorSet::new(Provenance::Prediction, seed, sys.clone(), pool)?.save(&o[0])?;
        let held = prediction_error_vectors(&test.samples, &test_pred);
        ErrorSet::new(Provenance::Prediction, seed, sys.clone(), held)?.save(&o[1])
    })?;
    let e2_train = ErrorSet::load(&p[0])?;
    let e2_test = ErrorSet::load(&p[1])?;

    let e1_in = json!({ "system": chan, "n": d.estimation_errors, "seed": stage_seed(seed, 3) });
    let (h_e1, p) = cache.stage("e1", &e1_in, &["bin"], |o| {
        estimation_error_set(sys, d.estimation_errors, stage_seed(seed, 3))?.save(&o[0])
    })?;
    let e1 = ErrorSet::load(&p[0])?;

    let held_in = json!({ "e2": h_err, "data": h_data, "system": chan, "n1": d.estimation_errors, "n": d.error_set_size, "seed": seed });
    let (_, p) = cache.stage("heldout", &held_in, &["bin"], |o| {
        let fresh = estimation_error_set(sys, d.estimation_errors, stage_seed(seed, 7))?;
        compose_error_set(&fresh, &e2_test, &ds.xi, d.error_set_size, stage_seed(seed, 8))?.save(&o[0])
    })?;
    let heldout = ErrorSet::load(&p[0])?;

    let needs = |r: Robustness| precoders.iter().any(|s| s.is_learned_precoder() && precoder_variant(cfg, *s).robustness == r);
    let mut sets: Vec<(Robustness, String, ErrorSet)> = Vec::new();
    if needs(Robustness::Vae) {
        let mut vh = cfg.vae.clone();
        vh.train.seed = stage_seed(seed, 2);
        let (h_vae, p) = cache.stage("vae", &json!({ "e2": h_err, "hyper": vh }), &["json"], |o| {
            train_vae(&e2_train, &vh)?.checkpoint()?.save(&o[0])
        })?;
        let vae = Vae::from_checkpoint(&Checkpoint::load(&p[0])?)?;
        let key = json!({ "vae": h_vae, "e1": h_e1, "data": h_data, "n2": d.prediction_errors, "n": d.error_set_size, "seed": seed });
        let (h, p) = cache.stage("errset_vae", &key, &["bin"], |o| {
            let gen = vae.generate(sys, d.prediction_errors, stage_seed(seed, 4))?;
            compose_error_set(&e1, &gen, &ds.xi, d.error_set_size, stage_seed(seed, 6))?.save(&o[0])
        })?;
        sets.push((Robustness::Vae, h, ErrorSet::load(&p[0])?));
    }
    if needs(Robustness::Gaussian) {
        let key = json!({ "e2": h_err, "e1": h_e1, "data": h_data, "n2": d.prediction_errors, "n": d.error_set_size, "seed": seed });
        let (h, p) = cache.stage("errset_gaussian", &key, &["bin"], |o| {
            let m = sys.antennas;
            let cov = CMat::identity(m, m) * C64::new(e2_train.entry_power(), 0.0);
            let gen = gaussian_error_set(sys, &cov, d.prediction_errors, stage_seed(seed, 5))?;
            compose_error_set(&e1, &gen, &ds.xi, d.error_set_size, stage_seed(seed, 6))?.save(&o[0])
        })?;
        sets.push((Robustness::Gaussian, h, ErrorSet::load(&p[0])?));
    }
    let zero_set = ErrorSet::new(Provenance::None, 0, sys.clone(), vec![CVec::zeros(sys.antennas)])?;

    let mut eval_keys = Vec::new();
    let mut models: Vec<(Scheme, Option<Dlpcn>)> = Vec::new();
    for &s in &precoders {
        if !s.is_learned_precoder() {
            eval_keys.push(json!({ "scheme": s.name() }));
            models.push((s, None));
            continue;
        }
        let mut hyper = precoder_variant(cfg, s);
        hyper.train.seed = stage_seed(seed, 9);
        let (set_hash, set) = match sets.iter().find(|(r, _, _)| *r == hyper.robustness) {
            Some((_, h, e)) => (h.clone(), e),
            None => (String::from("none"), &zero_set),
        };
        let key = json!({ "dlpdn": h_pred, "errors": set_hash, "hyper": hyper, "system": sys, "xi": h_data });
        let (h, p) = cache.stage(&format!("precoder_{}", s.name()), &key, &["json"], |o| {
            train_dlpcn(sys, &train_pred, &ds.xi, set, &hyper)?.checkpoint()?.save(&o[0])
        })?;
        eval_keys.push(json!({ "scheme": s.name(), "model": h }));
        models.push((s, Some(Dlpcn::from_checkpoint(&Checkpoint::load(&p[0])?)?)));
    }

    let eval_in = json!({ "precoders": eval_keys, "dlpdn": h_pred, "heldout": held_in, "draws": d.eval_errors, "seed": seed, "system": sys });
    let test_true: Vec<CMat> = test.samples.iter().map(|s| s.truth.clone()).collect();
    let (_, p) = cache.stage("evaluate", &eval_in, &["csv"], |o| {
        let mut out = Vec::new();
        for (s, model) in &models {
            let ws = match model {
                Some(net) => net.precode_batch(&test_pred)?,
                None => test_pred.iter().map(|h| zfbf(h, sys.tx_power()).map(|r| r.0)).collect::<Result<Vec<_>>>()?,
            };
            let ev = evaluate_precoding(sys, &ws, &test_true, &test_pred, &ds.xi, &heldout, d.eval_errors, stage_seed(seed, 10))?;
            out.extend(ev.rows(s.name(), seed));
            if let Some(r) = model.as_ref().and_then(|m| m.report.as_ref()) {
                out.push(MetricsRow::new(s.name(), "loss", r.best_val, seed));
            }
        }
        write_rows(&o[0], &out)
    })?;
    rows.extend(read_rows(&p[0])?);
    Ok(PipelineOutput { rows, stages: cache.events })
}
