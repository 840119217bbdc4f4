use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use leosat_core::augment::{compose_error_set, estimation_error_set, gaussian_error_set, train_vae, ErrorSet, Vae};
use leosat_core::config::Robustness;
use leosat_core::dataset::{ChannelDataset, Provenance};
use leosat_core::harness::pipeline::{prediction_split, stage_seed, validation_tail_errors};
use leosat_core::harness::{
    evaluate_precoding, CODE_VERSION, init_threads, metrics, run_pipeline, sweep, time_scheme, ExperimentSpec, MetricsRow, Scheme,
};
use leosat_core::linalg::{CMat, C64};
use leosat_core::nn::Checkpoint;
use leosat_core::precoder::{train_dlpcn, zfbf, Dlpcn};
use leosat_core::predictor::{mean_nmse, to_db, train_dlpdn, Dlpdn, LinearPredictor, PredictionSample};
use leosat_core::{Error, Result, RunConfig};

#[derive(Parser)]
#[command(name = "leosat", version, about = "LEO satellite IoT channel prediction and robust precoding")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run config; defaults to the selected profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = ProfileArg::Desk)]
    profile: ProfileArg,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum ErrorKind {
    /// Estimation errors from the closed-form law.
    Estimation,
    /// Prediction errors of a DLPDN checkpoint on the validation tail.
    Prediction,
    /// Samples from a trained VAE decoder.
    Vae,
    /// Isotropic Gaussian with the entry power of `--from`.
    Gaussian,
    /// e1 + ξ·e2 from `--e1` and `--e2`.
    Compose,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate episodes and MMSE estimates.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        slots: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a CSV copy.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train the DLPDN (or fit the linear baseline) on a dataset.
    TrainPredictor {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "dlpdn")]
        scheme: String,
    },
    /// Test-split NMSE of a predictor checkpoint.
    EvaluatePredictor {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Train the error VAE on an error set.
    TrainVae {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        errors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce an error set.
    GenErrors {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = ErrorKind::Vae)]
        kind: ErrorKind,
        /// VAE checkpoint (vae) or DLPDN checkpoint (prediction).
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Channel dataset (prediction, compose).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Reference set for the Gaussian power.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        e1: Option<PathBuf>,
        #[arg(long)]
        e2: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train a DLPCN on predicted CSI and an augmentation error set.
    TrainPrecoder {
        #[command(flatten)]
        common: Common,
        /// Channel dataset.
        #[arg(long)]
        csi: PathBuf,
        /// DLPDN checkpoint; without it the latest estimate stands in for the prediction.
        #[arg(long)]
        predictor: Option<PathBuf>,
        /// Composed error set; omit for non-robust training.
        #[arg(long)]
        errors: Option<PathBuf>,
        #[arg(long, default_value = "dlpcn")]
        scheme: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// WSR and outage of a precoder on the test split.
    EvaluatePrecoder {
        #[command(flatten)]
        common: Common,
        /// DLPCN checkpoint; omit with `--scheme zfbf`.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value = "dlpcn")]
        scheme: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        predictor: Option<PathBuf>,
        /// Held-out composed error set for the outage estimate.
        #[arg(long)]
        heldout: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// End-to-end cached pipeline for one configuration.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Experiment spec; its axis is ignored.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<String>>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Pipeline over every axis value and replication of a spec.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        spec: PathBuf,
    },
    /// Median inference wall time per instance size.
    Time {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "dlpdn,lr,dlpcn,zfbf")]
        schemes: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 30)]
        calls: usize,
        #[arg(long)]
        metrics: PathBuf,
    },
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(match self.profile {
                ProfileArg::Desk => RunConfig::desk(),
                ProfileArg::Full => RunConfig::full(),
            }),
        }
    }
}

fn need<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required here")))
}

fn sidecar(cfg: &RunConfig, seed: u64, extra: serde_json::Value) -> serde_json::Value {
    json!({ "config": cfg, "seed": seed, "code_version": CODE_VERSION, "run": extra })
}

/// Predictions for `samples` from a DLPDN checkpoint, or the latest estimate.
fn predictions(ckpt: Option<&Path>, samples: &[PredictionSample]) -> Result<Vec<CMat>> {
    match ckpt {
        Some(p) => Dlpdn::from_checkpoint(&Checkpoint::load(p)?)?.predict_samples(samples),
        None => Ok(samples.iter().map(|s| s.history[0].clone()).collect()),
    }
}

fn predictor_w_step(ckpt: Option<&Path>, cfg: &RunConfig) -> Result<usize> {
    match ckpt {
        Some(p) => Ok(Dlpdn::from_checkpoint(&Checkpoint::load(p)?)?.arch.w_step),
        None => Ok(cfg.predictor.w_step),
    }
}

fn write_wide(path: &Path, header: &[String], rows: &[Vec<String>], side: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    std::fs::write(metrics::sidecar_path(path), serde_json::to_string_pretty(side)?)?;
    Ok(())
}

fn load_spec(path: &Path, common: &Common) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(path)?;
    if common.seed != 0 {
        spec.seed = common.seed;
    }
    if let Some(c) = &common.config {
        spec.overrides = serde_json::to_value(RunConfig::load(c)?)?;
    }
    Ok(spec)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { common, episodes, slots, out, csv } => {
            let cfg = common.config()?;
            let ds = ChannelDataset::generate(
                &cfg.system,
                episodes.unwrap_or(cfg.data.episodes),
                slots.unwrap_or(cfg.data.slots_per_episode()),
                common.seed,
            )?;
            ds.save(&out)?;
            if let Some(c) = csv {
                ds.export_csv(&c)?;
            }
            log::info!("wrote {} episodes x {} slots to {}", ds.episodes.len(), ds.n_slots, out.display());
        }
        Cmd::TrainPredictor { common, data, out, scheme } => {
            let cfg = common.config()?;
            let ds = ChannelDataset::load(&data)?;
            let (train, _) = prediction_split(&cfg, &ds, cfg.predictor.w_step)?;
            match Scheme::parse(&scheme)? {
                Scheme::Dlpdn => {
                    let mut hyper = cfg.predictor.clone();
                    hyper.train.seed = common.seed;
                    let net = train_dlpdn(&train, &hyper)?;
                    net.checkpoint()?.save(&out)?;
                }
                Scheme::Lr => {
                    let lr = LinearPredictor::fit(&train, cfg.predictor.ridge)?;
                    std::fs::write(&out, serde_json::to_string(&lr)?)?;
                }
                s => return Err(Error::InvalidArgument(format!("{} is not a predictor", s.name()))),
            }
        }
        Cmd::EvaluatePredictor { common, ckpt, data, metrics } => {
            let cfg = common.config()?;
            let ds = ChannelDataset::load(&data)?;
            let text = std::fs::read_to_string(&ckpt)?;
            let (scheme, w_step, preds) = if let Ok(lr) = serde_json::from_str::<LinearPredictor>(&text) {
                let (_, test) = prediction_split(&cfg, &ds, lr.w_step)?;
                let p = test.samples.iter().map(|s| lr.predict(&s.history)).collect::<Result<Vec<_>>>()?;
                ("lr", lr.w_step, (test, p))
            } else {
                let net = Dlpdn::from_checkpoint(&Checkpoint::from_json(&text)?)?;
                let (_, test) = prediction_split(&cfg, &ds, net.arch.w_step)?;
                let p = net.predict_samples(&test.samples)?;
                ("dlpdn", net.arch.w_step, (test, p))
            };
            let e = mean_nmse(&preds.0.samples, &preds.1)?;
            let header = ["w_step", "scheme", "NMSE_dB"].map(String::from);
            let row = vec![w_step.to_string(), scheme.to_string(), to_db(e).to_string()];
            write_wide(&metrics, &header, &[row], &sidecar(&cfg, common.seed, json!({ "ckpt": ckpt, "data": data })))?;
            println!("{scheme} w_step={w_step} NMSE_dB={:.3}", to_db(e));
        }
        Cmd::TrainVae { common, errors, out } => {
            let cfg = common.config()?;
            let set = ErrorSet::load(&errors)?;
            let mut hyper = cfg.vae.clone();
            hyper.train.seed = common.seed;
            train_vae(&set, &hyper)?.checkpoint()?.save(&out)?;
        }
        Cmd::GenErrors { common, kind, ckpt, data, from, e1, e2, n, out, csv } => {
            let cfg = common.config()?;
            let sys = &cfg.system;
            let set = match kind {
                ErrorKind::Estimation => estimation_error_set(sys, n.unwrap_or(cfg.data.estimation_errors), common.seed)?,
                ErrorKind::Prediction => {
                    let ds = ChannelDataset::load(need(&data, "data")?)?;
                    let net = Dlpdn::from_checkpoint(&Checkpoint::load(need(&ckpt, "ckpt")?)?)?;
                    let (train, _) = prediction_split(&cfg, &ds, net.arch.w_step)?;
                    let preds = net.predict_samples(&train.samples)?;
                    let cap = n.unwrap_or(cfg.data.prediction_errors);
                    let pool = validation_tail_errors(&train, &preds, cfg.predictor.train.validation_split, cap);
                    ErrorSet::new(Provenance::Prediction, common.seed, sys.clone(), pool)?
                }
                ErrorKind::Vae => {
                    let vae = Vae::from_checkpoint(&Checkpoint::load(need(&ckpt, "ckpt")?)?)?;
                    vae.generate(sys, n.unwrap_or(cfg.data.prediction_errors), common.seed)?
                }
                ErrorKind::Gaussian => {
                    let reference = ErrorSet::load(need(&from, "from")?)?;
                    let m = reference.antennas();
                    let cov = CMat::identity(m, m) * C64::new(reference.entry_power(), 0.0);
                    gaussian_error_set(sys, &cov, n.unwrap_or(reference.len()), common.seed)?
                }
                ErrorKind::Compose => {
                    let ds = ChannelDataset::load(need(&data, "data")?)?;
                    let s1 = ErrorSet::load(need(&e1, "e1")?)?;
                    let s2 = ErrorSet::load(need(&e2, "e2")?)?;
                    compose_error_set(&s1, &s2, &ds.xi, n.unwrap_or(cfg.data.error_set_size), common.seed)?
                }
            };
            set.save(&out)?;
            if let Some(c) = csv {
                set.export_csv(&c)?;
            }
            log::info!("wrote {} error vectors to {}", set.len(), out.display());
        }
        Cmd::TrainPrecoder { common, csi, predictor, errors, scheme, out } => {
            let cfg = common.config()?;
            let scheme = Scheme::parse(&scheme)?;
            if !scheme.is_learned_precoder() {
                return Err(Error::InvalidArgument(format!("{} is not trainable", scheme.name())));
            }
            let ds = ChannelDataset::load(&csi)?;
            let (train, _) = prediction_split(&cfg, &ds, predictor_w_step(predictor.as_deref(), &cfg)?)?;
            let h_tilde = predictions(predictor.as_deref(), &train.samples)?;
            let mut hyper = cfg.precoder.clone();
            hyper.train.seed = common.seed;
            hyper.mlp_only = scheme == Scheme::Mlp;
            let set = match &errors {
                Some(p) => {
                    if scheme == Scheme::DlpcnNonrobust {
                        return Err(Error::InvalidArgument("non-robust training takes no error set".into()));
                    }
                    hyper.robustness = if scheme == Scheme::DlpcnGaussian { Robustness::Gaussian } else { Robustness::Vae };
                    ErrorSet::load(p)?
                }
                None => {
                    hyper.robustness = Robustness::NonRobust;
                    ErrorSet::new(Provenance::None, 0, cfg.system.clone(), vec![leosat_core::linalg::CVec::zeros(ds.antennas())])?
                }
            };
            train_dlpcn(&cfg.system, &h_tilde, &ds.xi, &set, &hyper)?.checkpoint()?.save(&out)?;
        }
        Cmd::EvaluatePrecoder { common, ckpt, scheme, data, predictor, heldout, metrics } => {
            let cfg = common.config()?;
            let sys = &cfg.system;
            let scheme = Scheme::parse(&scheme)?;
            let ds = ChannelDataset::load(&data)?;
            let (_, test) = prediction_split(&cfg, &ds, predictor_w_step(predictor.as_deref(), &cfg)?)?;
            let h_tilde = predictions(predictor.as_deref(), &test.samples)?;
            let h_true: Vec<CMat> = test.samples.iter().map(|s| s.truth.clone()).collect();
            let t = Instant::now();
            let ws = match scheme {
                Scheme::Zfbf => h_tilde.iter().map(|h| zfbf(h, sys.tx_power()).map(|r| r.0)).collect::<Result<Vec<_>>>()?,
                s if s.is_learned_precoder() => Dlpcn::from_checkpoint(&Checkpoint::load(need(&ckpt, "ckpt")?)?)?.precode_batch(&h_tilde)?,
                s => return Err(Error::InvalidArgument(format!("{} is not a precoder", s.name()))),
            };
            let wall_ms = t.elapsed().as_secs_f64() * 1e3 / ws.len() as f64;
            let held = ErrorSet::load(&heldout)?;
            let ev = evaluate_precoding(sys, &ws, &h_true, &h_tilde, &ds.xi, &held, cfg.data.eval_errors, stage_seed(common.seed, 10))?;
            let mut header = vec!["scheme".to_string(), "P2_dBW".into(), "WSR".into()];
            header.extend((0..ev.outage.len()).map(|k| format!("outage_{k}")));
            header.push("wall_time_ms".into());
            let mut row = vec![scheme.name().to_string(), sys.tx_power_dbw.to_string(), ev.wsr.to_string()];
            row.extend(ev.outage.iter().map(|o| o.to_string()));
            row.push(wall_ms.to_string());
            write_wide(&metrics, &header, &[row], &sidecar(&cfg, common.seed, json!({ "ckpt": ckpt, "data": data, "heldout": heldout })))?;
            println!("{} WSR={:.4} outage={:?}", scheme.name(), ev.wsr, ev.outage);
        }
        Cmd::Evaluate { common, spec, schemes, metrics, cache } => {
            let (cfg, mut schemes_v, seed, out, cache_dir) = match &spec {
                Some(p) => {
                    let s = load_spec(p, &common)?;
                    (s.resolve_config()?, s.schemes.clone(), s.seed, s.output.clone(), s.cache_dir())
                }
                None => {
                    let out = metrics.clone().ok_or_else(|| Error::InvalidArgument("--metrics or --spec is required".into()))?;
                    let cache = out.parent().map(|d| d.join("cache")).unwrap_or_else(|| PathBuf::from("cache"));
                    let schemes = vec![Scheme::Dlpdn, Scheme::Lr, Scheme::Dlpcn, Scheme::Zfbf];
                    (common.config()?, schemes, common.seed, out, cache)
                }
            };
            if let Some(list) = schemes {
                schemes_v = list.iter().map(|s| Scheme::parse(s)).collect::<Result<_>>()?;
            }
            let out = metrics.unwrap_or(out);
            let cache_dir = cache.unwrap_or(cache_dir);
            let res = run_pipeline(&cfg, &schemes_v, seed, &cache_dir)?;
            for ev in &res.stages {
                log::info!("stage {:<24} {} {}", ev.stage, &ev.hash[..16], if ev.cached { "cached" } else { "built" });
            }
            let names: Vec<&str> = schemes_v.iter().map(|s| s.name()).collect();
            metrics::write_metrics(&out, &res.rows, &sidecar(&cfg, seed, json!({ "schemes": names })))?;
            print_rows(&res.rows);
        }
        Cmd::Sweep { common, spec } => {
            let spec = load_spec(&spec, &common)?;
            let rows = sweep(&spec)?;
            print_rows(&rows);
        }
        Cmd::Time { common, schemes, sizes, calls, metrics } => {
            let cfg = common.config()?;
            let mut rows = Vec::new();
            for s in &schemes {
                for r in time_scheme(&cfg, Scheme::parse(s)?, &sizes, calls, common.seed)? {
                    println!("{:<16} M={:<3} K={:<3} median {:.4} ms", r.scheme, r.antennas, r.devices, r.median_ms);
                    rows.push(r.metrics_row(common.seed));
                }
            }
            metrics::write_metrics(&metrics, &rows, &sidecar(&cfg, common.seed, json!({ "sizes": sizes, "calls": calls })))?;
        }
    }
    Ok(())
}

fn print_rows(rows: &[MetricsRow]) {
    for r in rows {
        let axis = r.axis_value.map(|v| format!(" {}={v}", r.axis)).unwrap_or_default();
        println!("{:<16}{axis} rep={} {:<14} {:.6}", r.scheme, r.replication, r.metric, r.value);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
