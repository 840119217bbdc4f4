//! Run configuration.
//!
//! [`SystemConfig`] carries the physical link parameters. Its defaults are the
//! reference LEO IoT downlink values (5 GHz carrier, 1000 km altitude, 25 MHz
//! bandwidth, 17 dBi satellite gain, ...). Learning hyperparameters and dataset
//! sizes live in the sibling structs and are bundled in [`RunConfig`], which
//! is what the CLI reads from JSON.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Physical and simulation parameters of the downlink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Number of satellite antennas M (uniform circular array).
    pub antennas: usize,
    /// Number of single-antenna devices K.
    pub devices: usize,
    pub carrier_hz: f64,
    /// Propagation distance d_0.
    pub altitude_m: f64,
    pub bandwidth_hz: f64,
    pub noise_temp_k: f64,
    pub boltzmann: f64,
    /// Peak satellite antenna gain G_s.
    pub sat_gain_dbi: f64,
    /// Device receive antenna gain G_k.
    pub device_gain_dbi: f64,
    /// Mean of ln(r_k^dB).
    pub rain_mu: f64,
    /// Variance of ln(r_k^dB).
    pub rain_var: f64,
    pub rician_factor: f64,
    /// NLOS path count L_k.
    pub nlos_paths: usize,
    pub sat_doppler_hz: f64,
    pub device_doppler_max_hz: f64,
    pub min_delay_s: f64,
    /// Upper bound of the per-path excess delay draw.
    pub max_excess_delay_s: f64,
    /// Slot duration Δt.
    pub slot_s: f64,
    /// Receiver noise power σ_0² in dBm.
    pub noise_dbm: f64,
    /// Pilot power P_1 in dBW.
    pub pilot_power_dbw: f64,
    /// Pilot sequence length L.
    pub pilot_len: usize,
    /// Total transmit power P_2 in dBW.
    pub tx_power_dbw: f64,
    /// Half-power beamwidth angle of the satellite antenna.
    pub beamwidth_3db_deg: f64,
    /// Carrier at which the array diameter is calibrated to the 3 dB angle.
    pub calibration_carrier_hz: f64,
    /// Devices are dropped with off-axis angle uniform in [0, theta_max].
    pub theta_max_deg: f64,
    /// Device weight α_k (shared by all devices unless `weights` is set).
    pub weight: f64,
    pub weights: Option<Vec<f64>>,
    /// SINR threshold γ_k in dB.
    pub sinr_threshold_db: f64,
    pub outage_prob: f64,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let beamwidth = 0.4;
        Self {
            antennas: 16,
            devices: 16,
            carrier_hz: 5e9,
            altitude_m: 1000e3,
            bandwidth_hz: 25e6,
            noise_temp_k: 300.0,
            boltzmann: 1.38e-23,
            sat_gain_dbi: 17.0,
            device_gain_dbi: 3.0,
            rain_mu: -2.6,
            rain_var: 1.63,
            rician_factor: 5.0,
            nlos_paths: 8,
            sat_doppler_hz: 120e3,
            device_doppler_max_hz: 20.0,
            min_delay_s: 10e-3,
            max_excess_delay_s: 1e-6,
            slot_s: 1e-3,
            noise_dbm: -106.0,
            pilot_power_dbw: 10.0,
            pilot_len: 16,
            tx_power_dbw: 10.0,
            beamwidth_3db_deg: beamwidth,
            calibration_carrier_hz: 5e9,
            theta_max_deg: 3.0 * beamwidth,
            weight: 1.0,
            weights: None,
            sinr_threshold_db: 0.0,
            outage_prob: 0.05,
            seed: 1,
        }
    }
}

impl SystemConfig {
    /// Reduced array and device count used for laptop-scale experiments.
    pub fn desk() -> Self {
        Self {
            antennas: 8,
            devices: 4,
            pilot_len: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_hz", self.carrier_hz),
            ("altitude_m", self.altitude_m),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_temp_k", self.noise_temp_k),
            ("boltzmann", self.boltzmann),
            ("slot_s", self.slot_s),
            ("beamwidth_3db_deg", self.beamwidth_3db_deg),
            ("calibration_carrier_hz", self.calibration_carrier_hz),
            ("theta_max_deg", self.theta_max_deg),
            ("rain_var", self.rain_var),
            ("weight", self.weight),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("noise_dbm", self.noise_dbm),
            ("pilot_power_dbw", self.pilot_power_dbw),
            ("tx_power_dbw", self.tx_power_dbw),
            ("sat_gain_dbi", self.sat_gain_dbi),
            ("device_gain_dbi", self.device_gain_dbi),
            ("sinr_threshold_db", self.sinr_threshold_db),
            ("rain_mu", self.rain_mu),
            ("sat_doppler_hz", self.sat_doppler_hz),
            ("min_delay_s", self.min_delay_s),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if self.antennas == 0 || self.devices == 0 {
            return Err(Error::Config("antennas and devices must be >= 1".into()));
        }
        if self.nlos_paths == 0 {
            return Err(Error::Config("nlos_paths must be >= 1".into()));
        }
        if self.pilot_len < self.antennas {
            return Err(Error::Config(format!(
                "pilot_len ({}) must be >= antennas ({}) for an orthonormal pilot",
                self.pilot_len, self.antennas
            )));
        }
        if !(self.rician_factor >= 0.0) {
            return Err(Error::Config("rician_factor must be >= 0".into()));
        }
        if !(self.device_doppler_max_hz >= 0.0 && self.max_excess_delay_s >= 0.0) {
            return Err(Error::Config("doppler and delay bounds must be >= 0".into()));
        }
        if !(self.outage_prob > 0.0 && self.outage_prob < 1.0) {
            return Err(Error::Config(format!(
                "outage_prob must lie in (0,1), got {}",
                self.outage_prob
            )));
        }
        if self.theta_max_deg >= 90.0 {
            return Err(Error::Config("theta_max_deg must be < 90".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.devices || w.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::Config("weights must hold one positive value per device".into()));
            }
        }
        if self.devices > self.antennas {
            log::warn!(
                "K = {} exceeds M = {}; zero-forcing baseline will be regularized",
                self.devices,
                self.antennas
            );
        }
        Ok(())
    }

    pub fn sat_gain(&self) -> f64 {
        db_to_linear(self.sat_gain_dbi)
    }

    pub fn device_gain(&self) -> f64 {
        db_to_linear(self.device_gain_dbi)
    }

    /// σ_0² in watts.
    pub fn noise_power_w(&self) -> f64 {
        db_to_linear(self.noise_dbm) * 1e-3
    }

    /// Thermal noise κBT in watts.
    pub fn thermal_noise_w(&self) -> f64 {
        self.boltzmann * self.bandwidth_hz * self.noise_temp_k
    }

    /// Noise variance in channel units.
    ///
    /// The large-scale gain divides by κBT, so |h|² is an SNR per watt of
    /// transmit power; receiver noise has to be expressed on the same scale.
    pub fn noise_var(&self) -> f64 {
        self.noise_power_w() / self.thermal_noise_w()
    }

    pub fn pilot_power(&self) -> f64 {
        db_to_linear(self.pilot_power_dbw)
    }

    pub fn tx_power(&self) -> f64 {
        db_to_linear(self.tx_power_dbw)
    }

    pub fn sinr_threshold(&self) -> f64 {
        db_to_linear(self.sinr_threshold_db)
    }

    pub fn theta_3db(&self) -> f64 {
        self.beamwidth_3db_deg.to_radians()
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max_deg.to_radians()
    }

    pub fn weights_vec(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![self.weight; self.devices])
    }

    pub fn thresholds_vec(&self) -> Vec<f64> {
        vec![self.sinr_threshold(); self.devices]
    }

    pub fn outage_vec(&self) -> Vec<f64> {
        vec![self.outage_prob; self.devices]
    }

    /// Estimation-error variance σ_0²/(P_1·M·L).
    pub fn estimation_error_var(&self) -> f64 {
        self.noise_var() / (self.pilot_power() * self.antennas as f64 * self.pilot_len as f64)
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Optimizer and schedule settings shared by all three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_split: f64,
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 128,
            learning_rate: 1e-3,
            validation_split: 0.2,
            early_stop_patience: 20,
            early_stop_min_delta: 1e-4,
            plateau_patience: 10,
            plateau_factor: 0.3,
            min_learning_rate: 1e-6,
            seed: 7,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.validation_split > 0.0 && self.validation_split < 1.0) {
            return Err(Error::Config("validation_split must lie in (0,1)".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config("plateau_factor must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Channel-prediction network settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorHyper {
    pub w_step: usize,
    pub filters: [usize; 3],
    pub kernels: [usize; 3],
    pub pool: usize,
    pub lstm_hidden: [usize; 2],
    pub dropout: f64,
    /// Train against the true channel instead of the estimate.
    pub true_csi_target: bool,
    pub ridge: f64,
    pub train: TrainHyper,
}

impl Default for PredictorHyper {
    fn default() -> Self {
        Self {
            w_step: 4,
            filters: [8, 4, 2],
            kernels: [5, 3, 3],
            pool: 2,
            lstm_hidden: [128, 128],
            dropout: 0.2,
            true_csi_target: false,
            ridge: 1e-9,
            train: TrainHyper::default(),
        }
    }
}

/// Error-model VAE settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeHyper {
    /// Latent dimension; `None` means 2M.
    pub latent_dim: Option<usize>,
    /// Per-dimension standard deviation the error samples are scaled to.
    pub data_scale: f64,
    pub train: TrainHyper,
}

impl Default for VaeHyper {
    fn default() -> Self {
        Self {
            latent_dim: None,
            data_scale: 5.0,
            train: TrainHyper {
                epochs: 300,
                batch_size: 128,
                ..TrainHyper::default()
            },
        }
    }
}

/// Which error model feeds the precoder's channel augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Robustness {
    /// VAE-generated prediction errors composed with Gaussian estimation errors.
    Vae,
    /// Isotropic Gaussian prediction errors of matched power.
    Gaussian,
    /// Error set {0} and no outage penalty.
    NonRobust,
}

/// Precoding network settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecoderHyper {
    pub filters: [usize; 3],
    pub kernels: [[usize; 2]; 3],
    /// Dense widths as multiples of M·K.
    pub dense_multipliers: [usize; 4],
    /// Drop the convolutional front end (MLP baseline).
    pub mlp_only: bool,
    pub penalty_weight: f64,
    /// Augmented channel draws per training sample.
    pub augmentations: usize,
    pub robustness: Robustness,
    pub train: TrainHyper,
}

impl Default for PrecoderHyper {
    fn default() -> Self {
        Self {
            filters: [8, 4, 2],
            kernels: [[5, 3], [5, 1], [3, 1]],
            dense_multipliers: [8, 4, 2, 2],
            mlp_only: false,
            penalty_weight: 10.0,
            augmentations: 10_000,
            robustness: Robustness::Vae,
            train: TrainHyper {
                epochs: 1000,
                batch_size: 1024,
                ..TrainHyper::default()
            },
        }
    }
}

/// Dataset sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub episodes: usize,
    /// Slots before the first prediction target; bounds the usable w_step.
    pub history_slots: usize,
    /// Prediction targets per episode, taken from the end of the episode.
    pub targets_per_episode: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub estimation_errors: usize,
    pub prediction_errors: usize,
    /// Size of the composed error set.
    pub error_set_size: usize,
    /// Held-out error draws per test sample for outage evaluation.
    pub eval_errors: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            history_slots: 4,
            targets_per_episode: 10,
            train_samples: 16_000,
            test_samples: 4_000,
            estimation_errors: 10_000,
            prediction_errors: 10_000,
            error_set_size: 1_000_000,
            eval_errors: 10_000,
        }
    }
}

/// Everything one pipeline run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub predictor: PredictorHyper,
    pub vae: VaeHyper,
    pub precoder: PrecoderHyper,
    pub data: DataConfig,
}

impl RunConfig {
    /// Full-size reference profile (M = K = 16, 16000/4000 split, 10^4 augmentations).
    pub fn full() -> Self {
        Self::default()
    }

    /// Laptop profile: M = 8, K = 4, 4000/1000 split, 10^3 errors per set,
    /// 256 augmentations per sample.
    pub fn desk() -> Self {
        let fast = TrainHyper {
            epochs: 60,
            batch_size: 128,
            ..TrainHyper::default()
        };
        Self {
            system: SystemConfig::desk(),
            predictor: PredictorHyper {
                lstm_hidden: [32, 32],
                train: fast.clone(),
                ..PredictorHyper::default()
            },
            vae: VaeHyper {
                train: TrainHyper {
                    epochs: 150,
                    batch_size: 64,
                    ..fast.clone()
                },
                ..VaeHyper::default()
            },
            precoder: PrecoderHyper {
                augmentations: 256,
                train: TrainHyper {
                    epochs: 40,
                    batch_size: 64,
                    ..fast
                },
                ..PrecoderHyper::default()
            },
            data: DataConfig {
                episodes: 500,
                history_slots: 4,
                targets_per_episode: 10,
                train_samples: 4000,
                test_samples: 1000,
                estimation_errors: 1000,
                prediction_errors: 1000,
                error_set_size: 20_000,
                eval_errors: 1000,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.predictor.train.validate()?;
        self.vae.train.validate()?;
        self.precoder.train.validate()?;
        if self.predictor.w_step == 0 {
            return Err(Error::Config("w_step must be >= 1".into()));
        }
        if !(self.predictor.dropout >= 0.0 && self.predictor.dropout < 1.0) {
            return Err(Error::Config("dropout must lie in [0,1)".into()));
        }
        if self.precoder.augmentations == 0 {
            return Err(Error::Config("augmentations must be >= 1".into()));
        }
        if !(self.precoder.penalty_weight >= 0.0) {
            return Err(Error::Config("penalty_weight must be >= 0".into()));
        }
        if !(self.vae.data_scale > 0.0) {
            return Err(Error::Config("vae.data_scale must be positive".into()));
        }
        let d = &self.data;
        if d.episodes == 0 || d.targets_per_episode == 0 {
            return Err(Error::Config("episodes and targets_per_episode must be >= 1".into()));
        }
        if self.predictor.w_step > d.history_slots {
            return Err(Error::Config(format!(
                "w_step {} exceeds history_slots {}",
                self.predictor.w_step, d.history_slots
            )));
        }
        if d.train_samples + d.test_samples > d.episodes * d.targets_per_episode {
            return Err(Error::Config(format!(
                "train+test samples ({}) exceed available windows ({})",
                d.train_samples + d.test_samples,
                d.episodes * d.targets_per_episode
            )));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

impl DataConfig {
    /// Slots per generated episode.
    pub fn slots_per_episode(&self) -> usize {
        self.history_slots + self.targets_per_episode
    }
}

/// Hex SHA-256 of the canonical JSON form. Object keys are sorted, so the
/// hash ignores field order and changes with every value.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("config serializes");
    hash_json(&v)
}

pub fn hash_json(v: &serde_json::Value) -> String {
    let canonical = canonical_json(v);
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn canonical_json(v: &serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let parts: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", serde_json::to_string(k).unwrap(), canonical_json(&map[k])))
                .collect();
            format!("{{{}}}", parts.join(","))
        }
        Value::Array(items) => {
            format!("[{}]", items.iter().map(canonical_json).collect::<Vec<_>>().join(","))
        }
        other => other.to_string(),
    }
}
