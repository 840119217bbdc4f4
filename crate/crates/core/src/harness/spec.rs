//! Experiment specifications: base profile, overrides, sweep axis and schemes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// CNN+LSTM predictor.
    Dlpdn,
    /// Per-entry linear-regression predictor.
    Lr,
    /// Precoding network trained on VAE-augmented errors.
    Dlpcn,
    /// Same network trained on Gaussian-augmented errors.
    DlpcnGaussian,
    /// Same network trained without errors or outage penalty.
    DlpcnNonrobust,
    /// Dense-only network trained on VAE-augmented errors.
    Mlp,
    /// Zero-forcing on the predicted channel.
    Zfbf,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Dlpdn => "dlpdn",
            Scheme::Lr => "lr",
            Scheme::Dlpcn => "dlpcn",
            Scheme::DlpcnGaussian => "dlpcn_gaussian",
            Scheme::DlpcnNonrobust => "dlpcn_nonrobust",
            Scheme::Mlp => "mlp",
            Scheme::Zfbf => "zfbf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::invalid(format!("unknown scheme `{s}`")))
    }

    pub fn is_predictor(self) -> bool {
        matches!(self, Scheme::Dlpdn | Scheme::Lr)
    }

    pub fn is_learned_precoder(self) -> bool {
        matches!(self, Scheme::Dlpcn | Scheme::DlpcnGaussian | Scheme::DlpcnNonrobust | Scheme::Mlp)
    }

    pub fn all() -> Vec<Scheme> {
        vec![
            Scheme::Dlpdn,
            Scheme::Lr,
            Scheme::Dlpcn,
            Scheme::DlpcnGaussian,
            Scheme::DlpcnNonrobust,
            Scheme::Mlp,
            Scheme::Zfbf,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Total transmit power in dBW.
    P2,
    WStep,
    /// Carrier frequency in Hz.
    Fc,
    /// Orbit altitude in metres.
    D0,
    K,
    /// SINR threshold in dB.
    Gamma,
    Pout,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::P2 => "p2_dbw",
            Axis::WStep => "w_step",
            Axis::Fc => "f_c",
            Axis::D0 => "d_0",
            Axis::K => "k",
            Axis::Gamma => "gamma_db",
            Axis::Pout => "p_out",
        }
    }

    pub fn apply(self, cfg: &mut RunConfig, value: f64) -> Result<()> {
        let as_count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::invalid(format!("axis {} needs positive integers, got {v}", self.name())))
            }
        };
        match self {
            Axis::P2 => cfg.system.tx_power_dbw = value,
            Axis::WStep => cfg.predictor.w_step = as_count(value)?,
            Axis::Fc => cfg.system.carrier_hz = value,
            Axis::D0 => cfg.system.altitude_m = value,
            Axis::K => cfg.system.devices = as_count(value)?,
            Axis::Gamma => cfg.system.sinr_threshold_db = value,
            Axis::Pout => cfg.system.outage_prob = value,
        }
        cfg.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Desk,
    Full,
}

impl Profile {
    pub fn config(self) -> RunConfig {
        match self {
            Profile::Desk => RunConfig::desk(),
            Profile::Full => RunConfig::full(),
        }
    }
}

fn one() -> usize {
    1
}

fn default_schemes() -> Vec<Scheme> {
    vec![Scheme::Dlpdn, Scheme::Lr, Scheme::Dlpcn, Scheme::Zfbf]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub profile: Profile,
    /// Partial config merged over the profile.
    #[serde(default)]
    pub overrides: serde_json::Value,
    #[serde(default)]
    pub axis: Option<Axis>,
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Metrics CSV path; the JSON sidecar sits next to it.
    pub output: PathBuf,
    /// Stage cache; defaults to a `cache` directory beside the output.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let spec: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("no schemes selected".into()));
        }
        if self.axis.is_some() && self.values.is_empty() {
            return Err(Error::Config("sweep axis declared without values".into()));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("axis values must be strictly increasing".into()));
        }
        self.resolve_config().map(|_| ())
    }

    /// Profile config with the overrides merged in, validated.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut base = serde_json::to_value(self.profile.config())?;
        merge(&mut base, &self.overrides);
        let cfg: RunConfig = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| {
            self.output.parent().map(|p| p.join("cache")).unwrap_or_else(|| PathBuf::from("cache"))
        })
    }
}

/// Recursive object merge; non-object values replace.
pub fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    use serde_json::Value;
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (_, Value::Null) => {}
        (b, p) => *b = p.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(json: &str) -> ExperimentSpec {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn overrides_merge_and_validate() {
        let s = spec(r#"{"name":"x","output":"o.csv","overrides":{"system":{"tx_power_dbw":3.0}}}"#);
        let cfg = s.resolve_config().unwrap();
        assert_eq!(cfg.system.tx_power_dbw, 3.0);
        assert_eq!(cfg.system.antennas, 8);
        let bad = spec(r#"{"name":"x","output":"o.csv","overrides":{"system":{"tx_pwr":3.0}}}"#);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn axis_values_must_increase() {
        assert!(spec(r#"{"name":"x","output":"o","axis":"p2","values":[0,5,5]}"#).validate().is_err());
        assert!(spec(r#"{"name":"x","output":"o","axis":"p2","values":[]}"#).validate().is_err());
        assert!(spec(r#"{"name":"x","output":"o","replications":0}"#).validate().is_err());
        assert!(spec(r#"{"name":"x","output":"o","axis":"p2","values":[0,5]}"#).validate().is_ok());
    }

    #[test]
    fn axis_application() {
        let mut cfg = RunConfig::desk();
        Axis::WStep.apply(&mut cfg, 2.0).unwrap();
        assert_eq!(cfg.predictor.w_step, 2);
        assert!(Axis::WStep.apply(&mut cfg, 2.5).is_err());
        assert!(Axis::WStep.apply(&mut RunConfig::desk(), 9.0).is_err());
        Axis::Fc.apply(&mut cfg, 2.5e9).unwrap();
        assert_eq!(cfg.system.carrier_hz, 2.5e9);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::all() {
            assert_eq!(Scheme::parse(s.name()).unwrap(), s);
        }
        assert!(Scheme::parse("nope").is_err());
    }
}
