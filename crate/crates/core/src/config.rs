//! Experiment configuration: one TOML file per run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::keyrate::{FiniteKey, KeyRateModel};
use crate::sim::LinkConfig;
use crate::stability::DriftModel;
use crate::waveform::Protocol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    MuSweep,
    ChirpStudy,
    FreqSweep,
    Stability,
    Extinction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyRateConfig {
    pub ec_efficiency: f64,
    pub finite_key_block: Option<f64>,
    pub finite_key_epsilon: f64,
}

impl Default for KeyRateConfig {
    fn default() -> Self {
        Self { ec_efficiency: 1.2, finite_key_block: None, finite_key_epsilon: 1e-9 }
    }
}

impl KeyRateConfig {
    pub fn model(&self, protocol: Protocol) -> KeyRateModel {
        KeyRateModel {
            ec_efficiency: self.ec_efficiency,
            finite_key: self.finite_key_block.map(|block_size| FiniteKey { block_size, epsilon: self.finite_key_epsilon }),
            ..KeyRateModel::new(protocol)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MuSweepConfig {
    /// Mean photon numbers at the receiver.
    pub mu: Vec<f64>,
}

impl Default for MuSweepConfig {
    fn default() -> Self {
        Self { mu: vec![1.0, 0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChirpConfig {
    /// X-basis qubits per trial.
    pub symbols: usize,
    /// Two-level base eye spreads to evaluate.
    pub eye_spreads: Vec<f64>,
    pub visibility: f64,
}

impl Default for ChirpConfig {
    fn default() -> Self {
        Self { symbols: 250_000, eye_spreads: vec![0.0, 0.05, 0.1, 0.15], visibility: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreqConfig {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    /// Length of the carved train per frequency, seconds.
    pub duration: f64,
    pub sample_period: f64,
    /// Visibility of the interferometer itself.
    pub visibility: f64,
}

impl Default for FreqConfig {
    fn default() -> Self {
        Self { start: 0.5e9, stop: 2.0e9, step: 10e6, duration: 200e-9, sample_period: 1e-12, visibility: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtinctionConfig {
    pub extinction_db: Vec<f64>,
    /// Qubits in the transmitted frame.
    pub symbols: usize,
    pub mu: f64,
    /// Detection time per trial, seconds.
    pub duration: f64,
}

impl Default for ExtinctionConfig {
    fn default() -> Self {
        Self { extinction_db: vec![20.0, 23.0, 25.0, 27.0, 30.0], symbols: 1_000_000, mu: 0.1, duration: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub seed: u64,
    pub trials: usize,
    pub link: LinkConfig,
    pub keyrate: KeyRateConfig,
    pub mu_sweep: MuSweepConfig,
    pub chirp: ChirpConfig,
    pub freq: FreqConfig,
    pub stability: DriftModel,
    pub extinction: ExtinctionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 1,
            trials: 1,
            link: LinkConfig::default(),
            keyrate: KeyRateConfig::default(),
            mu_sweep: MuSweepConfig::default(),
            chirp: ChirpConfig::default(),
            freq: FreqConfig::default(),
            stability: DriftModel::default(),
            extinction: ExtinctionConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.normalize();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Keeps the receiver consistent with the link protocol.
    pub fn normalize(&mut self) {
        self.link.receiver.protocol = self.link.protocol;
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        self.link.validate()?;
        self.keyrate.model(self.link.protocol).validate().map_err(|e| Error::Config(e.to_string()))?;
        self.stability.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_hash() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 7\n[link]\nprotocol = \"DPS\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.link.receiver.protocol, Protocol::Dps);
        assert_ne!(cfg.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn bad_values_rejected() {
        assert_eq!(ExperimentConfig::from_toml("trials = \"x\"").unwrap_err().kind(), "config");
        let cfg = ExperimentConfig { trials: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
