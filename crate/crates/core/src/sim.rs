//! End-to-end link simulation: frame, drive, carving, channel, receiver, sifting.

use serde::{Deserialize, Serialize};

use crate::bins::{carve_bins, BinTrain};
use crate::ddm::ModulatorConfig;
use crate::error::{Error, Result};
use crate::link::{calibrate_voa, ChannelConfig, MuTarget};
use crate::receiver::{assign_bins, detect, front_end, DetectionEvent, DetectorConfig, ReceiverConfig};
use crate::sift::{sift, SiftResult, DEFAULT_SAMPLE_FRACTION};
use crate::waveform::{encode_with, random_frame_with_tau, EncodeOptions, NoiseModel, Protocol, SymbolFrame, DEFAULT_TAU};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    pub protocol: Protocol,
    /// Symbols per transmitted frame; the frame repeats during detection.
    pub symbols: usize,
    pub decoy_prob: f64,
    pub tau: f64,
    /// Detection time per trial, seconds.
    pub duration: f64,
    pub sample_fraction: f64,
    /// Half-width of the bin acceptance window; `None` means τ/2.
    pub window: Option<f64>,
    pub modulator: ModulatorConfig,
    pub noise: NoiseModel,
    pub encoding: EncodeOptions,
    pub channel: ChannelConfig,
    pub receiver: ReceiverConfig,
    pub detector: DetectorConfig,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self::for_protocol(Protocol::Cow)
    }
}

impl LinkConfig {
    pub fn for_protocol(protocol: Protocol) -> Self {
        Self {
            protocol,
            symbols: 100_000,
            decoy_prob: if protocol == Protocol::Cow { 0.15 } else { 0.0 },
            tau: DEFAULT_TAU,
            duration: 1.0,
            sample_fraction: DEFAULT_SAMPLE_FRACTION,
            window: None,
            modulator: ModulatorConfig::default(),
            noise: NoiseModel::default(),
            encoding: EncodeOptions::default(),
            channel: ChannelConfig::default(),
            receiver: ReceiverConfig::for_protocol(protocol),
            detector: DetectorConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.receiver.protocol != self.protocol {
            return Err(Error::Config("receiver protocol differs from the link protocol".into()));
        }
        if !(self.duration > 0.0) || !(self.tau > 0.0) {
            return Err(Error::Config("duration and tau must be > 0".into()));
        }
        self.modulator.validate()?;
        self.noise.validate()?;
        self.channel.validate()?;
        self.receiver.validate()?;
        self.detector.validate()
    }

    /// Bins simulated per trial.
    pub fn n_bins(&self) -> u64 {
        (self.duration / self.tau).round() as u64
    }
}

/// Transmitted frame and its carved per-bin field summary.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub frame: SymbolFrame,
    pub bins: BinTrain,
}

impl Prepared {
    /// Qubits (COW, BB84) or pulses (DPS) in the frame.
    pub fn units(&self) -> usize {
        match self.frame.protocol {
            Protocol::Dps => self.frame.n_bins(),
            _ => self.frame.symbols.len(),
        }
    }
}

pub fn prepare(cfg: &LinkConfig, seed: u64) -> Result<Prepared> {
    cfg.validate()?;
    let frame = random_frame_with_tau(cfg.protocol, cfg.symbols, cfg.decoy_prob, seed, cfg.tau)?;
    let noise = NoiseModel { seed: seed ^ 0x5eed_0f_e7e5, ..cfg.noise.clone() };
    let drive = encode_with(&frame, &noise, &cfg.modulator, &cfg.encoding)?;
    let bins = carve_bins(&drive, &cfg.modulator)?;
    Ok(Prepared { frame, bins })
}

/// Mean photons at the receiver input per unit of field energy.
pub fn photons_per_energy(prep: &Prepared, channel: &ChannelConfig) -> Result<f64> {
    let factor = calibrate_voa(prep.bins.total_energy(), prep.bins.alpha_ref, prep.units(), channel)?;
    Ok(factor * prep.bins.alpha_ref * channel.transmission())
}

/// Detection events for one trial with mean photon number `mu` at the receiver.
pub fn detect_events(prep: &Prepared, cfg: &LinkConfig, mu: f64, seed: u64) -> Result<Vec<DetectionEvent>> {
    let scale = if mu > 0.0 {
        let channel = ChannelConfig { mu_target: MuTarget { mu, ..cfg.channel.mu_target }, ..cfg.channel.clone() };
        photons_per_energy(prep, &channel)?
    } else {
        0.0
    };
    let inputs = front_end(&prep.bins, scale, &cfg.receiver)?;
    let mut events = detect(&inputs, &cfg.detector, cfg.tau, cfg.n_bins(), seed)?;
    assign_bins(&mut events, cfg.tau, cfg.window.unwrap_or(cfg.tau / 2.0));
    Ok(events)
}

pub fn run_trial(prep: &Prepared, cfg: &LinkConfig, mu: f64, seed: u64) -> Result<SiftResult> {
    let events = detect_events(prep, cfg, mu, seed)?;
    sift(cfg.protocol, &prep.frame, &events, cfg.n_bins() as f64 * cfg.tau)
}

/// Concatenates trial results in order.
pub fn pool(results: impl IntoIterator<Item = SiftResult>) -> SiftResult {
    let mut out = SiftResult::default();
    for r in results {
        out.pairs.extend(r.pairs);
        out.detections += r.detections;
        out.duration += r.duration;
    }
    out
}

/// SplitMix64 step, used to derive independent seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x2545_F491_4F6C_DD1D);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sift::estimate;

    #[test]
    fn per_unit_mu_matches_target() {
        for p in [Protocol::Cow, Protocol::Dps, Protocol::Bb84] {
            let cfg = LinkConfig { symbols: 2000, ..LinkConfig::for_protocol(p) };
            let prep = prepare(&cfg, 1).unwrap();
            let k = photons_per_energy(&prep, &cfg.channel).unwrap();
            let mu = prep.bins.total_energy() * k / prep.units() as f64;
            assert!((mu - cfg.channel.mu_target.mu).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_link_is_error_free() {
        for p in [Protocol::Cow, Protocol::Dps, Protocol::Bb84] {
            let cfg = LinkConfig {
                symbols: 5000,
                duration: 0.05,
                detector: DetectorConfig { dead_time: 0.0, ..DetectorConfig::ideal(0.2) },
                ..LinkConfig::for_protocol(p)
            };
            let prep = prepare(&cfg, 3).unwrap();
            let s = run_trial(&prep, &cfg, 0.01, 4).unwrap();
            assert!(s.key_len() > 1000, "{p}: {}", s.key_len());
            let st = estimate(p, &s, 0.125, 0).unwrap();
            assert_eq!(st.qber_phase.errors, 0, "{p}");
            assert_eq!(st.error_count_time(), 0, "{p}");
        }
    }

    #[test]
    fn seeds_differ_per_stream() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
