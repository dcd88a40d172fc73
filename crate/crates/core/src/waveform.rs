//! Protocol symbol streams and their two-arm drive waveforms.
//!
//! Every time bin of width τ carries at most one return-to-zero drive pulse per
//! arm. A bin is described by its two nominal drive levels (radians); the sampled
//! waveform is the level multiplied by a common pulse profile that ramps from 0 to
//! 1 and back, so each noiseless sample sits on a ramp between 0 and a member of
//! the arm's level set.
//!
//! Coding conventions:
//!
//! * COW: bit 0 is a pulse in the early bin, bit 1 in the late bin, a decoy fills
//!   both bins. Pulses are push-pull (φ₁ = +π/2, φ₂ = −π/2) or, optionally, a
//!   single-arm π shift.
//! * DPS: one pulse per bin, each a full single-arm π shift. A leading reference
//!   pulse sits on arm 1; bit 0 repeats the previous arm, bit 1 switches arm.
//! * BB84: Z states are push-pull pulses in the early or late bin. X states are
//!   two half-amplitude pulses, the first on arm 1 and the second on the same arm
//!   (bit 0) or on arm 2 (bit 1). A push-pull alternative for X uses ±π/4.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ddm::{ModulatorConfig, PhaseDrive};
use crate::error::{Error, Result};

/// Default separation between adjacent time bins.
pub const DEFAULT_TAU: f64 = 800e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Protocol {
    Cow,
    Dps,
    Bb84,
}

impl Protocol {
    /// Time bins per symbol.
    pub fn bins_per_symbol(self) -> usize {
        match self {
            Protocol::Dps => 1,
            Protocol::Cow | Protocol::Bb84 => 2,
        }
    }

    pub fn qubit_period(self, tau: f64) -> f64 {
        tau * self.bins_per_symbol() as f64
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Cow => "COW",
            Protocol::Dps => "DPS",
            Protocol::Bb84 => "BB84",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "COW" => Ok(Protocol::Cow),
            "DPS" => Ok(Protocol::Dps),
            "BB84" => Ok(Protocol::Bb84),
            other => Err(Error::Config(format!("unknown protocol {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
    None,
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Z => "Z",
            Basis::X => "X",
            Basis::None => "none",
        })
    }
}

impl FromStr for Basis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Z" | "z" => Ok(Basis::Z),
            "X" | "x" => Ok(Basis::X),
            "none" | "-" => Ok(Basis::None),
            other => Err(Error::Config(format!("unknown basis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Symbol {
    pub bit: u8,
    pub basis: Basis,
    pub decoy: bool,
}

impl Symbol {
    pub fn cow(bit: u8) -> Self {
        Self { bit, basis: Basis::None, decoy: false }
    }
    pub fn cow_decoy() -> Self {
        Self { bit: 0, basis: Basis::None, decoy: true }
    }
    pub fn dps(bit: u8) -> Self {
        Self { bit, basis: Basis::X, decoy: false }
    }
    pub fn bb84(bit: u8, basis: Basis) -> Self {
        Self { bit, basis, decoy: false }
    }
}

/// A protocol symbol stream with its timing.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub protocol: Protocol,
    pub symbols: Vec<Symbol>,
    pub qubit_period: f64,
    pub bin_separation: f64,
    pub seed: u64,
}

impl SymbolFrame {
    pub fn new(protocol: Protocol, symbols: Vec<Symbol>, tau: f64, seed: u64) -> Self {
        Self { protocol, symbols, qubit_period: protocol.qubit_period(tau), bin_separation: tau, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bin_separation > 0.0) {
            return Err(Error::Config("bin separation must be > 0".into()));
        }
        let expected = self.protocol.qubit_period(self.bin_separation);
        if (self.qubit_period - expected).abs() > 1e-6 * expected {
            return Err(Error::Config(format!(
                "{} qubit period must be {} s, got {}",
                self.protocol, expected, self.qubit_period
            )));
        }
        for (i, s) in self.symbols.iter().enumerate() {
            if s.bit > 1 {
                return Err(Error::Encoding(format!("symbol {i}: bit {} is not binary", s.bit)));
            }
            if s.decoy && self.protocol != Protocol::Cow {
                return Err(Error::Encoding(format!(
                    "symbol {i}: decoy flag not valid for {}",
                    self.protocol
                )));
            }
            let ok = match self.protocol {
                Protocol::Cow => s.basis == Basis::None,
                Protocol::Dps => s.basis != Basis::Z,
                Protocol::Bb84 => s.basis != Basis::None,
            };
            if !ok {
                return Err(Error::Encoding(format!(
                    "symbol {i}: basis {} not valid for {}",
                    s.basis, self.protocol
                )));
            }
        }
        Ok(())
    }

    /// Number of time bins the frame occupies.
    pub fn n_bins(&self) -> usize {
        match self.protocol {
            Protocol::Dps => self.symbols.len() + 1,
            p => self.symbols.len() * p.bins_per_symbol(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.n_bins() as f64 * self.bin_separation
    }

    /// Writes the frame as comma-separated lines `protocol,index,bit,basis,decoy`.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# protocol={} qubit_period={:e} bin_separation={:e} seed={}",
            self.protocol, self.qubit_period, self.bin_separation, self.seed
        )?;
        for (i, s) in self.symbols.iter().enumerate() {
            writeln!(w, "{},{},{},{},{}", self.protocol, i, s.bit, s.basis, u8::from(s.decoy))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut header: BTreeMap<String, String> = BTreeMap::new();
        let mut symbols = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for kv in rest.split_whitespace() {
                    if let Some((k, v)) = kv.split_once('=') {
                        header.insert(k.to_string(), v.to_string());
                    }
                }
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: n + 1, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(parse_err(format!("expected 5 fields, got {}", fields.len())));
            }
            let index: usize = fields[1].parse().map_err(|e| parse_err(format!("index: {e}")))?;
            if index != symbols.len() {
                return Err(parse_err(format!("index {index} out of order")));
            }
            let bit: u8 = fields[2].parse().map_err(|e| parse_err(format!("bit: {e}")))?;
            let basis: Basis = fields[3].parse().map_err(|e: Error| parse_err(e.to_string()))?;
            let decoy = match fields[4] {
                "0" => false,
                "1" => true,
                other => return Err(parse_err(format!("decoy flag {other:?}"))),
            };
            symbols.push(Symbol { bit, basis, decoy });
        }
        let get = |k: &str| {
            header
                .get(k)
                .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing header key {k}") })
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|e| Error::Parse { line: 1, msg: format!("{k}: {e}") })
        };
        let frame = SymbolFrame {
            protocol: get("protocol")?.parse()?,
            symbols,
            qubit_period: num("qubit_period")?,
            bin_separation: num("bin_separation")?,
            seed: get("seed")?
                .parse()
                .map_err(|e| Error::Parse { line: 1, msg: format!("seed: {e}") })?,
        };
        frame.validate()?;
        Ok(frame)
    }
}

/// Random symbols with uniform bits and bases and Bernoulli decoys (COW only).
pub fn random_frame(protocol: Protocol, n_symbols: usize, decoy_prob: f64, seed: u64) -> Result<SymbolFrame> {
    random_frame_with_tau(protocol, n_symbols, decoy_prob, seed, DEFAULT_TAU)
}

pub fn random_frame_with_tau(
    protocol: Protocol,
    n_symbols: usize,
    decoy_prob: f64,
    seed: u64,
    tau: f64,
) -> Result<SymbolFrame> {
    if !(0.0..1.0).contains(&decoy_prob) {
        return Err(Error::Config(format!("decoy probability must be in [0, 1), got {decoy_prob}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let symbols = (0..n_symbols)
        .map(|_| match protocol {
            Protocol::Cow => {
                if decoy_prob > 0.0 && rng.gen_bool(decoy_prob) {
                    Symbol::cow_decoy()
                } else {
                    Symbol::cow(rng.gen_range(0..2))
                }
            }
            Protocol::Dps => Symbol::dps(rng.gen_range(0..2)),
            Protocol::Bb84 => {
                let basis = if rng.gen_bool(0.5) { Basis::Z } else { Basis::X };
                Symbol::bb84(rng.gen_range(0..2), basis)
            }
        })
        .collect();
    Ok(SymbolFrame::new(protocol, symbols, tau, seed))
}

/// Level-count keys as strings, since TOML table keys cannot be integers.
mod string_keys {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<usize, f64>, s: S) -> Result<S::Ok, S::Error> {
        map.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<String, f64>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(D::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDistribution {
    #[default]
    Uniform,
    /// Gaussian with the same variance as the uniform law of equal full width.
    Gaussian,
}

/// Pulse-to-pulse drive amplitude scatter (eye spreading).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Full-width spread of a two-level signal as a fraction of `reference_swing`.
    pub base_eye_spread: f64,
    /// Spread multiplier keyed by the number of levels of the arm signal.
    #[serde(with = "string_keys")]
    pub level_penalty: BTreeMap<usize, f64>,
    pub distribution: NoiseDistribution,
    pub seed: u64,
    /// Drive swing of a two-level signal (radians); a V_π drive by default.
    pub reference_swing: f64,
    /// Symmetric static amplitude mismatch between arms: arm-1 pulses are scaled by
    /// `1 + m/2`, arm-2 pulses by `1 − m/2`.
    pub arm_mismatch: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            base_eye_spread: 0.0,
            level_penalty: BTreeMap::from([(2, 1.0), (3, 1.5), (4, 3.0)]),
            distribution: NoiseDistribution::Uniform,
            seed: 0,
            reference_swing: PI,
            arm_mismatch: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn with_spread(base_eye_spread: f64, seed: u64) -> Self {
        Self { base_eye_spread, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_eye_spread >= 0.0) || !(self.reference_swing > 0.0) {
            return Err(Error::Config("eye spread and swing must be non-negative".into()));
        }
        let mut prev = f64::NEG_INFINITY;
        for (&levels, &p) in &self.level_penalty {
            if !(p >= 0.0) || p < prev {
                return Err(Error::Config(format!(
                    "level penalties must be non-negative and non-decreasing (at {levels} levels)"
                )));
            }
            prev = p;
        }
        if !(self.arm_mismatch.abs() < 2.0) {
            return Err(Error::Config("arm mismatch must lie in (-2, 2)".into()));
        }
        Ok(())
    }

    /// Full-width noise (radians) for an arm with `levels` nominal levels.
    pub fn width_for(&self, levels: usize) -> Result<f64> {
        let key = levels.max(2);
        let penalty = self
            .level_penalty
            .get(&key)
            .ok_or_else(|| Error::Config(format!("no eye-spread penalty for a {levels}-level signal")))?;
        Ok(self.base_eye_spread * penalty * self.reference_swing)
    }
}

/// Return-to-zero pulse profile within one time bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PulseShape {
    /// Linear ramps of `rise_time` around a flat top of `plateau`, centred in the bin.
    Trapezoid { rise_time: f64, plateau: f64 },
    /// Explicit rising-edge samples in [0, 1]; the pulse is the edge, a flat top of
    /// `plateau_samples` and the mirrored edge, centred in the bin.
    Edge { rising: Vec<f64>, plateau_samples: usize },
}

impl Default for PulseShape {
    fn default() -> Self {
        PulseShape::Trapezoid { rise_time: 40e-12, plateau: 50e-12 }
    }
}

impl PulseShape {
    pub fn rise_time(&self, sample_period: f64) -> f64 {
        match self {
            PulseShape::Trapezoid { rise_time, .. } => *rise_time,
            PulseShape::Edge { rising, .. } => rising.len() as f64 * sample_period,
        }
    }

    /// Profile values for the `bin_samples` samples of one bin.
    pub fn profile(&self, bin_samples: usize, sample_period: f64) -> Result<Vec<f64>> {
        let centre = bin_samples as f64 / 2.0;
        match self {
            PulseShape::Trapezoid { rise_time, plateau } => {
                if !(*rise_time >= 0.0 && *plateau >= 0.0) {
                    return Err(Error::Config("pulse rise time and plateau must be >= 0".into()));
                }
                let half_top = plateau / 2.0;
                Ok((0..bin_samples)
                    .map(|j| {
                        let t = ((j as f64) - centre).abs() * sample_period;
                        if t <= half_top + 1e-18 {
                            1.0
                        } else if *rise_time > 0.0 && t < half_top + rise_time {
                            1.0 - (t - half_top) / rise_time
                        } else {
                            0.0
                        }
                    })
                    .collect())
            }
            PulseShape::Edge { rising, plateau_samples } => {
                if rising.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Config("edge profile values must lie in [0, 1]".into()));
                }
                let mut pulse: Vec<f64> = rising.clone();
                pulse.extend(std::iter::repeat(1.0).take(*plateau_samples));
                pulse.extend(rising.iter().rev());
                if pulse.len() > bin_samples {
                    return Err(Error::Config(format!(
                        "pulse of {} samples does not fit a {}-sample bin",
                        pulse.len(),
                        bin_samples
                    )));
                }
                let start = (bin_samples - pulse.len()) / 2;
                let mut out = vec![0.0; bin_samples];
                out[start..start + pulse.len()].copy_from_slice(&pulse);
                Ok(out)
            }
        }
    }
}

/// Role of a bin on the drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Empty,
    Pulse,
    /// Residual light in a nominally empty bin (finite extinction).
    Leak,
}

/// Two-arm drive waveform organised by time bin.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveWaveform {
    pub sample_period: f64,
    pub bin_samples: usize,
    pub shape: PulseShape,
    /// Sampled pulse profile shared by every bin.
    pub profile: Vec<f64>,
    /// Noiseless levels per bin.
    pub nominal1: Vec<f64>,
    pub nominal2: Vec<f64>,
    /// Levels actually applied (nominal plus noise and mismatch).
    pub levels1: Vec<f64>,
    pub levels2: Vec<f64>,
    pub kinds: Vec<SlotKind>,
    pub level_set_arm1: Vec<f64>,
    pub level_set_arm2: Vec<f64>,
    pub rise_time: f64,
    pub eye_spread: f64,
}

impl DriveWaveform {
    pub fn n_bins(&self) -> usize {
        self.levels1.len()
    }

    pub fn bin_period(&self) -> f64 {
        self.bin_samples as f64 * self.sample_period
    }

    /// Distinct nominal levels the arm signals must support.
    pub fn level_counts(&self) -> (usize, usize) {
        (self.level_set_arm1.len(), self.level_set_arm2.len())
    }

    /// Sampled φ₁, φ₂ over the whole waveform.
    pub fn render(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let mut p1 = Vec::with_capacity(n);
        let mut p2 = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b) = self.phases(i);
            p1.push(a);
            p2.push(b);
        }
        (p1, p2)
    }
}

impl PhaseDrive for DriveWaveform {
    fn sample_period(&self) -> f64 {
        self.sample_period
    }
    fn len(&self) -> usize {
        self.levels1.len() * self.bin_samples
    }
    fn phases(&self, i: usize) -> (f64, f64) {
        let (bin, j) = (i / self.bin_samples, i % self.bin_samples);
        let s = self.profile[j];
        (self.levels1[bin] * s, self.levels2[bin] * s)
    }
    fn check_grid(&self) -> Result<()> {
        if self.levels1.len() != self.levels2.len() || self.kinds.len() != self.levels1.len() {
            return Err(Error::Config("arm level tables differ in length".into()));
        }
        if self.profile.len() != self.bin_samples {
            return Err(Error::Config("pulse profile does not match bin length".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CowPulses {
    #[default]
    PushPull,
    SingleArm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseEncoding {
    /// Consecutive positive pulses on one arm or alternating arms (chirped).
    #[default]
    SingleArm,
    /// Chirp-free push-pull pulses, inverted for a π phase difference.
    PushPull,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodeOptions {
    pub cow_pulses: CowPulses,
    pub bb84_phase: PhaseEncoding,
    pub shape: PulseShape,
}

/// Encodes a frame with default options.
pub fn encode(frame: &SymbolFrame, noise: &NoiseModel, cfg: &ModulatorConfig) -> Result<DriveWaveform> {
    encode_with(frame, noise, cfg, &EncodeOptions::default())
}

fn sorted_levels(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    v
}

/// Push-pull level `g` whose pulse energy is `ratio` times that of a full pulse.
fn leak_level(profile: &[f64], ratio: f64) -> f64 {
    let energy = |g: f64| profile.iter().map(|s| (g * s).sin().powi(2)).sum::<f64>();
    let target = ratio * energy(FRAC_PI_2);
    let (mut lo, mut hi) = (0.0, FRAC_PI_2);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if energy(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn encode_with(
    frame: &SymbolFrame,
    noise: &NoiseModel,
    cfg: &ModulatorConfig,
    opts: &EncodeOptions,
) -> Result<DriveWaveform> {
    cfg.validate()?;
    frame.validate()?;
    noise.validate()?;
    let bin_samples = (frame.bin_separation / cfg.sample_period).round() as usize;
    if bin_samples == 0 || ((bin_samples as f64 * cfg.sample_period) - frame.bin_separation).abs() > 1e-3 * cfg.sample_period {
        return Err(Error::Config(format!(
            "bin separation {} s is not a whole number of {} s samples",
            frame.bin_separation, cfg.sample_period
        )));
    }
    let profile = opts.shape.profile(bin_samples, cfg.sample_period)?;
    let n_bins = frame.n_bins();
    let mut l1 = vec![0.0; n_bins];
    let mut l2 = vec![0.0; n_bins];
    let mut kinds = vec![SlotKind::Empty; n_bins];
    let h = FRAC_PI_2;
    let q = FRAC_PI_4;

    let (cow_pulse, cow_sets) = match opts.cow_pulses {
        CowPulses::PushPull => ((h, -h), (vec![0.0, h], vec![-h, 0.0])),
        CowPulses::SingleArm => ((PI, 0.0), (vec![0.0, PI], vec![0.0])),
    };
    let mut put = |bin: usize, a: f64, b: f64| {
        l1[bin] = a;
        l2[bin] = b;
        kinds[bin] = SlotKind::Pulse;
    };
    let (set1, set2) = match frame.protocol {
        Protocol::Cow => {
            for (i, s) in frame.symbols.iter().enumerate() {
                let (early, late) = (2 * i, 2 * i + 1);
                if s.decoy || s.bit == 0 {
                    put(early, cow_pulse.0, cow_pulse.1);
                }
                if s.decoy || s.bit == 1 {
                    put(late, cow_pulse.0, cow_pulse.1);
                }
            }
            cow_sets
        }
        Protocol::Dps => {
            let mut on_arm1 = true;
            put(0, PI, 0.0);
            for (i, s) in frame.symbols.iter().enumerate() {
                if s.bit == 1 {
                    on_arm1 = !on_arm1;
                }
                if on_arm1 {
                    put(i + 1, PI, 0.0);
                } else {
                    put(i + 1, 0.0, PI);
                }
            }
            (vec![0.0, PI], vec![0.0, PI])
        }
        Protocol::Bb84 => {
            for (i, s) in frame.symbols.iter().enumerate() {
                let (early, late) = (2 * i, 2 * i + 1);
                match (s.basis, opts.bb84_phase) {
                    (Basis::Z, _) => put(if s.bit == 0 { early } else { late }, h, -h),
                    (_, PhaseEncoding::SingleArm) => {
                        put(early, h, 0.0);
                        if s.bit == 0 {
                            put(late, h, 0.0);
                        } else {
                            put(late, 0.0, h);
                        }
                    }
                    (_, PhaseEncoding::PushPull) => {
                        put(early, q, -q);
                        if s.bit == 0 {
                            put(late, q, -q);
                        } else {
                            put(late, -q, q);
                        }
                    }
                }
            }
            match opts.bb84_phase {
                PhaseEncoding::SingleArm => (vec![0.0, h], vec![-h, 0.0, h]),
                PhaseEncoding::PushPull => (vec![-q, 0.0, q, h], vec![-h, -q, 0.0, q]),
            }
        }
    };

    if cfg.extinction_db.is_some() && frame.protocol != Protocol::Dps {
        let g = leak_level(&profile, cfg.leakage_ratio());
        let bins_per = frame.protocol.bins_per_symbol();
        for (i, s) in frame.symbols.iter().enumerate() {
            let time_coded = match frame.protocol {
                Protocol::Cow => !s.decoy,
                _ => s.basis == Basis::Z,
            };
            if !time_coded {
                continue;
            }
            for bin in i * bins_per..(i + 1) * bins_per {
                if kinds[bin] == SlotKind::Empty {
                    l1[bin] = g;
                    l2[bin] = -g;
                    kinds[bin] = SlotKind::Leak;
                }
            }
        }
    }

    let drive = DriveWaveform {
        sample_period: cfg.sample_period,
        bin_samples,
        rise_time: opts.shape.rise_time(cfg.sample_period),
        shape: opts.shape.clone(),
        profile,
        nominal1: l1.clone(),
        nominal2: l2.clone(),
        levels1: l1,
        levels2: l2,
        kinds,
        level_set_arm1: sorted_levels(set1),
        level_set_arm2: sorted_levels(set2),
        eye_spread: 0.0,
    };
    apply_eye_noise(&drive, noise)
}

/// Redraws pulse levels from their nominal values with independent per-pulse
/// amplitude noise and the configured arm mismatch.
pub fn apply_eye_noise(drive: &DriveWaveform, noise: &NoiseModel) -> Result<DriveWaveform> {
    noise.validate()?;
    let (n1, n2) = drive.level_counts();
    let w1 = noise.width_for(n1)?;
    let w2 = noise.width_for(n2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let normal = Normal::new(0.0, 1.0 / 12f64.sqrt()).expect("finite sigma");
    let mut draw = |width: f64| -> f64 {
        if width == 0.0 {
            return 0.0;
        }
        match noise.distribution {
            NoiseDistribution::Uniform => width * (rng.gen::<f64>() - 0.5),
            NoiseDistribution::Gaussian => width * normal.sample(&mut rng),
        }
    };
    let scale1 = 1.0 + noise.arm_mismatch / 2.0;
    let scale2 = 1.0 - noise.arm_mismatch / 2.0;
    let mut out = drive.clone();
    for bin in 0..drive.n_bins() {
        if drive.kinds[bin] != SlotKind::Pulse {
            out.levels1[bin] = drive.nominal1[bin];
            out.levels2[bin] = drive.nominal2[bin];
            continue;
        }
        let (a, b) = (drive.nominal1[bin], drive.nominal2[bin]);
        out.levels1[bin] = if a != 0.0 { a * scale1 + draw(w1) } else { 0.0 };
        out.levels2[bin] = if b != 0.0 { b * scale2 + draw(w2) } else { 0.0 };
    }
    out.eye_spread = noise.base_eye_spread;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddm::carve_train;

    fn cfg() -> ModulatorConfig {
        ModulatorConfig::default()
    }

    fn pulse_center_field(drive: &DriveWaveform, bin: usize) -> num_complex::Complex64 {
        let train = carve_train(drive, &cfg()).unwrap();
        train.samples[bin * drive.bin_samples + drive.bin_samples / 2]
    }

    #[test]
    fn bb84_mixed_frame_uses_three_levels_on_arm2() {
        let frame = SymbolFrame::new(
            Protocol::Bb84,
            vec![Symbol::bb84(0, Basis::Z), Symbol::bb84(1, Basis::X)],
            DEFAULT_TAU,
            0,
        );
        let d = encode(&frame, &NoiseModel::noiseless(), &cfg()).unwrap();
        assert_eq!(d.level_counts(), (2, 3));
    }

    #[test]
    fn reported_level_counts() {
        let nl = NoiseModel::noiseless();
        let cow = encode(&random_frame(Protocol::Cow, 20, 0.2, 1).unwrap(), &nl, &cfg()).unwrap();
        assert_eq!(cow.level_counts(), (2, 2));
        let dps = encode(&random_frame(Protocol::Dps, 20, 0.0, 1).unwrap(), &nl, &cfg()).unwrap();
        assert_eq!(dps.level_counts(), (2, 2));
        let opts = EncodeOptions { bb84_phase: PhaseEncoding::PushPull, ..Default::default() };
        let pp = encode_with(&random_frame(Protocol::Bb84, 20, 0.0, 1).unwrap(), &nl, &cfg(), &opts).unwrap();
        assert_eq!(pp.level_counts(), (4, 4));
    }

    #[test]
    fn empty_frame_gives_empty_waveform() {
        let frame = SymbolFrame::new(Protocol::Cow, vec![], DEFAULT_TAU, 0);
        let d = encode(&frame, &NoiseModel::noiseless(), &cfg()).unwrap();
        assert_eq!(d.n_bins(), 0);
        assert!(carve_train(&d, &cfg()).unwrap().is_empty());
    }

    #[test]
    fn dps_bits_set_relative_phases() {
        let frame = SymbolFrame::new(Protocol::Dps, vec![Symbol::dps(0), Symbol::dps(1)], DEFAULT_TAU, 0);
        let d = encode(&frame, &NoiseModel::noiseless(), &cfg()).unwrap();
        let f0 = pulse_center_field(&d, 0);
        let rel: Vec<f64> = (0..3).map(|b| (pulse_center_field(&d, b) / f0).arg().abs()).collect();
        assert!(rel[0].abs() < 1e-12 && rel[1].abs() < 1e-12);
        assert!((rel[2] - PI).abs() < 1e-12);
    }

    #[test]
    fn decoy_outside_cow_rejected() {
        let frame = SymbolFrame::new(Protocol::Dps, vec![Symbol::cow_decoy()], DEFAULT_TAU, 0);
        let err = encode(&frame, &NoiseModel::noiseless(), &cfg()).unwrap_err();
        assert_eq!(err.kind(), "encoding");
    }

    #[test]
    fn random_frame_properties() {
        let f = random_frame(Protocol::Cow, 1000, 0.0, 3).unwrap();
        assert!(f.symbols.iter().all(|s| !s.decoy));
        assert_eq!(f, random_frame(Protocol::Cow, 1000, 0.0, 3).unwrap());
        assert_ne!(f, random_frame(Protocol::Cow, 1000, 0.0, 4).unwrap());
        assert!(random_frame(Protocol::Cow, 10, 1.0, 0).is_err());
        let dps = random_frame(Protocol::Dps, 10, 0.0, 0).unwrap();
        assert!((dps.qubit_period - DEFAULT_TAU).abs() < 1e-20);
    }

    #[test]
    fn decoy_fraction_matches_probability() {
        let f = random_frame(Protocol::Cow, 1_000_000, 0.155, 11).unwrap();
        let frac = f.symbols.iter().filter(|s| s.decoy).count() as f64 / 1e6;
        assert!((frac - 0.155).abs() < 0.002, "decoy fraction {frac}");
    }

    fn noise_offsets(levels_set: Vec<f64>, noise: &NoiseModel, n: usize) -> Vec<f64> {
        let set = levels_set.clone();
        let drive = DriveWaveform {
            sample_period: 1e-11,
            bin_samples: 80,
            shape: PulseShape::default(),
            profile: PulseShape::default().profile(80, 1e-11).unwrap(),
            nominal1: vec![FRAC_PI_2; n],
            nominal2: vec![0.0; n],
            levels1: vec![FRAC_PI_2; n],
            levels2: vec![0.0; n],
            kinds: vec![SlotKind::Pulse; n],
            level_set_arm1: set,
            level_set_arm2: vec![0.0],
            rise_time: 40e-12,
            eye_spread: 0.0,
        };
        let noisy = apply_eye_noise(&drive, noise).unwrap();
        noisy.levels1.iter().map(|l| (l - FRAC_PI_2) / noise.reference_swing).collect()
    }

    #[test]
    fn zero_spread_is_identity() {
        let frame = random_frame(Protocol::Bb84, 50, 0.0, 2).unwrap();
        let clean = encode(&frame, &NoiseModel::noiseless(), &cfg()).unwrap();
        let again = apply_eye_noise(&clean, &NoiseModel::with_spread(0.0, 99)).unwrap();
        assert_eq!(clean.levels1, again.levels1);
        assert_eq!(clean.levels2, again.levels2);
    }

    #[test]
    fn two_level_uniform_spread_width() {
        let offs = noise_offsets(vec![0.0, FRAC_PI_2], &NoiseModel::with_spread(0.1, 5), 100_000);
        let max = offs.iter().cloned().fold(f64::MIN, f64::max);
        let min = offs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max <= 0.05 && min >= -0.05);
        assert!(((max - min) - 0.1).abs() < 0.005);
    }

    #[test]
    fn four_level_spread_is_three_times_wider() {
        let set = vec![-FRAC_PI_4, 0.0, FRAC_PI_4, FRAC_PI_2];
        let offs = noise_offsets(set, &NoiseModel::with_spread(0.1, 6), 100_000);
        let width = offs.iter().cloned().fold(f64::MIN, f64::max) - offs.iter().cloned().fold(f64::MAX, f64::min);
        assert!((width - 0.3).abs() < 0.015, "width {width}");
    }

    #[test]
    fn unknown_level_count_rejected() {
        let set = vec![-1.0, -0.5, 0.0, 0.5, 1.0];
        let drive = encode(&random_frame(Protocol::Cow, 4, 0.0, 0).unwrap(), &NoiseModel::noiseless(), &cfg()).unwrap();
        let drive = DriveWaveform { level_set_arm1: set, ..drive };
        assert_eq!(apply_eye_noise(&drive, &NoiseModel::with_spread(0.1, 0)).unwrap_err().kind(), "config");
    }

    #[test]
    fn penalties_must_be_monotone() {
        let mut n = NoiseModel::default();
        n.level_penalty.insert(4, 1.2);
        assert!(n.validate().is_err());
    }

    #[test]
    fn frame_text_round_trip() {
        let f = random_frame(Protocol::Cow, 40, 0.3, 9).unwrap();
        let mut buf = Vec::new();
        f.write_text(&mut buf).unwrap();
        let back = SymbolFrame::read_text(&buf[..]).unwrap();
        assert_eq!(f.symbols, back.symbols);
        assert_eq!(f.protocol, back.protocol);
        assert!(SymbolFrame::read_text(&b"# protocol=COW\nCOW,0,1\n"[..]).is_err());
    }

    #[test]
    fn leak_pulses_follow_extinction() {
        let cfg = ModulatorConfig { extinction_db: Some(27.0), ..Default::default() };
        let frame = SymbolFrame::new(Protocol::Cow, vec![Symbol::cow(0)], DEFAULT_TAU, 0);
        let d = encode(&frame, &NoiseModel::noiseless(), &cfg).unwrap();
        let train = carve_train(&d, &cfg).unwrap();
        let m = d.bin_samples;
        let ratio = train.energy_in(m, 2 * m) / train.energy_in(0, m);
        assert!((ratio - 10f64.powf(-2.7)).abs() < 1e-9 * ratio.max(1e-3), "ratio {ratio}");
        assert_eq!(d.kinds, vec![SlotKind::Pulse, SlotKind::Leak]);
    }

    #[test]
    fn trapezoid_profile_is_symmetric_ramp() {
        let p = PulseShape::default().profile(80, 10e-12).unwrap();
        assert_eq!(p[40], 1.0);
        assert!(p[0] == 0.0 && p[79] == 0.0);
        assert!((p[43] - 0.875).abs() < 1e-12 && (p[37] - 0.875).abs() < 1e-12);
        assert!(p[..40].windows(2).all(|w| w[1] >= w[0]));
    }
}
