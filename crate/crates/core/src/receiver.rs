//! Receiver front ends, unbalanced interferometers and single-photon detectors.
//!
//! Port 0 of an interferometer is the constructive output for equal phases in
//! adjacent bins, port 1 the destructive one. Output bin `k` mixes bin `k` through
//! the short arm with bin `k − 1` through the long arm.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bins::BinTrain;
use crate::ddm::FieldTrain;
use crate::error::{Error, Result};
use crate::waveform::{Protocol, DEFAULT_TAU};

/// FWHM of a Gaussian in units of its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReceiverConfig {
    pub protocol: Protocol,
    pub interferometer_delay: f64,
    pub interferometer_visibility: f64,
    /// Insertion loss of the interferometer, dB.
    pub interferometer_loss: f64,
    /// Circulator loss in front of the interferometer, dB.
    pub circulator_loss: f64,
    /// Fraction of light tapped to the COW monitor interferometer.
    pub monitor_coupler_ratio: f64,
    /// Fraction of light sent to the BB84 Z detector.
    pub basis_coupler_ratio: f64,
    /// Interferometer phase offset (radians), e.g. from laser wavelength drift.
    pub phase_offset: f64,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self::for_protocol(Protocol::Cow)
    }
}

impl ReceiverConfig {
    pub fn for_protocol(protocol: Protocol) -> Self {
        Self {
            protocol,
            interferometer_delay: DEFAULT_TAU,
            interferometer_visibility: 1.0,
            interferometer_loss: 2.0,
            circulator_loss: 1.0,
            monitor_coupler_ratio: 0.5,
            basis_coupler_ratio: 0.5,
            phase_offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.interferometer_visibility) {
            return Err(Error::Config("visibility must lie in [0, 1]".into()));
        }
        for (name, r) in [("monitor", self.monitor_coupler_ratio), ("basis", self.basis_coupler_ratio)] {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!("{name} coupler ratio must lie in (0, 1)")));
            }
        }
        if !(self.interferometer_loss >= 0.0 && self.circulator_loss >= 0.0) {
            return Err(Error::Config("receiver losses must be >= 0 dB".into()));
        }
        if !(self.interferometer_delay > 0.0) {
            return Err(Error::Config("interferometer delay must be > 0".into()));
        }
        Ok(())
    }

    /// Power transmission through circulator and interferometer.
    pub fn interferometer_transmission(&self) -> f64 {
        10f64.powf(-(self.interferometer_loss + self.circulator_loss) / 10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeadTimeMode {
    /// A click on any detector blinds all detectors of the receiver.
    #[default]
    Shared,
    PerDetector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub efficiency: f64,
    /// Hz.
    pub dark_rate: f64,
    pub dead_time: f64,
    pub jitter_fwhm: f64,
    pub afterpulse_prob: f64,
    pub afterpulse_mean_delay: f64,
    pub dead_time_mode: DeadTimeMode,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            efficiency: 0.20,
            dark_rate: 1500.0,
            dead_time: 20e-6,
            jitter_fwhm: 250e-12,
            afterpulse_prob: 0.01,
            afterpulse_mean_delay: 1e-6,
            dead_time_mode: DeadTimeMode::Shared,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.efficiency,
            self.dark_rate,
            self.dead_time,
            self.jitter_fwhm,
            self.afterpulse_prob,
            self.afterpulse_mean_delay,
        ];
        if vals.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("detector parameters must be non-negative".into()));
        }
        if self.efficiency > 1.0 || self.afterpulse_prob > 1.0 {
            return Err(Error::Config("efficiency and afterpulse probability must be <= 1".into()));
        }
        Ok(())
    }

    /// Ideal detectors: no dark counts, jitter, dead time or afterpulses.
    pub fn ideal(efficiency: f64) -> Self {
        Self {
            efficiency,
            dark_rate: 0.0,
            dead_time: 0.0,
            jitter_fwhm: 0.0,
            afterpulse_prob: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DetectorId {
    /// COW data line (arrival time).
    SpdD,
    /// COW monitor, destructive port.
    SpdM,
    /// COW monitor, constructive port.
    SpdMBright,
    Spd0,
    Spd1,
    SpdZ,
    SpdX0,
    SpdX1,
}

impl fmt::Display for DetectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorId::SpdD => "SPD_D",
            DetectorId::SpdM => "SPD_M",
            DetectorId::SpdMBright => "SPD_M+",
            DetectorId::Spd0 => "SPD_0",
            DetectorId::Spd1 => "SPD_1",
            DetectorId::SpdZ => "SPD_Z",
            DetectorId::SpdX0 => "SPD_X0",
            DetectorId::SpdX1 => "SPD_X1",
        })
    }
}

impl FromStr for DetectorId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "SPD_D" => DetectorId::SpdD,
            "SPD_M" => DetectorId::SpdM,
            "SPD_M+" => DetectorId::SpdMBright,
            "SPD_0" => DetectorId::Spd0,
            "SPD_1" => DetectorId::Spd1,
            "SPD_Z" => DetectorId::SpdZ,
            "SPD_X0" => DetectorId::SpdX0,
            "SPD_X1" => DetectorId::SpdX1,
            other => return Err(Error::Config(format!("unknown detector {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Signal,
    Dark,
    Afterpulse,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Signal => "signal",
            Origin::Dark => "dark",
            Origin::Afterpulse => "afterpulse",
        })
    }
}

impl FromStr for Origin {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "signal" => Origin::Signal,
            "dark" => Origin::Dark,
            "afterpulse" => Origin::Afterpulse,
            other => return Err(Error::Config(format!("unknown origin {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionEvent {
    pub time: f64,
    pub detector: DetectorId,
    pub origin: Origin,
    pub assigned_bin: Option<u64>,
}

/// Output energies of both interferometer ports per output bin.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PortEnergies {
    pub constructive: Vec<f64>,
    pub destructive: Vec<f64>,
}

impl PortEnergies {
    pub fn total(&self) -> f64 {
        self.constructive.iter().sum::<f64>() + self.destructive.iter().sum::<f64>()
    }
}

/// Interferes a sampled train with its delayed copy.
///
/// The output has one bin more than the input (the trailing side bin), with bins
/// as long as the interferometer delay. Losses are applied.
pub fn interfere(train: &FieldTrain, rx: &ReceiverConfig) -> Result<PortEnergies> {
    rx.validate()?;
    let dt = train.sample_period;
    let d = (rx.interferometer_delay / dt).round() as usize;
    if d == 0 || ((d as f64) * dt - rx.interferometer_delay).abs() > 1e-3 * dt {
        return Err(Error::Measurement(format!(
            "delay {} s is not a whole number of {} s samples",
            rx.interferometer_delay, dt
        )));
    }
    let n = train.len();
    if d > n {
        return Err(Error::Measurement("interferometer delay exceeds the train".into()));
    }
    let v = rx.interferometer_visibility;
    let rot = Complex64::cis(rx.phase_offset);
    let scale = rx.interferometer_transmission() * dt / 4.0;
    let zero = Complex64::new(0.0, 0.0);
    let n_out = n.div_ceil(d) + 1;
    let mut out = PortEnergies { constructive: vec![0.0; n_out], destructive: vec![0.0; n_out] };
    for t in 0..n + d {
        let a = if t < n { train.samples[t] } else { zero };
        let b = if t >= d { train.samples[t - d] } else { zero };
        let base = a.norm_sqr() + b.norm_sqr();
        let cross = 2.0 * v * (a * b.conj() * rot).re;
        out.constructive[t / d] += (base + cross) * scale;
        out.destructive[t / d] += (base - cross) * scale;
    }
    Ok(out)
}

/// Cyclic interference from per-bin energies and overlaps; `scale` multiplies the input.
pub fn interfere_bins(bins: &BinTrain, rx: &ReceiverConfig, scale: f64) -> PortEnergies {
    let v = rx.interferometer_visibility;
    let rot = Complex64::cis(rx.phase_offset);
    let s = scale * rx.interferometer_transmission() / 4.0;
    let n = bins.len();
    let mut out = PortEnergies { constructive: Vec::with_capacity(n), destructive: Vec::with_capacity(n) };
    for k in 0..n {
        let base = bins.energy[k] + bins.energy[bins.prev(k)];
        let cross = 2.0 * v * (bins.overlap[k] * rot).re;
        out.constructive.push((base + cross) * s);
        out.destructive.push((base - cross) * s);
    }
    out
}

/// Mean photon number per bin arriving at one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorInput {
    pub detector: DetectorId,
    pub mean_photons: Vec<f64>,
}

/// Splits received light into the detectors of the protocol's receiver.
///
/// `photons_per_energy` converts bin energy into mean photons at the receiver input.
pub fn front_end(bins: &BinTrain, photons_per_energy: f64, rx: &ReceiverConfig) -> Result<Vec<DetectorInput>> {
    rx.validate()?;
    let direct = |ratio: f64| bins.energy.iter().map(|e| e * photons_per_energy * ratio).collect::<Vec<_>>();
    Ok(match rx.protocol {
        Protocol::Cow => {
            let tap = rx.monitor_coupler_ratio;
            let ports = interfere_bins(bins, rx, photons_per_energy * tap);
            vec![
                DetectorInput { detector: DetectorId::SpdD, mean_photons: direct(1.0 - tap) },
                DetectorInput { detector: DetectorId::SpdMBright, mean_photons: ports.constructive },
                DetectorInput { detector: DetectorId::SpdM, mean_photons: ports.destructive },
            ]
        }
        Protocol::Dps => {
            let ports = interfere_bins(bins, rx, photons_per_energy);
            vec![
                DetectorInput { detector: DetectorId::Spd0, mean_photons: ports.constructive },
                DetectorInput { detector: DetectorId::Spd1, mean_photons: ports.destructive },
            ]
        }
        Protocol::Bb84 => {
            let z = rx.basis_coupler_ratio;
            let ports = interfere_bins(bins, rx, photons_per_energy * (1.0 - z));
            vec![
                DetectorInput { detector: DetectorId::SpdZ, mean_photons: direct(z) },
                DetectorInput { detector: DetectorId::SpdX0, mean_photons: ports.constructive },
                DetectorInput { detector: DetectorId::SpdX1, mean_photons: ports.destructive },
            ]
        }
    })
}

pub fn click_probability(mu_eta: f64) -> f64 {
    -(-mu_eta).exp_m1()
}

/// Cumulative hazard over a cyclically repeated frame.
struct Hazard {
    prefix: Vec<f64>,
}

impl Hazard {
    fn new(rates: &[f64]) -> Self {
        let mut prefix = Vec::with_capacity(rates.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for r in rates {
            acc += r;
            prefix.push(acc);
        }
        Self { prefix }
    }

    fn period(&self) -> u64 {
        (self.prefix.len() - 1) as u64
    }

    fn total(&self) -> f64 {
        *self.prefix.last().unwrap()
    }

    /// Hazard accumulated before global bin `g`.
    fn at(&self, g: u64) -> f64 {
        let n = self.period();
        (g / n) as f64 * self.total() + self.prefix[(g % n) as usize]
    }

    /// Smallest global bin `g` whose end carries cumulative hazard >= `target`.
    fn first_reaching(&self, target: f64) -> u64 {
        let n = self.period();
        let total = self.total();
        let mut c = (target / total).floor();
        let mut r = target - c * total;
        if r > total {
            c += 1.0;
            r -= total;
        }
        let j = self.prefix.partition_point(|&p| p < r) as u64;
        (c as u64 * n + j).saturating_sub(1)
    }
}

struct Stream<'a> {
    detectors: Vec<DetectorId>,
    /// Per detector: signal hazard per bin.
    signal: Vec<Vec<f64>>,
    dark: f64,
    hazard: Hazard,
    det: &'a DetectorConfig,
    tau: f64,
    n_total: u64,
}

impl Stream<'_> {
    fn run(&self, seed: u64) -> Vec<DetectionEvent> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = self.det.jitter_fwhm / FWHM_PER_SIGMA;
        let jitter = Normal::new(0.0, sigma).expect("finite jitter");
        let n_frame = self.hazard.period();
        let mut events = Vec::new();
        if self.hazard.total() <= 0.0 || n_frame == 0 {
            return events;
        }
        let duration = self.n_total as f64 * self.tau;
        let mut start: u64 = 0;
        let mut alive_at = 0.0;
        let mut pending_ap: Option<(f64, DetectorId)> = None;
        loop {
            let e: f64 = Exp1.sample(&mut rng);
            let g = self.hazard.first_reaching(self.hazard.at(start) + e);
            let regular = if g < self.n_total { Some(g) } else { None };
            let centre = regular.map(|g| (g as f64 + 0.5) * self.tau);

            if let Some((t_ap, id)) = pending_ap.take() {
                if t_ap >= alive_at && t_ap < duration && centre.map_or(true, |c| t_ap < c) {
                    events.push(DetectionEvent { time: t_ap, detector: id, origin: Origin::Afterpulse, assigned_bin: None });
                    alive_at = t_ap + self.det.dead_time;
                    self.maybe_afterpulse(&mut rng, t_ap, id, &mut pending_ap);
                    start = self.first_bin_after(alive_at, (t_ap / self.tau) as u64 + 1);
                    continue;
                }
            }
            let Some(g) = regular else { break };
            let k = (g % n_frame) as usize;
            let total = self.hazard.prefix[k + 1] - self.hazard.prefix[k];
            let mut u = rng.gen::<f64>() * total;
            let mut pick = self.detectors.len() - 1;
            let mut is_signal = false;
            for (i, sig) in self.signal.iter().enumerate() {
                if u < sig[k] {
                    pick = i;
                    is_signal = true;
                    break;
                }
                u -= sig[k];
                if u < self.dark {
                    pick = i;
                    break;
                }
                u -= self.dark;
            }
            let bin_start = g as f64 * self.tau;
            let raw = if is_signal {
                bin_start + 0.5 * self.tau + if sigma > 0.0 { jitter.sample(&mut rng) } else { 0.0 }
            } else {
                bin_start + rng.gen::<f64>() * self.tau
            };
            let time = raw.max(alive_at);
            let id = self.detectors[pick];
            events.push(DetectionEvent {
                time,
                detector: id,
                origin: if is_signal { Origin::Signal } else { Origin::Dark },
                assigned_bin: None,
            });
            alive_at = time + self.det.dead_time;
            self.maybe_afterpulse(&mut rng, time, id, &mut pending_ap);
            start = self.first_bin_after(alive_at, g + 1);
        }
        events
    }

    fn maybe_afterpulse(&self, rng: &mut ChaCha8Rng, t: f64, id: DetectorId, slot: &mut Option<(f64, DetectorId)>) {
        if self.det.afterpulse_prob > 0.0 && rng.gen_bool(self.det.afterpulse_prob) {
            let delay: f64 = Exp1.sample(rng);
            *slot = Some((t + delay * self.det.afterpulse_mean_delay, id));
        }
    }

    /// First bin at or after `min_bin` whose centre is not before `alive_at`.
    fn first_bin_after(&self, alive_at: f64, min_bin: u64) -> u64 {
        let by_time = (alive_at / self.tau - 0.5).ceil().max(0.0) as u64;
        by_time.max(min_bin)
    }
}

/// Monte Carlo detection over `n_bins` consecutive bins of width `tau`, cycling
/// through the per-bin mean photon numbers of each detector.
///
/// In every live bin a detector fires with probability `1 − exp(−λ)`, where
/// `λ = µη + dark_rate·τ`. Detection times of signal clicks are the bin centre
/// plus Gaussian jitter; dark clicks are uniform within the bin.
pub fn detect(
    inputs: &[DetectorInput],
    det: &DetectorConfig,
    tau: f64,
    n_bins: u64,
    seed: u64,
) -> Result<Vec<DetectionEvent>> {
    det.validate()?;
    if inputs.is_empty() || n_bins == 0 {
        return Ok(Vec::new());
    }
    let n_frame = inputs[0].mean_photons.len();
    if inputs.iter().any(|i| i.mean_photons.len() != n_frame) {
        return Err(Error::Config("detector inputs differ in length".into()));
    }
    if n_frame == 0 {
        return Ok(Vec::new());
    }
    let dark = det.dark_rate * tau;
    let signal_of = |i: &DetectorInput| i.mean_photons.iter().map(|m| m * det.efficiency).collect::<Vec<f64>>();
    let make = |group: &[&DetectorInput]| {
        let signal: Vec<Vec<f64>> = group.iter().map(|i| signal_of(i)).collect();
        let rates: Vec<f64> = (0..n_frame).map(|k| signal.iter().map(|s| s[k] + dark).sum()).collect();
        Stream {
            detectors: group.iter().map(|i| i.detector).collect(),
            signal,
            dark,
            hazard: Hazard::new(&rates),
            det,
            tau,
            n_total: n_bins,
        }
    };
    let mut events: Vec<DetectionEvent> = match det.dead_time_mode {
        DeadTimeMode::Shared => {
            let all: Vec<&DetectorInput> = inputs.iter().collect();
            make(&all).run(seed)
        }
        DeadTimeMode::PerDetector => inputs
            .par_iter()
            .enumerate()
            .map(|(i, inp)| make(&[inp]).run(seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))))
            .flatten()
            .collect(),
    };
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.detector.cmp(&b.detector)));
    Ok(events)
}

/// Maps each event to the nearest bin centre within `±window` of it.
pub fn assign_bins(events: &mut [DetectionEvent], tau: f64, window: f64) {
    for ev in events.iter_mut() {
        let k = (ev.time / tau - 0.5).round();
        let centre = (k + 0.5) * tau;
        ev.assigned_bin = if k >= 0.0 && (ev.time - centre).abs() <= window { Some(k as u64) } else { None };
    }
}

pub fn write_log<W: Write>(events: &[DetectionEvent], mut w: W) -> Result<()> {
    writeln!(w, "# detector,time,origin,bin")?;
    for e in events {
        let bin = e.assigned_bin.map(|b| b.to_string()).unwrap_or_else(|| "-".into());
        writeln!(w, "{},{:e},{},{}", e.detector, e.time, e.origin, bin)?;
    }
    Ok(())
}

pub fn read_log<R: BufRead>(r: R) -> Result<Vec<DetectionEvent>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: n + 1, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", f.len())));
        }
        out.push(DetectionEvent {
            detector: f[0].parse().map_err(|e: Error| err(e.to_string()))?,
            time: f[1].parse().map_err(|e| err(format!("time: {e}")))?,
            origin: f[2].parse().map_err(|e: Error| err(e.to_string()))?,
            assigned_bin: match f[3] {
                "-" => None,
                s => Some(s.parse().map_err(|e| err(format!("bin: {e}")))?),
            },
        });
    }
    Ok(out)
}
