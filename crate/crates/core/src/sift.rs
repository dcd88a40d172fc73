//! Sifting of detection events against the transmitted frame and QBER estimation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::receiver::{DetectionEvent, DetectorId, Origin};
use crate::waveform::{Basis, Protocol, SymbolFrame};

/// Default fraction of sifted bits disclosed for parameter estimation.
pub const DEFAULT_SAMPLE_FRACTION: f64 = 0.125;

/// One bit compared between transmitter and receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiftedPair {
    /// Global bin index of the detection.
    pub bin: u64,
    /// Z for arrival-time bits, X for phase bits.
    pub basis: Basis,
    pub alice: u8,
    pub bob: u8,
    /// Whether the bit enters the key (COW monitor outcomes do not).
    pub key: bool,
    pub origin: Origin,
}

impl SiftedPair {
    pub fn is_error(&self) -> bool {
        self.alice != self.bob
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SiftResult {
    pub pairs: Vec<SiftedPair>,
    pub detections: u64,
    /// Measurement time in seconds.
    pub duration: f64,
}

impl SiftResult {
    pub fn key_len(&self) -> usize {
        self.pairs.iter().filter(|p| p.key).count()
    }
}

/// Bins carrying a pulse, following the encoder's conventions.
pub fn occupied_bins(frame: &SymbolFrame) -> Vec<bool> {
    let mut occ = vec![false; frame.n_bins()];
    match frame.protocol {
        Protocol::Dps => occ.iter_mut().for_each(|o| *o = true),
        Protocol::Cow => {
            for (q, s) in frame.symbols.iter().enumerate() {
                occ[2 * q] = s.decoy || s.bit == 0;
                occ[2 * q + 1] = s.decoy || s.bit == 1;
            }
        }
        Protocol::Bb84 => {
            for (q, s) in frame.symbols.iter().enumerate() {
                match s.basis {
                    Basis::Z => occ[2 * q + s.bit as usize] = true,
                    _ => {
                        occ[2 * q] = true;
                        occ[2 * q + 1] = true;
                    }
                }
            }
        }
    }
    occ
}

/// DPS: arm (false = arm 1) used by each pulse, including the leading reference.
pub fn dps_arms(frame: &SymbolFrame) -> Vec<bool> {
    let mut arms = Vec::with_capacity(frame.symbols.len() + 1);
    let mut arm2 = false;
    arms.push(arm2);
    for s in &frame.symbols {
        if s.bit == 1 {
            arm2 = !arm2;
        }
        arms.push(arm2);
    }
    arms
}

/// Matches assigned detection events to the transmitted frame.
///
/// The frame repeats cyclically; event bins are reduced modulo the frame length.
pub fn sift(
    protocol: Protocol,
    frame: &SymbolFrame,
    events: &[DetectionEvent],
    duration: f64,
) -> Result<SiftResult> {
    if protocol != frame.protocol {
        return Err(Error::Sift(format!(
            "receiver runs {protocol} but the frame is {}",
            frame.protocol
        )));
    }
    let n = frame.n_bins() as u64;
    let mut out = SiftResult { pairs: Vec::new(), detections: events.len() as u64, duration };
    if n == 0 {
        return Ok(out);
    }
    let occ = occupied_bins(frame);
    let arms = if protocol == Protocol::Dps { dps_arms(frame) } else { Vec::new() };
    let prev = |k: usize| if k == 0 { n as usize - 1 } else { k - 1 };
    for ev in events {
        let Some(bin) = ev.assigned_bin else { continue };
        let k = (bin % n) as usize;
        let mut push = |basis, alice, bob, key| {
            out.pairs.push(SiftedPair { bin, basis, alice, bob, key, origin: ev.origin })
        };
        match (protocol, ev.detector) {
            (Protocol::Cow, DetectorId::SpdD) => {
                let s = frame.symbols[k / 2];
                if !s.decoy {
                    push(Basis::Z, s.bit, (k % 2) as u8, true);
                }
            }
            (Protocol::Cow, DetectorId::SpdM | DetectorId::SpdMBright) => {
                if occ[k] && occ[prev(k)] {
                    push(Basis::X, 0, u8::from(ev.detector == DetectorId::SpdM), false);
                }
            }
            (Protocol::Dps, DetectorId::Spd0 | DetectorId::Spd1) => {
                let alice = u8::from(arms[k] != arms[prev(k)]);
                push(Basis::X, alice, u8::from(ev.detector == DetectorId::Spd1), true);
            }
            (Protocol::Bb84, DetectorId::SpdZ) => {
                let s = frame.symbols[k / 2];
                if s.basis == Basis::Z {
                    push(Basis::Z, s.bit, (k % 2) as u8, true);
                }
            }
            (Protocol::Bb84, DetectorId::SpdX0 | DetectorId::SpdX1) => {
                let s = frame.symbols[k / 2];
                if k % 2 == 1 && s.basis == Basis::X {
                    push(Basis::X, s.bit, u8::from(ev.detector == DetectorId::SpdX1), true);
                }
            }
            (p, d) => return Err(Error::Sift(format!("detector {d} does not belong to a {p} receiver"))),
        }
    }
    Ok(out)
}

/// Binomial proportion with a 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proportion {
    pub errors: u64,
    pub total: u64,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Proportion {
    pub fn new(errors: u64, total: u64) -> Self {
        let (lo, hi) = wilson_interval(errors, total, 1.959_963_984_540_054);
        let value = if total == 0 { f64::NAN } else { errors as f64 / total as f64 };
        Self { errors, total, value, lo, hi }
    }

    pub fn half_width(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }
}

pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub protocol: Protocol,
    pub detections: u64,
    pub sifted_count: u64,
    pub sifted_rate: f64,
    /// Arrival-time basis on the disclosed sample; absent for DPS.
    pub qber_time_sampled: Option<Proportion>,
    /// Arrival-time basis over all sifted bits.
    pub qber_time: Option<Proportion>,
    pub qber_phase_sampled: Proportion,
    pub qber_phase: Proportion,
    pub visibility: f64,
    pub sample_fraction: f64,
}

impl RunStats {
    pub fn error_count_time(&self) -> u64 {
        self.qber_time.map_or(0, |q| q.errors)
    }

    pub fn error_count_phase(&self) -> u64 {
        self.qber_phase.errors
    }
}

/// QBER on a random sample of sifted bits plus the full QBER and visibility.
///
/// COW monitor outcomes are not key bits and are used in full for the phase error
/// and visibility `(C − W)/(C + W)`.
pub fn estimate(protocol: Protocol, sifted: &SiftResult, sample_fraction: f64, seed: u64) -> Result<RunStats> {
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(Error::Estimation(format!("sample fraction must lie in (0, 1], got {sample_fraction}")));
    }
    if sifted.pairs.is_empty() {
        return Err(Error::Estimation("no sifted bits".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut full = [[0u64; 2]; 2];
    let mut sample = [[0u64; 2]; 2];
    let mut key = 0u64;
    for p in &sifted.pairs {
        let b = usize::from(p.basis == Basis::X);
        let err = usize::from(p.is_error());
        full[b][err] += 1;
        let sampled = if p.key {
            key += 1;
            rng.gen::<f64>() < sample_fraction
        } else {
            true
        };
        if sampled {
            sample[b][err] += 1;
        }
    }
    let prop = |c: [u64; 2]| Proportion::new(c[1], c[0] + c[1]);
    let time = (protocol != Protocol::Dps).then(|| (prop(sample[0]), prop(full[0])));
    let phase = prop(full[1]);
    let visibility = if phase.total == 0 { f64::NAN } else { 1.0 - 2.0 * phase.value };
    Ok(RunStats {
        protocol,
        detections: sifted.detections,
        sifted_count: key,
        sifted_rate: if sifted.duration > 0.0 { key as f64 / sifted.duration } else { 0.0 },
        qber_time_sampled: time.map(|t| t.0),
        qber_time: time.map(|t| t.1),
        qber_phase_sampled: prop(sample[1]),
        qber_phase: phase,
        visibility,
        sample_fraction,
    })
}

/// QBER with the expected dark-count contribution removed.
pub fn qber_opt(errors: f64, total: f64, dark_errors: f64, dark_total: f64) -> Result<f64> {
    let n = total - dark_total;
    if !(n > 0.0) {
        return Err(Error::Estimation("no signal counts left after dark subtraction".into()));
    }
    Ok(((errors - dark_errors) / n).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{random_frame, Symbol, DEFAULT_TAU};

    fn ev(detector: DetectorId, bin: u64) -> DetectionEvent {
        DetectionEvent { time: (bin as f64 + 0.5) * DEFAULT_TAU, detector, origin: Origin::Signal, assigned_bin: Some(bin) }
    }

    #[test]
    fn no_events_no_bits() {
        let f = random_frame(Protocol::Cow, 10, 0.1, 0).unwrap();
        let s = sift(Protocol::Cow, &f, &[], 1.0).unwrap();
        assert!(s.pairs.is_empty());
        assert_eq!(estimate(Protocol::Cow, &s, 0.125, 0).unwrap_err().kind(), "estimation");
    }

    #[test]
    fn cow_early_click_gives_bit_zero() {
        let f = SymbolFrame::new(Protocol::Cow, vec![Symbol::cow(0), Symbol::cow(1)], DEFAULT_TAU, 0);
        let s = sift(Protocol::Cow, &f, &[ev(DetectorId::SpdD, 0), ev(DetectorId::SpdD, 3)], 1.0).unwrap();
        assert_eq!(s.pairs.len(), 2);
        assert!(s.pairs.iter().all(|p| !p.is_error()));
    }

    #[test]
    fn cow_monitor_uses_coherent_pairs_only() {
        // bits: 1 | decoy | 0 ; bins: _X XX X_
        let f = SymbolFrame::new(Protocol::Cow, vec![Symbol::cow(1), Symbol::cow_decoy(), Symbol::cow(0)], DEFAULT_TAU, 0);
        let all: Vec<_> = (0..6).map(|b| ev(DetectorId::SpdMBright, b)).collect();
        let s = sift(Protocol::Cow, &f, &all, 1.0).unwrap();
        let bins: Vec<u64> = s.pairs.iter().map(|p| p.bin).collect();
        assert_eq!(bins, vec![2, 3, 4]);
        assert!(s.pairs.iter().all(|p| !p.key));
    }

    #[test]
    fn bb84_basis_mismatch_discarded() {
        let f = SymbolFrame::new(Protocol::Bb84, vec![Symbol::bb84(0, Basis::Z), Symbol::bb84(1, Basis::X)], DEFAULT_TAU, 0);
        let evs = [ev(DetectorId::SpdX0, 1), ev(DetectorId::SpdZ, 2), ev(DetectorId::SpdX1, 2), ev(DetectorId::SpdX1, 3)];
        let s = sift(Protocol::Bb84, &f, &evs, 1.0).unwrap();
        assert_eq!(s.pairs.len(), 1);
        assert_eq!((s.pairs[0].basis, s.pairs[0].alice, s.pairs[0].bob), (Basis::X, 1, 1));
    }

    #[test]
    fn dps_bits_from_detector_identity() {
        let f = SymbolFrame::new(Protocol::Dps, vec![Symbol::dps(0), Symbol::dps(1)], DEFAULT_TAU, 0);
        let s = sift(Protocol::Dps, &f, &[ev(DetectorId::Spd0, 1), ev(DetectorId::Spd1, 2), ev(DetectorId::Spd0, 3)], 1.0).unwrap();
        // bin 3 wraps to bin 0: arm 1 after the last pulse on arm 2, a phase flip.
        let errs: Vec<bool> = s.pairs.iter().map(|p| p.is_error()).collect();
        assert_eq!(errs, vec![false, false, true]);
    }

    #[test]
    fn protocol_mismatch_rejected() {
        let f = random_frame(Protocol::Dps, 4, 0.0, 0).unwrap();
        assert_eq!(sift(Protocol::Cow, &f, &[], 1.0).unwrap_err().kind(), "sift");
    }

    #[test]
    fn injected_flips_recovered() {
        let n = 100_000u64;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs = (0..n)
            .map(|i| {
                let bob = u8::from(rng.gen::<f64>() < 0.05);
                SiftedPair { bin: i, basis: Basis::Z, alice: 0, bob, key: true, origin: Origin::Signal }
            })
            .collect();
        let s = SiftResult { pairs, detections: n, duration: 1.0 };
        let st = estimate(Protocol::Bb84, &s, 0.125, 2).unwrap();
        let q = st.qber_time_sampled.unwrap();
        assert!((q.value - 0.05).abs() < 0.007, "{}", q.value);
        assert!(q.lo <= q.value && q.value <= q.hi);
        assert_eq!(st.sifted_count, n);
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(0, 100, 1.96);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!((0.5 - lo - (hi - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn dark_subtraction() {
        assert!((qber_opt(60.0, 1000.0, 50.0, 100.0).unwrap() - 10.0 / 900.0).abs() < 1e-15);
        assert!(qber_opt(1.0, 1.0, 0.5, 1.0).is_err());
    }
}
