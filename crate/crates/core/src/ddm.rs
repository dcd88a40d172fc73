//! Dual-drive modulator (DDM) field model.
//!
//! A DDM is an integrated Mach-Zehnder interferometer with one phase modulator in
//! each arm. A CW input of amplitude α leaves the device as
//!
//! ```text
//! α · (e^{i(θ₁+φ₁)} + e^{i(θ₂+φ₂)}) / 2
//! ```
//!
//! where θᵢ are the DC bias phases and φᵢ the RF drive phases. All fields in this
//! crate are expressed in units of α, so a fully open modulator gives magnitude 1.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static modulator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModulatorConfig {
    /// Voltage producing a π phase shift in one arm.
    pub v_pi: f64,
    /// DC bias phase of arm 1 (radians).
    pub theta1: f64,
    /// DC bias phase of arm 2 (radians).
    pub theta2: f64,
    /// Time step of sampled waveforms (seconds).
    pub sample_period: f64,
    /// Finite extinction between an occupied and a nominally empty time bin (dB).
    /// `None` means ideal extinction.
    pub extinction_db: Option<f64>,
}

impl Default for ModulatorConfig {
    fn default() -> Self {
        Self {
            v_pi: 5.0,
            theta1: 0.0,
            theta2: PI,
            sample_period: 10e-12,
            extinction_db: None,
        }
    }
}

impl ModulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_pi > 0.0 && self.v_pi.is_finite()) {
            return Err(Error::Config(format!("v_pi must be > 0, got {}", self.v_pi)));
        }
        if !(self.sample_period > 0.0 && self.sample_period.is_finite()) {
            return Err(Error::Config(format!(
                "sample_period must be > 0, got {}",
                self.sample_period
            )));
        }
        if let Some(er) = self.extinction_db {
            if !(er > 0.0) {
                return Err(Error::Config(format!("extinction_db must be > 0, got {er}")));
            }
        }
        Ok(())
    }

    /// Phase shift produced by `volts` on one arm.
    pub fn phase_of(&self, volts: f64) -> f64 {
        PI * volts / self.v_pi
    }

    /// Sets the bias phases from DC voltages.
    pub fn with_bias_voltages(mut self, v_dc1: f64, v_dc2: f64) -> Self {
        self.theta1 = self.phase_of(v_dc1);
        self.theta2 = self.phase_of(v_dc2);
        self
    }

    /// Ratio of empty-bin to occupied-bin energy implied by `extinction_db`.
    pub fn leakage_ratio(&self) -> f64 {
        self.extinction_db.map_or(0.0, |er| 10f64.powf(-er / 10.0))
    }
}

/// Complex transmission factor of the modulator for drive phases `phi1`, `phi2`.
pub fn ddm_factor(phi1: f64, phi2: f64, cfg: &ModulatorConfig) -> Complex64 {
    (Complex64::cis(cfg.theta1 + phi1) + Complex64::cis(cfg.theta2 + phi2)) * 0.5
}

/// A source of per-sample drive phases on a uniform grid.
pub trait PhaseDrive {
    fn sample_period(&self) -> f64;
    fn len(&self) -> usize;
    /// Drive phases `(φ₁, φ₂)` of sample `i`.
    fn phases(&self, i: usize) -> (f64, f64);
    /// Checks that both arms share one grid.
    fn check_grid(&self) -> Result<()> {
        Ok(())
    }
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Explicitly sampled drive phases.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledDrive {
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub sample_period: f64,
}

impl SampledDrive {
    pub fn new(phi1: Vec<f64>, phi2: Vec<f64>, sample_period: f64) -> Result<Self> {
        let drive = Self { phi1, phi2, sample_period };
        drive.check_grid()?;
        Ok(drive)
    }
}

impl PhaseDrive for SampledDrive {
    fn sample_period(&self) -> f64 {
        self.sample_period
    }
    fn len(&self) -> usize {
        self.phi1.len()
    }
    fn phases(&self, i: usize) -> (f64, f64) {
        (self.phi1[i], self.phi2[i])
    }
    fn check_grid(&self) -> Result<()> {
        if self.phi1.len() != self.phi2.len() {
            return Err(Error::Config(format!(
                "arm grids differ: {} vs {} samples",
                self.phi1.len(),
                self.phi2.len()
            )));
        }
        if !(self.sample_period > 0.0) {
            return Err(Error::Config("sample_period must be > 0".into()));
        }
        Ok(())
    }
}

/// Push-pull sinusoidal drive at `freq` whose field swings between the off state
/// and full transmission: φ₁ = −φ₂ = (π/4)(1 + sin 2πft).
pub fn sine_drive(freq: f64, duration: f64, sample_period: f64) -> Result<SampledDrive> {
    if !(freq > 0.0) || !(duration > 0.0) {
        return Err(Error::Config("sine drive needs positive frequency and duration".into()));
    }
    let n = (duration / sample_period).round() as usize;
    let phi1: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 * sample_period;
            0.25 * PI * (1.0 + (2.0 * PI * freq * t).sin())
        })
        .collect();
    let phi2 = phi1.iter().map(|p| -p).collect();
    SampledDrive::new(phi1, phi2, sample_period)
}

/// Uniformly sampled optical field envelope in units of the CW amplitude α.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrain {
    pub samples: Vec<Complex64>,
    pub sample_period: f64,
    /// Photon number carried by one unit of field energy (|E|² integrated over
    /// one second). A train of energy `E` carries `alpha_ref · E` photons.
    pub alpha_ref: f64,
}

impl FieldTrain {
    pub fn new(samples: Vec<Complex64>, sample_period: f64) -> Self {
        Self { samples, sample_period, alpha_ref: 1.0 }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.sample_period
    }

    /// Σ |E|² · dt.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() * self.sample_period
    }

    /// Energy of samples `[start, end)`.
    pub fn energy_in(&self, start: usize, end: usize) -> f64 {
        let end = end.min(self.samples.len());
        if start >= end {
            return 0.0;
        }
        self.samples[start..end].iter().map(|s| s.norm_sqr()).sum::<f64>() * self.sample_period
    }

    pub fn photons(&self) -> f64 {
        self.alpha_ref * self.energy()
    }

    pub fn max_amplitude(&self) -> f64 {
        self.samples.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }
}

/// Applies the modulator transfer function sample by sample.
pub fn carve_train<D: PhaseDrive + ?Sized>(drive: &D, cfg: &ModulatorConfig) -> Result<FieldTrain> {
    drive.check_grid()?;
    let samples = (0..drive.len())
        .map(|i| {
            let (p1, p2) = drive.phases(i);
            ddm_factor(p1, p2, cfg)
        })
        .collect();
    Ok(FieldTrain::new(samples, drive.sample_period()))
}

/// Ordered field points along one pulse edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<Complex64>,
}

impl Trajectory {
    pub fn from_points(points: Vec<Complex64>) -> Self {
        Self { points }
    }

    /// Field points for a drive phase ramp applied to one arm while the other stays at zero.
    pub fn from_ramp(ramp: &[f64], arm: Arm, cfg: &ModulatorConfig) -> Self {
        let points = ramp
            .iter()
            .map(|&p| match arm {
                Arm::One => ddm_factor(p, 0.0, cfg),
                Arm::Two => ddm_factor(0.0, p, cfg),
            })
            .collect();
        Self { points }
    }

    /// Samples from the first non-zero sample up to the first amplitude maximum.
    pub fn rising_edge(train: &FieldTrain) -> Self {
        let s = &train.samples;
        let Some(start) = s.iter().position(|z| z.norm() > 1e-9) else {
            return Self { points: Vec::new() };
        };
        let mut end = start + 1;
        while end < s.len() && s[end].norm() >= s[end - 1].norm() {
            end += 1;
        }
        // Include the zero sample preceding the edge so the trace starts at the origin.
        let from = start.saturating_sub(1);
        Self { points: s[from..end].to_vec() }
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.norm()).collect()
    }

    pub fn phases(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.arg()).collect()
    }

    /// Field point at amplitude `a`, interpolated on the first crossing.
    fn point_at_amplitude(&self, a: f64) -> Option<Complex64> {
        let amps = self.amplitudes();
        for i in 1..amps.len() {
            let (lo, hi) = (amps[i - 1], amps[i]);
            if (lo <= a && a <= hi) || (hi <= a && a <= lo) {
                if hi == lo {
                    return Some(self.points[i]);
                }
                let w = (a - lo) / (hi - lo);
                return Some(self.points[i - 1] * (1.0 - w) + self.points[i] * w);
            }
        }
        if amps.len() == 1 && amps[0] == a {
            return Some(self.points[0]);
        }
        None
    }

    fn amplitude_range(&self) -> Option<(f64, f64)> {
        let amps = self.amplitudes();
        let min = amps.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = amps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (min <= max).then_some((min, max))
    }
}

/// Modulator arm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    One,
    Two,
}

impl Arm {
    pub fn other(self) -> Self {
        match self {
            Arm::One => Arm::Two,
            Arm::Two => Arm::One,
        }
    }
}

/// Phase difference between two pulse edges as a function of field amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDiffCurve {
    /// `(amplitude, Δφ)` pairs, Δφ unwrapped around the first value.
    pub points: Vec<(f64, f64)>,
    /// max Δφ − min Δφ over the compared range.
    pub spread: f64,
}

impl PhaseDiffCurve {
    pub fn mean(&self) -> f64 {
        self.points.iter().map(|p| p.1).sum::<f64>() / self.points.len() as f64
    }
}

const PHASE_DIFF_LEVELS: usize = 256;

/// Compares two edges point by point at common field amplitudes.
///
/// Amplitudes below 10⁻⁶ of the common maximum are skipped because the phase is
/// undefined at the origin.
pub fn phase_diff_vs_amplitude(a: &Trajectory, b: &Trajectory) -> Result<PhaseDiffCurve> {
    let (Some((a_min, a_max)), Some((b_min, b_max))) = (a.amplitude_range(), b.amplitude_range())
    else {
        return Err(Error::Analysis("empty trajectory".into()));
    };
    let lo = a_min.max(b_min);
    let hi = a_max.min(b_max);
    if lo > hi {
        return Err(Error::Analysis(format!(
            "disjoint amplitude ranges [{a_min}, {a_max}] and [{b_min}, {b_max}]"
        )));
    }
    let floor = lo.max(hi * 1e-6);
    let mut points = Vec::with_capacity(PHASE_DIFF_LEVELS);
    let mut reference: Option<f64> = None;
    for k in 0..PHASE_DIFF_LEVELS {
        let level = if PHASE_DIFF_LEVELS == 1 || hi == floor {
            hi
        } else {
            floor + (hi - floor) * k as f64 / (PHASE_DIFF_LEVELS - 1) as f64
        };
        let (Some(pa), Some(pb)) = (a.point_at_amplitude(level), b.point_at_amplitude(level)) else {
            continue;
        };
        if pa.norm() == 0.0 || pb.norm() == 0.0 {
            continue;
        }
        let mut d = (pa * pb.conj()).arg();
        match reference {
            None => reference = Some(d),
            Some(r) => {
                while d - r > PI {
                    d -= 2.0 * PI;
                }
                while d - r < -PI {
                    d += 2.0 * PI;
                }
            }
        }
        points.push((level, d));
    }
    if points.is_empty() {
        return Err(Error::Analysis("no common non-zero amplitude level".into()));
    }
    let min = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(PhaseDiffCurve { points, spread: max - min })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn factor_examples() {
        let cfg = ModulatorConfig::default();
        assert!(close(ddm_factor(0.0, 0.0, &cfg), Complex64::new(0.0, 0.0)));
        assert!(close(ddm_factor(FRAC_PI_2, -FRAC_PI_2, &cfg), Complex64::i()));
        let half = ddm_factor(FRAC_PI_2, 0.0, &cfg);
        assert!(close(half, Complex64::new(-0.5, 0.5)));
        assert!((half.norm() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn general_bias_matches_default_form() {
        let cfg = ModulatorConfig::default();
        for &(p1, p2) in &[(0.3, -1.2), (2.0, 0.5), (-3.0, 3.0)] {
            let direct = (Complex64::cis(p1) - Complex64::cis(p2)) * 0.5;
            assert!(close(ddm_factor(p1, p2, &cfg), direct));
        }
    }

    #[test]
    fn zero_drive_carves_nothing() {
        let cfg = ModulatorConfig::default();
        let drive = SampledDrive::new(vec![0.0; 50], vec![0.0; 50], cfg.sample_period).unwrap();
        let train = carve_train(&drive, &cfg).unwrap();
        assert!(train.energy() < 1e-40);
    }

    #[test]
    fn push_pull_rectangle_has_unit_magnitude() {
        let cfg = ModulatorConfig::default();
        let mut p1 = vec![0.0; 30];
        let mut p2 = vec![0.0; 30];
        for i in 10..20 {
            p1[i] = FRAC_PI_2;
            p2[i] = -FRAC_PI_2;
        }
        let train = carve_train(&SampledDrive::new(p1, p2, 1e-11).unwrap(), &cfg).unwrap();
        for (i, s) in train.samples.iter().enumerate() {
            let expect = if (10..20).contains(&i) { 1.0 } else { 0.0 };
            assert!((s.norm() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_grids_rejected() {
        let err = SampledDrive::new(vec![0.0; 3], vec![0.0; 4], 1e-11).unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn single_arm_ramp_traces_arc() {
        let cfg = ModulatorConfig::default();
        let ramp: Vec<f64> = (0..=100).map(|i| PI * i as f64 / 100.0).collect();
        let traj = Trajectory::from_ramp(&ramp, Arm::One, &cfg);
        // (e^{iφ} − 1)/2 lies on the circle of radius 1/2 centred at −1/2.
        for p in &traj.points {
            assert!(((p + Complex64::new(0.5, 0.0)).norm() - 0.5).abs() < 1e-12);
        }
        let amps = traj.amplitudes();
        assert!(amps.windows(2).all(|w| w[1] >= w[0]));
        assert!((amps.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn arms_give_constant_pi_difference() {
        let cfg = ModulatorConfig::default();
        let ramp: Vec<f64> = (0..=80).map(|i| PI * (i as f64 / 80.0).powf(1.7)).collect();
        let a = Trajectory::from_ramp(&ramp, Arm::One, &cfg);
        let b = Trajectory::from_ramp(&ramp, Arm::Two, &cfg);
        let curve = phase_diff_vs_amplitude(&a, &b).unwrap();
        assert!(curve.spread < 1e-9);
        assert!((curve.mean().abs() - PI).abs() < 1e-9);
        let same = phase_diff_vs_amplitude(&a, &a).unwrap();
        assert!(same.spread < 1e-12 && same.mean().abs() < 1e-12);
    }

    #[test]
    fn sigma_y_attempt_is_chirped() {
        let cfg = ModulatorConfig::default();
        let ramp: Vec<f64> = (0..=80).map(|i| FRAC_PI_2 * i as f64 / 80.0).collect();
        let neg: Vec<f64> = ramp.iter().map(|p| -p).collect();
        let a = Trajectory::from_ramp(&ramp, Arm::One, &cfg);
        let c = Trajectory::from_ramp(&neg, Arm::Two, &cfg);
        assert!(phase_diff_vs_amplitude(&a, &c).unwrap().spread > 0.1);
    }

    #[test]
    fn disjoint_ranges_error() {
        let a = Trajectory::from_points(vec![Complex64::new(0.1, 0.0), Complex64::new(0.2, 0.0)]);
        let b = Trajectory::from_points(vec![Complex64::new(0.5, 0.0), Complex64::new(0.9, 0.0)]);
        assert_eq!(phase_diff_vs_amplitude(&a, &b).unwrap_err().kind(), "analysis");
    }

    #[test]
    fn rising_edge_extraction() {
        let cfg = ModulatorConfig::default();
        let mut p1 = vec![0.0; 20];
        for (i, p) in p1.iter_mut().enumerate().skip(5).take(6) {
            *p = PI * ((i - 4) as f64 / 6.0).min(1.0);
        }
        let train = carve_train(&SampledDrive::new(p1, vec![0.0; 20], 1e-11).unwrap(), &cfg).unwrap();
        let edge = Trajectory::rising_edge(&train);
        let amps = edge.amplitudes();
        assert!(amps[0] < 1e-12);
        assert!(amps.windows(2).all(|w| w[1] >= w[0]));
        assert!((amps.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_bad_config() {
        let mut cfg = ModulatorConfig::default();
        cfg.v_pi = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = ModulatorConfig { sample_period: -1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
