//! Long-run drift of the modulator bias and the laser wavelength, with an optional
//! dither-and-decide controller per tracked variable.
//!
//! Bias error on arm 1 leaks light into empty bins and raises the arrival-time
//! QBER; wavelength drift rotates the receiver interferometer phase `ϕ`, giving a
//! visibility `V₀·cos ϕ`. Each controller update measures its error signal at the
//! setting and one dither step on either side (binomial counting noise) and moves
//! to the best of the three.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ddm::{ddm_factor, ModulatorConfig};
use crate::error::{Error, Result};
use std::f64::consts::FRAC_PI_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Controller {
    Off,
    #[default]
    DitherTracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftModel {
    /// Random-walk scale of the bias voltage, V/√h.
    pub bias_drift: f64,
    /// Random-walk scale of the interferometer phase, rad/√h.
    pub wavelength_drift: f64,
    pub controller: Controller,
    /// Dither step of the bias voltage, V.
    pub bias_step: f64,
    /// Dither step of the wavelength setting, in interferometer phase, rad.
    pub wavelength_step: f64,
    /// Controller update interval, seconds.
    pub update_interval: f64,
    pub hours: f64,
    /// Sifted key bits per second feeding the QBER measurement.
    pub key_rate: f64,
    /// Monitor clicks per second in coherent-pair bins.
    pub monitor_rate: f64,
    /// Time-basis QBER not caused by the modulator (detector noise, jitter).
    pub qber_floor: f64,
    /// Visibility at zero interferometer phase error.
    pub visibility: f64,
    pub modulator: ModulatorConfig,
}

impl Default for DriftModel {
    fn default() -> Self {
        Self {
            bias_drift: 0.5,
            wavelength_drift: 0.5,
            controller: Controller::DitherTracking,
            bias_step: 0.1,
            wavelength_step: 0.1,
            update_interval: 60.0,
            hours: 40.0,
            key_rate: 20_000.0,
            monitor_rate: 5_000.0,
            qber_floor: 0.009,
            visibility: 0.97,
            modulator: ModulatorConfig { extinction_db: Some(27.0), ..ModulatorConfig::default() },
        }
    }
}

impl DriftModel {
    pub fn validate(&self) -> Result<()> {
        let v = [
            self.bias_drift,
            self.wavelength_drift,
            self.bias_step,
            self.wavelength_step,
            self.key_rate,
            self.monitor_rate,
            self.qber_floor,
        ];
        if v.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::Config("drift scales, steps and rates must be >= 0".into()));
        }
        if !(self.update_interval > 0.0 && self.hours > 0.0) {
            return Err(Error::Config("update interval and run length must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(Error::Config("visibility must lie in [0, 1]".into()));
        }
        self.modulator.validate()
    }

    /// Arrival-time QBER for a bias error of `volts` on arm 1.
    pub fn qber_time(&self, volts: f64) -> f64 {
        let cfg = ModulatorConfig { theta1: self.modulator.theta1 + self.modulator.phase_of(volts), ..self.modulator };
        let empty = ddm_factor(0.0, 0.0, &cfg).norm_sqr();
        let full = ddm_factor(FRAC_PI_2, -FRAC_PI_2, &cfg).norm_sqr();
        let leak = self.modulator.leakage_ratio() + empty / full;
        (self.qber_floor + leak / (1.0 + leak)).min(0.5)
    }

    pub fn visibility_at(&self, phase: f64) -> f64 {
        self.visibility * phase.cos()
    }

    pub fn qber_phase(&self, phase: f64) -> f64 {
        (1.0 - self.visibility_at(phase)) / 2.0
    }

    /// QBER with both variables at their optimum.
    pub fn optimum_qber(&self) -> f64 {
        self.qber_time(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityPoint {
    pub t_hours: f64,
    /// Measured arrival-time QBER over the interval.
    pub qber: f64,
    /// Measured visibility over the interval.
    pub visibility: f64,
    pub bias_setting: f64,
    pub wavelength_setting: f64,
    pub bias_error: f64,
    pub phase_error: f64,
}

fn measure(rng: &mut ChaCha8Rng, p: f64, n: u64) -> f64 {
    if n == 0 {
        return p;
    }
    let k = Binomial::new(n, p.clamp(0.0, 1.0)).expect("valid binomial").sample(rng);
    k as f64 / n as f64
}

/// Moves `setting` to whichever of setting − step, setting, setting + step gives
/// the lowest measured error.
fn dither(rng: &mut ChaCha8Rng, setting: f64, step: f64, n: u64, err: impl Fn(f64) -> f64) -> f64 {
    let candidates = [setting, setting - step, setting + step];
    let mut best = (f64::INFINITY, setting);
    for c in candidates {
        let m = measure(rng, err(c), n);
        if m < best.0 {
            best = (m, c);
        }
    }
    best.1
}

pub fn run_stability(model: &DriftModel, seed: u64) -> Result<Vec<StabilityPoint>> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt_h = model.update_interval / 3600.0;
    let steps = (model.hours / dt_h).round() as usize;
    let walk = Normal::new(0.0, dt_h.sqrt()).expect("finite step");
    let dwell = model.update_interval / 3.0;
    let n_key = (model.key_rate * dwell).round() as u64;
    let n_mon = (model.monitor_rate * dwell).round() as u64;
    let (mut bias_drift, mut phase_drift) = (0.0, 0.0);
    let (mut bias_set, mut phase_set) = (0.0, 0.0);
    let mut out = Vec::with_capacity(steps);
    for i in 1..=steps {
        bias_drift += model.bias_drift * walk.sample(&mut rng);
        phase_drift += model.wavelength_drift * walk.sample(&mut rng);
        if model.controller == Controller::DitherTracking {
            bias_set = dither(&mut rng, bias_set, model.bias_step, n_key, |s| model.qber_time(bias_drift - s));
            phase_set = dither(&mut rng, phase_set, model.wavelength_step, n_mon, |s| model.qber_phase(phase_drift - s));
        }
        let (be, pe) = (bias_drift - bias_set, phase_drift - phase_set);
        let qber = measure(&mut rng, model.qber_time(be), 3 * n_key);
        let visibility = 1.0 - 2.0 * measure(&mut rng, model.qber_phase(pe), 3 * n_mon);
        out.push(StabilityPoint {
            t_hours: i as f64 * dt_h,
            qber,
            visibility,
            bias_setting: bias_set,
            wavelength_setting: phase_set,
            bias_error: be,
            phase_error: pe,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimum_is_at_zero_bias_error() {
        let m = DriftModel::default();
        let q0 = m.optimum_qber();
        assert!(m.qber_time(0.2) > q0 && m.qber_time(-0.2) > q0);
        let r = 10f64.powf(-2.7);
        assert!((q0 - (m.qber_floor + r / (1.0 + r))).abs() < 1e-12);
    }

    #[test]
    fn zero_drift_stays_within_one_step() {
        let m = DriftModel { bias_drift: 0.0, wavelength_drift: 0.0, hours: 10.0, ..Default::default() };
        let pts = run_stability(&m, 4).unwrap();
        assert!(pts.iter().all(|p| p.bias_setting.abs() <= m.bias_step + 1e-12));
        assert!(pts.iter().all(|p| p.wavelength_setting.abs() <= m.wavelength_step + 1e-12));
    }

    #[test]
    fn reproducible() {
        let m = DriftModel { hours: 2.0, ..Default::default() };
        assert_eq!(run_stability(&m, 9).unwrap(), run_stability(&m, 9).unwrap());
    }
}
