//! Secret-key fraction from measured error rates.
//!
//! `rate = sifted_rate · max(0, 1 − f·h(Q) − leak(Q, e_phase))` with the default
//! leakage `h(e_phase)`. `e_phase` is `(1 − V)/2` for COW and the phase-basis QBER
//! for DPS and BB84. Protocol-specific security proofs can be plugged in through
//! [`PrivacyFn`].

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sift::RunStats;
use crate::waveform::Protocol;

pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-p * p.log2() - (1.0 - p) * (1.0 - p).log2())
}

fn h(p: f64) -> f64 {
    binary_entropy(p.clamp(0.0, 1.0)).unwrap_or(1.0)
}

/// Privacy-amplification leakage as a function of (Q, e_phase).
#[derive(Clone)]
pub struct PrivacyFn(pub Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>);

impl PrivacyFn {
    pub fn phase_entropy() -> Self {
        PrivacyFn(Arc::new(|_q, e| h(e.min(0.5))))
    }
}

impl fmt::Debug for PrivacyFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivacyFn")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteKey {
    pub block_size: f64,
    pub epsilon: f64,
}

impl FiniteKey {
    /// One-sided Hoeffding upper bound on an error rate.
    pub fn upper(&self, p: f64) -> f64 {
        (p + ((1.0 / self.epsilon).ln() / (2.0 * self.block_size)).sqrt()).min(0.5)
    }
}

#[derive(Debug, Clone)]
pub struct KeyRateModel {
    pub protocol: Protocol,
    pub ec_efficiency: f64,
    pub privacy: PrivacyFn,
    pub finite_key: Option<FiniteKey>,
}

impl KeyRateModel {
    pub fn new(protocol: Protocol) -> Self {
        Self { protocol, ec_efficiency: 1.2, privacy: PrivacyFn::phase_entropy(), finite_key: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ec_efficiency >= 1.0) {
            return Err(Error::Model(format!("error-correction efficiency must be >= 1, got {}", self.ec_efficiency)));
        }
        if let Some(fk) = self.finite_key {
            if !(fk.block_size > 0.0 && fk.epsilon > 0.0 && fk.epsilon < 1.0) {
                return Err(Error::Model("finite-key block size must be > 0 and epsilon in (0, 1)".into()));
            }
        }
        Ok(())
    }

    /// Fraction of sifted bits kept as secret key.
    pub fn secret_fraction(&self, q: f64, e_phase: f64) -> Result<f64> {
        self.validate()?;
        for p in [q, e_phase] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Domain(format!("error rate {p} outside [0, 1]")));
            }
        }
        let (q, e) = match self.finite_key {
            Some(fk) => (fk.upper(q), fk.upper(e_phase)),
            None => (q, e_phase),
        };
        let leak = (self.privacy.0)(q, e).clamp(0.0, 1.0);
        Ok((1.0 - self.ec_efficiency * h(q) - leak).max(0.0))
    }
}

/// (Q, e_phase) used for the key of each protocol.
pub fn error_rates(stats: &RunStats) -> Result<(f64, f64)> {
    match stats.protocol {
        Protocol::Cow => {
            if !stats.visibility.is_finite() {
                return Err(Error::Model("COW key rate needs a measured visibility".into()));
            }
            let q = stats.qber_time.map(|p| p.value).ok_or_else(|| Error::Model("missing time QBER".into()))?;
            Ok((q, ((1.0 - stats.visibility) / 2.0).clamp(0.0, 1.0)))
        }
        Protocol::Bb84 => {
            let q = stats.qber_time.map(|p| p.value).ok_or_else(|| Error::Model("missing time QBER".into()))?;
            let e = stats.qber_phase.value;
            if !e.is_finite() {
                return Err(Error::Model("missing phase QBER".into()));
            }
            Ok((q, e))
        }
        Protocol::Dps => {
            let e = stats.qber_phase.value;
            if !e.is_finite() {
                return Err(Error::Model("missing phase QBER".into()));
            }
            Ok((e, e))
        }
    }
}

pub fn secret_rate(stats: &RunStats, model: &KeyRateModel) -> Result<f64> {
    if stats.protocol != model.protocol {
        return Err(Error::Model(format!("model for {} applied to {} statistics", model.protocol, stats.protocol)));
    }
    let (q, e) = error_rates(stats)?;
    Ok(stats.sifted_rate * model.secret_fraction(q, e)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_examples() {
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert!((binary_entropy(0.5).unwrap() - 1.0).abs() < 1e-15);
        // Independent evaluation with natural logarithms.
        let p: f64 = 0.11;
        let direct = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln()) / 2f64.ln();
        assert!((binary_entropy(0.11).unwrap() - direct).abs() < 1e-15);
        assert!((binary_entropy(0.11).unwrap() - 0.499_916).abs() < 1e-6);
        assert_eq!(binary_entropy(1.5).unwrap_err().kind(), "domain");
    }

    #[test]
    fn perfect_channel_keeps_everything() {
        let m = KeyRateModel::new(Protocol::Bb84);
        assert_eq!(m.secret_fraction(0.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn threshold_near_eleven_percent() {
        let m = KeyRateModel { ec_efficiency: 1.0, ..KeyRateModel::new(Protocol::Bb84) };
        assert!(m.secret_fraction(0.11, 0.11).unwrap() < 1e-3);
        assert_eq!(m.secret_fraction(0.111, 0.111).unwrap(), 0.0);
        assert!(m.secret_fraction(0.109, 0.109).unwrap() > 0.0);
    }

    #[test]
    fn hoeffding_bound() {
        let fk = FiniteKey { block_size: 1e6, epsilon: 1e-9 };
        let u = fk.upper(0.01);
        assert!((u - 0.013219).abs() < 1e-5, "{u}");
    }

    #[test]
    fn bad_efficiency_rejected() {
        let m = KeyRateModel { ec_efficiency: 0.9, ..KeyRateModel::new(Protocol::Cow) };
        assert_eq!(m.secret_fraction(0.01, 0.01).unwrap_err().kind(), "model");
    }
}
