//! Photon-number bookkeeping between transmitter and receiver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferencePlane {
    Transmitter,
    #[default]
    Receiver,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuTarget {
    /// Mean photons per unit (qubit for COW and BB84, pulse for DPS).
    pub mu: f64,
    pub plane: ReferencePlane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub fiber_length: f64,
    /// dB per km.
    pub loss_coeff: f64,
    /// Additional lumped loss, dB.
    pub extra_loss: f64,
    pub mu_target: MuTarget,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            fiber_length: 0.0,
            loss_coeff: 0.2,
            extra_loss: 0.0,
            mu_target: MuTarget { mu: 0.1, plane: ReferencePlane::Receiver },
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.loss_coeff >= 0.0) || !(self.fiber_length >= 0.0) || !(self.extra_loss >= 0.0) {
            return Err(Error::Config("fiber length and losses must be >= 0".into()));
        }
        if !(self.mu_target.mu > 0.0) {
            return Err(Error::Config(format!("mu target must be > 0, got {}", self.mu_target.mu)));
        }
        Ok(())
    }

    pub fn loss_db(&self) -> f64 {
        km_to_db(self.fiber_length, self.loss_coeff) + self.extra_loss
    }

    /// Power transmission of the channel.
    pub fn transmission(&self) -> f64 {
        10f64.powf(-self.loss_db() / 10.0)
    }
}

pub fn attenuate(mu_in: f64, loss_db: f64) -> Result<f64> {
    if !(loss_db >= 0.0) {
        return Err(Error::Config(format!("loss must be >= 0 dB, got {loss_db}")));
    }
    if !(mu_in >= 0.0) {
        return Err(Error::Config(format!("photon number must be >= 0, got {mu_in}")));
    }
    Ok(mu_in * 10f64.powf(-loss_db / 10.0))
}

pub fn km_to_db(km: f64, loss_coeff: f64) -> f64 {
    km * loss_coeff
}

pub fn db_to_km(db: f64, loss_coeff: f64) -> f64 {
    db / loss_coeff
}

/// Factor on `alpha_ref` that sets the mean photon number per unit to the target.
///
/// `energy` is the total field energy of the frame, `units` the number of qubits
/// (COW, BB84) or pulses (DPS) it carries.
pub fn calibrate_voa(energy: f64, alpha_ref: f64, units: usize, channel: &ChannelConfig) -> Result<f64> {
    channel.validate()?;
    if !(energy > 0.0) || units == 0 || !(alpha_ref > 0.0) {
        return Err(Error::Calibration("cannot calibrate a frame without light".into()));
    }
    let mut mu_now = alpha_ref * energy / units as f64;
    if channel.mu_target.plane == ReferencePlane::Receiver {
        mu_now *= channel.transmission();
    }
    Ok(channel.mu_target.mu / mu_now)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attenuate_examples() {
        assert_eq!(attenuate(0.3, 0.0).unwrap(), 0.3);
        assert!((attenuate(1.0, 10.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((attenuate(1.0, 3.0).unwrap() - 0.501_187).abs() < 1e-6);
        assert_eq!(attenuate(1.0, -1.0).unwrap_err().kind(), "config");
        assert!((km_to_db(50.0, 0.2) - 10.0).abs() < 1e-12);
    }

    fn channel(mu: f64, plane: ReferencePlane, km: f64) -> ChannelConfig {
        ChannelConfig { fiber_length: km, mu_target: MuTarget { mu, plane }, ..Default::default() }
    }

    #[test]
    fn voa_linearity() {
        let c = channel(2.0, ReferencePlane::Transmitter, 0.0);
        assert!((calibrate_voa(20.0, 1.0, 10, &c).unwrap() - 1.0).abs() < 1e-15);
        let half = channel(1.0, ReferencePlane::Transmitter, 0.0);
        assert!((calibrate_voa(20.0, 1.0, 10, &half).unwrap() - 0.5).abs() < 1e-15);
        let rx = channel(1.0, ReferencePlane::Receiver, 50.0);
        assert!((calibrate_voa(20.0, 1.0, 10, &rx).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(calibrate_voa(0.0, 1.0, 10, &c).unwrap_err().kind(), "calibration");
    }
}
