use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Mode count, detection efficiency and mean photoelectrons per beam.
///
/// Everything else (mean photon number, twin-beam gain) is derived on demand
/// so the three stored numbers stay the single source of truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ExperimentParams {
    mu: f64,
    eta: f64,
    mean: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct RawParams {
    mu: f64,
    eta: f64,
    mean: f64,
}

impl TryFrom<RawParams> for ExperimentParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ExperimentParams::new(raw.mu, raw.eta, raw.mean)
    }
}

impl From<ExperimentParams> for RawParams {
    fn from(p: ExperimentParams) -> Self {
        RawParams { mu: p.mu, eta: p.eta, mean: p.mean }
    }
}

impl ExperimentParams {
    /// Validates `mu >= 1`, `0 < eta < 1` and `mean >= 0`.
    pub fn new(mu: f64, eta: f64, mean: f64) -> Result<Self> {
        if !mu.is_finite() || mu < 1.0 {
            return Err(invalid(format!("mode count must be finite and >= 1, got {mu}")));
        }
        if !eta.is_finite() || eta <= 0.0 || eta >= 1.0 {
            return Err(invalid(format!("detection efficiency must lie in (0, 1), got {eta}")));
        }
        if !mean.is_finite() || mean < 0.0 {
            return Err(invalid(format!("mean photoelectron number must be finite and >= 0, got {mean}")));
        }
        Ok(ExperimentParams { mu, eta, mean })
    }

    /// Number of modes per beam.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Detection efficiency.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Mean number of photoelectrons per beam, `M = eta * N`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Mean number of photons per beam, `N = M / eta`.
    pub fn photons(&self) -> f64 {
        self.mean / self.eta
    }

    /// Per-mode twin-beam gain `lambda^2 = N / (mu + N)`.
    pub fn lambda_sq(&self) -> f64 {
        self.mean / (self.mean + self.mu * self.eta)
    }

    /// Mean photons per mode.
    pub fn photons_per_mode(&self) -> f64 {
        self.photons() / self.mu
    }

    /// `mu` as an integer, if it is one.
    pub fn integer_modes(&self) -> Option<u32> {
        if self.mu.fract() == 0.0 && self.mu <= u32::MAX as f64 {
            Some(self.mu as u32)
        } else {
            None
        }
    }

    pub fn with_mean(&self, mean: f64) -> Result<Self> {
        Self::new(self.mu, self.eta, mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_quantities() {
        let p = ExperimentParams::new(197.0, 0.06, 13.4).unwrap();
        assert!((p.photons() - 13.4 / 0.06).abs() < 1e-12);
        let n = p.photons();
        assert!((p.lambda_sq() - n / (197.0 + n)).abs() < 1e-15);
        assert_eq!(p.integer_modes(), Some(197));
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(ExperimentParams::new(0.5, 0.1, 1.0).is_err());
        assert!(ExperimentParams::new(1.0, 1.0, 1.0).is_err());
        assert!(ExperimentParams::new(1.0, 0.0, 1.0).is_err());
        assert!(ExperimentParams::new(1.0, 0.5, -1.0).is_err());
        assert!(ExperimentParams::new(f64::NAN, 0.5, 1.0).is_err());
    }

    #[test]
    fn json_goes_through_validation() {
        let ok: ExperimentParams = serde_json::from_str(r#"{"mu":25,"eta":0.056,"mean":17.1}"#).unwrap();
        assert_eq!(ok.mu(), 25.0);
        assert!(serde_json::from_str::<ExperimentParams>(r#"{"mu":25,"eta":1.5,"mean":1}"#).is_err());
    }
}
