//! Recovery of measured quantities from timestamp data.

mod correlation;
mod jumps;

pub use correlation::{
    correlate, correlate_train, fit_correlation, model_counts, CorrelationFit, CorrelationHistogram, TriggerTrain,
};
pub use jumps::{detect_jumps, JumpDetector, JumpParams, JumpRecord};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpFit {
    pub tau: f64,
    pub tau_stderr: f64,
    pub n_samples: usize,
}

impl ExpFit {
    pub fn rate(&self) -> f64 {
        1.0 / self.tau
    }
}

/// Maximum-likelihood exponential fit: the mean duration, with standard error
/// `tau / sqrt(n)`.
pub fn fit_exponential(durations: &[f64]) -> Result<ExpFit> {
    if durations.len() < 2 {
        return Err(Error::InsufficientData(format!("{} durations, need at least 2", durations.len())));
    }
    if durations.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::param("durations", "must be finite and > 0"));
    }
    let n = durations.len();
    let tau = durations.iter().sum::<f64>() / n as f64;
    Ok(ExpFit { tau, tau_stderr: tau / (n as f64).sqrt(), n_samples: n })
}

/// `1/tau_on - 1/tau_off` with first-order error propagation.
pub fn absorption_rate(fit_on: &ExpFit, fit_off: &ExpFit) -> (f64, f64) {
    let rate = 1.0 / fit_on.tau - 1.0 / fit_off.tau;
    let a = fit_on.tau_stderr / (fit_on.tau * fit_on.tau);
    let b = fit_off.tau_stderr / (fit_off.tau * fit_off.tau);
    (rate, (a * a + b * b).sqrt())
}

pub fn absorption_probability(rate: f64, incident_rate: f64) -> Result<f64> {
    if !(incident_rate > 0.0) || !incident_rate.is_finite() {
        return Err(Error::param("incident_rate", "must be > 0"));
    }
    Ok(rate / incident_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_durations() {
        let f = fit_exponential(&[0.3; 10]).unwrap();
        assert!((f.tau - 0.3).abs() < 1e-15);
        assert!((f.tau_stderr - 0.3 / 10f64.sqrt()).abs() < 1e-15);
        assert!(fit_exponential(&[]).is_err());
    }

    #[test]
    fn absorption_numbers() {
        let on = ExpFit { tau: 0.247, tau_stderr: 0.006, n_samples: 1 };
        let off = ExpFit { tau: 1.022, tau_stderr: 0.033, n_samples: 1 };
        let (r, _) = absorption_rate(&on, &off);
        assert!((r - 3.07).abs() < 0.005);
        assert_eq!(absorption_rate(&on, &on).0, 0.0);
        assert!((absorption_probability(3.0, 12e3).unwrap() - 2.5e-4).abs() < 1e-15);
        assert_eq!(absorption_probability(0.0, 12e3).unwrap(), 0.0);
        assert!(absorption_probability(1.0, 0.0).is_err());
    }
}
