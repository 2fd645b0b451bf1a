use std::cell::Cell;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;

use super::observables::{pumping_rate, ratio_393_397, steady_state};
use super::{presets, BlochConfig};
use crate::atom::{two_pi_mhz, Line};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationOptions {
    /// Starting point: Rabi frequencies (397, 866, 850, 854) and detunings
    /// (397, 866), MHz. The 854 nm Rabi frequency is held fixed.
    pub start_mhz: [f64; 6],
    pub max_rabi_mhz: f64,
    pub max_detuning_mhz: f64,
    /// Lower bound on the pumping rate into D5/2 at full 850 nm power, s^-1.
    pub min_pump_rate: f64,
    pub max_iters: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            start_mhz: presets::CALIBRATED_MHZ,
            max_rabi_mhz: 300.0,
            max_detuning_mhz: 60.0,
            min_pump_rate: 1.3e6,
            max_iters: 400,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CalibrationResult {
    pub config: BlochConfig,
    pub params_mhz: [f64; 6],
    /// Stationary `R393 / R397` with all lasers on.
    pub ratio: f64,
    /// The same with the 866 nm laser removed.
    pub ratio_without_866: f64,
    pub pump_rate: f64,
    pub evaluations: u64,
}

struct Problem<'a> {
    base: &'a BlochConfig,
    opts: &'a CalibrationOptions,
    evaluations: Cell<u64>,
}

impl Problem<'_> {
    fn params(&self, x: &[f64]) -> [f64; 6] {
        let mut p = [0.0; 6];
        for i in 0..3 {
            p[i] = x[i].exp().clamp(1e-3, self.opts.max_rabi_mhz);
        }
        p[3] = self.opts.start_mhz[3];
        for i in 3..5 {
            p[i + 1] = x[i].clamp(-self.opts.max_detuning_mhz, self.opts.max_detuning_mhz);
        }
        p
    }

    fn config(&self, p: [f64; 6]) -> BlochConfig {
        let mut cfg = self.base.clone();
        cfg.lasers = presets::from_mhz(p);
        cfg
    }

    fn objective(&self, x: &[f64]) -> Result<f64> {
        self.evaluations.set(self.evaluations.get() + 1);
        let p = self.params(x);
        let cfg = self.config(p);
        let ratio = ratio_393_397(&cfg, &steady_state(&cfg)?);
        let pump = pumping_rate(&cfg)?;
        let short = (1.0 - pump / self.opts.min_pump_rate).max(0.0);
        // detuning of the 850 nm laser must also respect the bound
        let d850 = (p[5] - p[4]).abs();
        let over = (d850 / self.opts.max_detuning_mhz - 1.0).max(0.0);
        Ok(-ratio + 100.0 * short * short + 100.0 * over * over)
    }
}

impl CostFunction for &Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.objective(x).unwrap_or(f64::INFINITY))
    }
}

/// Searches Rabi frequencies and detunings under three-photon resonance for
/// the largest stationary `R393 / R397`, subject to a minimum pumping rate.
///
/// `base` supplies the atom and field; its lasers are replaced.
pub fn calibrate_three_photon(base: &BlochConfig, opts: &CalibrationOptions) -> Result<CalibrationResult> {
    if !(opts.max_rabi_mhz > 0.0 && opts.max_detuning_mhz > 0.0 && opts.min_pump_rate >= 0.0) {
        return Err(Error::param("calibration", "bounds must be positive"));
    }
    let problem = Problem { base, opts, evaluations: Cell::new(0) };
    let s = opts.start_mhz;
    let x0 = vec![s[0].ln(), s[1].ln(), s[2].ln(), s[4], s[5]];
    let start_cost = problem.objective(&x0)?;
    let mut simplex = vec![x0.clone()];
    for i in 0..x0.len() {
        let mut v = x0.clone();
        v[i] += if i < 3 { 0.2 } else { 5.0 };
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-6).map_err(|e| Error::Numeric(e.to_string()))?;
    let res = Executor::new(&problem, solver)
        .configure(|st| st.max_iters(opts.max_iters))
        .run()
        .map_err(|e| Error::Numeric(e.to_string()))?;
    let state = res.state();
    let best = state.get_best_param().cloned().unwrap_or(x0);
    if state.get_best_cost() > start_cost {
        return Err(Error::Numeric("calibration did not improve on the start".into()));
    }
    let params_mhz = problem.params(&best);
    let config = problem.config(params_mhz);
    let ratio = ratio_393_397(&config, &steady_state(&config)?);
    let off = config.without(&[Line::L866]);
    let ratio_without_866 = ratio_393_397(&off, &steady_state(&off)?);
    let pump_rate = pumping_rate(&config)?;
    debug_assert!(config
        .laser(Line::L850)
        .is_some_and(|l| l.rabi_frequency <= two_pi_mhz(opts.max_rabi_mhz) * 1.000001));
    Ok(CalibrationResult {
        config,
        params_mhz,
        ratio,
        ratio_without_866,
        pump_rate,
        evaluations: problem.evaluations.get(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_search_does_not_lose_ground() {
        let base = presets::calibrated();
        let opts = CalibrationOptions { max_iters: 5, ..Default::default() };
        let r = calibrate_three_photon(&base, &opts).unwrap();
        let start = ratio_393_397(&base, &steady_state(&base).unwrap());
        assert!(r.ratio >= start * 0.999 || r.pump_rate < opts.min_pump_rate);
        let d = r.config.laser(Line::L850).unwrap().detuning
            - (r.config.laser(Line::L866).unwrap().detuning - r.config.laser(Line::L397).unwrap().detuning);
        assert!(d.abs() < 1e-6);
    }
}
