use nalgebra::DVector;
use num_complex::Complex64;

use super::generator::build_with_sinks;
use super::observables::{cooled_state, pump_phase, pumping_rate, PUMP_LEVELS};
use super::{BlochConfig, DensityMatrix};
use crate::atom::{LevelLabel, Line};
use crate::error::{Error, Result};

/// State of the ion when the 850 nm pulse starts.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum InitialState {
    /// Stationary state of the 397 and 866 nm cooling lasers.
    #[default]
    Cooled,
    /// Level populations, spread evenly over sublevels.
    Levels(Vec<(LevelLabel, f64)>),
}

/// Timing of one pump pulse, which starts at t = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PumpSequence {
    pub window: f64,
    /// Number of grid points on `[0, window]`.
    pub samples: usize,
    pub initial: InitialState,
}

impl PumpSequence {
    pub fn new(window: f64) -> Self {
        PumpSequence { window, samples: 2001, initial: InitialState::Cooled }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Wavepacket {
    pub times: Vec<f64>,
    /// Emission density into D5/2, s^-1; integrates to `pump_probability`.
    pub density: Vec<f64>,
    /// Probability of reaching D5/2 within the window.
    pub pump_probability: f64,
    /// 1/e time of the fitted exponential tail; infinite if nothing is emitted.
    pub t1: f64,
}

/// Arrival-time density of the 854 nm photon emitted while the 850 nm laser
/// pumps the ion into D5/2.
///
/// Only the pump phase is simulated: 854 nm lasers in `config` are ignored
/// and D5/2 acts as a sink.
pub fn wavepacket(config: &BlochConfig, seq: &PumpSequence) -> Result<Wavepacket> {
    let cfg = pump_phase(config)?;
    if !(seq.window > 0.0) || !seq.window.is_finite() {
        return Err(Error::param("pump_window", "must be > 0"));
    }
    if seq.samples < 3 {
        return Err(Error::param("samples", "need at least 3 grid points"));
    }
    let gen = build_with_sinks(&cfg, &[LevelLabel::D52])?;
    let rho0 = match &seq.initial {
        InitialState::Cooled => cooled_state(config)?,
        InitialState::Levels(p) => DensityMatrix::from_level_populations(config.atom.sublevels(&PUMP_LEVELS)?, p)?,
    };
    let n = rho0.dim();
    let gamma = config.atom.channel(LevelLabel::P32, LevelLabel::D52).map_or(0.0, |c| c.partial_rate);
    let p32: Vec<usize> = (0..n).filter(|&i| rho0.basis()[i].level == LevelLabel::P32).collect();

    let dt = seq.window / (seq.samples - 1) as f64;
    let l = gen.segments()[0].liouvillian();
    let prop = (l * Complex64::new(dt, 0.0)).exp();
    if prop.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numeric("propagator is not finite".into()));
    }
    let mut v = DVector::from_fn(n * n, |k, _| rho0.entries()[(k / n, k % n)]);
    let mut times = Vec::with_capacity(seq.samples);
    let mut density = Vec::with_capacity(seq.samples);
    for i in 0..seq.samples {
        if i > 0 {
            v = &prop * &v;
        }
        let pop: f64 = p32.iter().map(|&k| v[k * n + k].re).sum();
        times.push(i as f64 * dt);
        density.push((gamma * pop).max(0.0));
    }
    let remaining: f64 = (0..n).map(|k| v[k * n + k].re).sum();
    let pump_probability = (1.0 - remaining).clamp(0.0, 1.0);
    let t1 = if density.iter().all(|&g| g == 0.0) { f64::INFINITY } else { fit_exponential_tail(&times, &density)? };
    Ok(Wavepacket { times, density, pump_probability, t1 })
}

/// Decay time of an exponential fitted to `values` from their peak onward.
///
/// Weighted linear regression of `ln(value)` on time, with weights equal to
/// the values, over points above 1e-4 of the peak.
pub fn fit_exponential_tail(times: &[f64], values: &[f64]) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::param("values", "length differs from times"));
    }
    let (peak_i, peak) =
        values.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, v)| if v > a.1 { (i, v) } else { a });
    if !(peak > 0.0) {
        return Err(Error::EmptyDensity);
    }
    let (mut sw, mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut used = 0;
    for i in peak_i..values.len() {
        let v = values[i];
        if v < 1e-4 * peak {
            break;
        }
        let (t, y, w) = (times[i], v.ln(), v);
        sw += w;
        st += w * t;
        sy += w * y;
        stt += w * t * t;
        sty += w * t * y;
        used += 1;
    }
    if used < 3 {
        return Err(Error::InsufficientData("fewer than 3 tail points after the peak".into()));
    }
    let slope = (sw * sty - st * sy) / (sw * stt - st * st);
    if !(slope < 0.0) {
        return Err(Error::Numeric("tail does not decay".into()));
    }
    Ok(-1.0 / slope)
}

/// `(power, 1/T1)` for 850 nm powers relative to the config's laser.
///
/// The Rabi frequency scales with the square root of the power. The window is
/// chosen per point from the pumping rate so the tail is fully resolved.
pub fn t1_vs_power(config: &BlochConfig, powers: &[f64]) -> Result<Vec<(f64, f64)>> {
    let base = config
        .laser(Line::L850)
        .ok_or_else(|| Error::NoEmissionPath("no 850 nm laser in the config".into()))?
        .rabi_frequency;
    let mut out = Vec::with_capacity(powers.len());
    for (i, &p) in powers.iter().enumerate() {
        if !(p > 0.0) || !p.is_finite() || (i > 0 && p <= powers[i - 1]) {
            return Err(Error::param("powers", "must be positive and strictly increasing"));
        }
        let mut cfg = config.clone();
        cfg.laser_mut(Line::L850).expect("checked above").rabi_frequency = base * p.sqrt();
        let window = 15.0 / pumping_rate(&cfg)?;
        let wp = wavepacket(&cfg, &PumpSequence::new(window))?;
        out.push((p, 1.0 / wp.t1));
    }
    Ok(out)
}
