//! Sender-side photon streams for the triggered sequence and cw generation.

use std::fmt;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;

use crate::bloch::Wavepacket;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Normalized photon arrival-time density over the pump window.
#[derive(Clone, Debug, PartialEq)]
pub enum ArrivalDensity {
    /// `exp(-t / t1) / t1`, truncated at `cutoff` (which may be infinite).
    Exponential { t1: f64, cutoff: f64 },
    /// Piecewise-linear density through tabulated points.
    Tabulated(Tabulated),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tabulated {
    times: Vec<f64>,
    values: Vec<f64>,
    /// Cumulative integral at each grid point, normalized to end at 1.
    cdf: Vec<f64>,
}

impl ArrivalDensity {
    pub fn exponential(t1: f64, cutoff: f64) -> Result<Self> {
        if !(t1 > 0.0) || !t1.is_finite() {
            return Err(Error::param("t1", "must be finite and > 0"));
        }
        if !(cutoff > 0.0) {
            return Err(Error::param("cutoff", "must be > 0"));
        }
        Ok(ArrivalDensity::Exponential { t1, cutoff })
    }

    pub fn tabulated(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::param("arrival_density", "need matching times and values, at least 2 points"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("arrival_density", "times must be strictly increasing"));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::param("arrival_density", "values must be finite and >= 0"));
        }
        let mut cdf = vec![0.0; times.len()];
        for i in 1..times.len() {
            cdf[i] = cdf[i - 1] + 0.5 * (values[i] + values[i - 1]) * (times[i] - times[i - 1]);
        }
        let total = cdf[cdf.len() - 1];
        if !(total > 0.0) {
            return Err(Error::EmptyDensity);
        }
        cdf.iter_mut().for_each(|c| *c /= total);
        let values = values.iter().map(|v| v / total).collect();
        Ok(ArrivalDensity::Tabulated(Tabulated { times, values, cdf }))
    }

    pub fn from_wavepacket(wp: &Wavepacket) -> Result<Self> {
        Self::tabulated(wp.times.clone(), wp.density.clone())
    }

    /// Last time with support.
    pub fn window(&self) -> f64 {
        match self {
            ArrivalDensity::Exponential { cutoff, .. } => *cutoff,
            ArrivalDensity::Tabulated(t) => t.times[t.times.len() - 1],
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        match self {
            ArrivalDensity::Exponential { t1, cutoff } => {
                if t < 0.0 || t > *cutoff {
                    0.0
                } else {
                    (-t / t1).exp() / t1 / (1.0 - (-cutoff / t1).exp())
                }
            }
            ArrivalDensity::Tabulated(tab) => {
                let (ts, vs) = (&tab.times, &tab.values);
                if t < ts[0] || t > ts[ts.len() - 1] {
                    return 0.0;
                }
                let i = ts.partition_point(|&x| x <= t).clamp(1, ts.len() - 1) - 1;
                let f = (t - ts[i]) / (ts[i + 1] - ts[i]);
                vs[i] + f * (vs[i + 1] - vs[i])
            }
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        match self {
            ArrivalDensity::Exponential { t1, cutoff } => {
                let t = t.clamp(0.0, *cutoff);
                (1.0 - (-t / t1).exp()) / (1.0 - (-cutoff / t1).exp())
            }
            ArrivalDensity::Tabulated(tab) => {
                let ts = &tab.times;
                if t <= ts[0] {
                    return 0.0;
                }
                if t >= ts[ts.len() - 1] {
                    return 1.0;
                }
                let i = ts.partition_point(|&x| x <= t) - 1;
                let dt = t - ts[i];
                let slope = (tab.values[i + 1] - tab.values[i]) / (ts[i + 1] - ts[i]);
                tab.cdf[i] + tab.values[i] * dt + 0.5 * slope * dt * dt
            }
        }
    }

    /// Inverse-CDF sample for `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            ArrivalDensity::Exponential { t1, cutoff } => -t1 * (-u * (1.0 - (-cutoff / t1).exp())).ln_1p(),
            ArrivalDensity::Tabulated(tab) => {
                let (ts, vs, cdf) = (&tab.times, &tab.values, &tab.cdf);
                if u <= 0.0 {
                    // earliest point with support
                    let k = vs.iter().position(|&v| v > 0.0).unwrap_or(0);
                    return if k == 0 { ts[0] } else { ts[k - 1] };
                }
                let i = cdf.partition_point(|&c| c < u).clamp(1, ts.len() - 1) - 1;
                let need = u - cdf[i];
                let h = ts[i + 1] - ts[i];
                let a = 0.5 * (vs[i + 1] - vs[i]) / h;
                let b = vs[i];
                // solve a x^2 + b x = need on [0, h]
                let x = if a.abs() < 1e-300 || (a * need).abs() < 1e-12 * b * b {
                    if b > 0.0 {
                        need / b
                    } else {
                        0.0
                    }
                } else {
                    let disc = (b * b + 4.0 * a * need).max(0.0);
                    2.0 * need / (b + disc.sqrt())
                };
                ts[i] + x.clamp(0.0, h)
            }
        }
    }
}

/// Inverse-CDF sample of `g` at `u`.
pub fn sample_arrival(g: &ArrivalDensity, u: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&u) {
        return Err(Error::param("u", "must lie in [0, 1)"));
    }
    Ok(g.quantile(u))
}

/// Timing of one repetition of the pulse sequence. The 850 nm pulse, and the
/// herald, starts right after cooling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SequenceSchedule {
    pub repetition_rate: f64,
    pub cooling_duration: f64,
    pub pump_window: f64,
    pub repump_duration: f64,
}

impl SequenceSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.repetition_rate > 0.0) || !self.repetition_rate.is_finite() {
            return Err(Error::param("repetition_rate", "must be > 0"));
        }
        for (name, v) in [
            ("cooling_duration", self.cooling_duration),
            ("pump_window", self.pump_window),
            ("repump_duration", self.repump_duration),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(name, "must be >= 0"));
            }
        }
        let used = self.cooling_duration + self.pump_window + self.repump_duration;
        if used > self.period() * (1.0 + 1e-12) {
            return Err(Error::param(
                "repetition_rate",
                format!("phases take {used:e} s, longer than the period {:e} s", self.period()),
            ));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.repetition_rate
    }

    pub fn trigger_time(&self, index: u64) -> f64 {
        index as f64 * self.period() + self.cooling_duration
    }
}

/// Survival of a photon through the link. A photon lost at one stage is lost
/// at every later stage.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct StageFlags(u8);

impl StageFlags {
    pub const COLLECTED: u8 = 1;
    pub const FIBER_COUPLED: u8 = 2;
    pub const FIBER_TRANSMITTED: u8 = 4;
    pub const DETECTED: u8 = 8;
    pub const STAGES: [u8; 4] = [Self::COLLECTED, Self::FIBER_COUPLED, Self::FIBER_TRANSMITTED, Self::DETECTED];

    /// Nothing lost yet.
    pub fn all() -> Self {
        StageFlags(0b1111)
    }

    pub fn from_bits(bits: u8) -> Result<Self> {
        let f = StageFlags(bits);
        if bits > 0b1111 || !f.is_monotone() {
            return Err(Error::param("flags", format!("invalid stage bitfield {bits}")));
        }
        Ok(f)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn has(self, stage: u8) -> bool {
        self.0 & stage != 0
    }

    /// Marks the photon lost at `stage` and every later stage.
    pub fn lose(&mut self, stage: u8) {
        self.0 &= stage - 1;
    }

    pub fn is_monotone(self) -> bool {
        // bits form a prefix 0..k
        (self.0 & (self.0 + 1)) == 0
    }

    /// Reaches the receiver ion (the detector stage is not involved).
    pub fn absorbable(self) -> bool {
        self.has(Self::FIBER_TRANSMITTED)
    }
}

impl fmt::Debug for StageFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StageFlags({:04b})", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhotonEvent {
    /// Absent for cw emission.
    pub trigger: Option<Trigger>,
    pub emission_time: f64,
    pub spectral_component: usize,
    pub flags: StageFlags,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trigger {
    pub index: u64,
    pub time: f64,
}

impl PhotonEvent {
    pub fn emission_offset(&self) -> Option<f64> {
        self.trigger.map(|t| self.emission_time - t.time)
    }
}

fn component_sampler(weights: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights).map_err(|e| Error::param("spectrum.weights", e.to_string()))
}

/// Lazily generated triggered-sequence photons.
pub struct SequenceStream<'a> {
    schedule: SequenceSchedule,
    density: &'a ArrivalDensity,
    pump_success: f64,
    components: WeightedIndex<f64>,
    rng: ChaCha8Rng,
    next: u64,
    n_triggers: u64,
}

impl Iterator for SequenceStream<'_> {
    type Item = PhotonEvent;

    fn next(&mut self) -> Option<PhotonEvent> {
        while self.next < self.n_triggers {
            let index = self.next;
            self.next += 1;
            if !self.rng.random_bool(self.pump_success) {
                continue;
            }
            let u: f64 = self.rng.random();
            let offset = self.density.quantile(u).min(self.schedule.pump_window);
            let component = self.components.sample(&mut self.rng);
            let time = self.schedule.trigger_time(index);
            return Some(PhotonEvent {
                trigger: Some(Trigger { index, time }),
                emission_time: time + offset,
                spectral_component: component,
                flags: StageFlags::all(),
            });
        }
        None
    }
}

/// Streams `n_triggers` sequence repetitions; each emits at most one photon.
///
/// `component_weights` are the spectral component weights.
pub fn sequence_stream<'a>(
    n_triggers: u64,
    schedule: SequenceSchedule,
    g: &'a ArrivalDensity,
    pump_success_prob: f64,
    component_weights: &[f64],
    seed: u64,
) -> Result<SequenceStream<'a>> {
    schedule.validate()?;
    if n_triggers < 1 {
        return Err(Error::param("n_triggers", "must be >= 1"));
    }
    if !(0.0..=1.0).contains(&pump_success_prob) {
        return Err(Error::param("pump_success_prob", "must lie in [0, 1]"));
    }
    if g.window() > schedule.pump_window * (1.0 + 1e-9) && g.cdf(schedule.pump_window) < 1.0 - 1e-9 {
        return Err(Error::param("pump_window", "arrival density extends beyond the pump window"));
    }
    Ok(SequenceStream {
        schedule,
        density: g,
        pump_success: pump_success_prob,
        components: component_sampler(component_weights)?,
        rng: stream(seed, Stream::Emitter),
        next: 0,
        n_triggers,
    })
}

pub fn run_sequence(
    n_triggers: u64,
    schedule: SequenceSchedule,
    g: &ArrivalDensity,
    pump_success_prob: f64,
    component_weights: &[f64],
    seed: u64,
) -> Result<Vec<PhotonEvent>> {
    Ok(sequence_stream(n_triggers, schedule, g, pump_success_prob, component_weights, seed)?.collect())
}

/// Lazily generated cw photons (homogeneous Poisson process).
pub struct CwStream {
    duration: f64,
    t: f64,
    gap: Option<Exp<f64>>,
    components: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl Iterator for CwStream {
    type Item = PhotonEvent;

    fn next(&mut self) -> Option<PhotonEvent> {
        let gap = self.gap.as_ref()?;
        self.t += gap.sample(&mut self.rng);
        if self.t >= self.duration {
            self.gap = None;
            return None;
        }
        Some(PhotonEvent {
            trigger: None,
            emission_time: self.t,
            spectral_component: self.components.sample(&mut self.rng),
            flags: StageFlags::all(),
        })
    }
}

pub fn cw_stream(duration: f64, rate: f64, component_weights: &[f64], seed: u64) -> Result<CwStream> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::param("duration", "must be > 0"));
    }
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::param("rate", "must be >= 0"));
    }
    Ok(CwStream {
        duration,
        t: 0.0,
        gap: if rate > 0.0 { Some(Exp::new(rate).expect("positive rate")) } else { None },
        components: component_sampler(component_weights)?,
        rng: stream(seed, Stream::Emitter),
    })
}

pub fn run_cw(duration: f64, rate: f64, component_weights: &[f64], seed: u64) -> Result<Vec<PhotonEvent>> {
    Ok(cw_stream(duration, rate, component_weights, seed)?.collect())
}

/// Draws `n` arrival times from `g` (used to cross-check tail fits).
pub fn sample_many(g: &ArrivalDensity, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, Stream::Sampling);
    (0..n).map(|_| g.quantile(rng.random())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const W: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

    fn schedule() -> SequenceSchedule {
        SequenceSchedule { repetition_rate: 125e3, cooling_duration: 2e-6, pump_window: 4e-6, repump_duration: 1e-6 }
    }

    #[test]
    fn exponential_quantiles() {
        let g = ArrivalDensity::exponential(1.1e-6, f64::INFINITY).unwrap();
        assert_eq!(sample_arrival(&g, 0.0).unwrap(), 0.0);
        let t = sample_arrival(&g, 1.0 - (-1f64).exp()).unwrap();
        assert!((t / 1.1e-6 - 1.0).abs() < 1e-12);
        assert!(sample_arrival(&g, 1.0).is_err());
    }

    #[test]
    fn tabulated_quantile_inverts_cdf() {
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let values: Vec<f64> = times.iter().map(|&t| t * (-t).exp()).collect();
        let g = ArrivalDensity::tabulated(times, values).unwrap();
        for k in 1..100 {
            let u = k as f64 / 100.0;
            assert!((g.cdf(g.quantile(u)) - u).abs() < 1e-12);
        }
        assert_eq!(g.quantile(0.0), 0.0);
    }

    #[test]
    fn earliest_support_point() {
        let g = ArrivalDensity::tabulated(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(g.quantile(0.0), 1.0);
        assert!(matches!(ArrivalDensity::tabulated(vec![0.0, 1.0], vec![0.0, 0.0]), Err(Error::EmptyDensity)));
    }

    #[test]
    fn pump_success_extremes() {
        let g = ArrivalDensity::exponential(0.5e-6, 4e-6).unwrap();
        assert!(run_sequence(1000, schedule(), &g, 0.0, &W, 1).unwrap().is_empty());
        let ev = run_sequence(10_000, schedule(), &g, 1.0, &W, 1).unwrap();
        assert_eq!(ev.len(), 10_000);
        for (k, e) in ev.iter().enumerate() {
            let trig = e.trigger.unwrap();
            assert_eq!(trig.index, k as u64);
            let off = e.emission_offset().unwrap();
            assert!((0.0..=4e-6).contains(&off));
        }
        assert!(ev.windows(2).all(|w| w[1].emission_time > w[0].emission_time));
    }

    #[test]
    fn schedule_must_fit_the_period() {
        let mut s = schedule();
        s.pump_window = 6e-6;
        assert!(s.validate().is_err());
    }

    #[test]
    fn cw_zero_rate_and_determinism() {
        assert!(run_cw(1.0, 0.0, &W, 3).unwrap().is_empty());
        let a = run_cw(0.1, 18e3, &W, 3).unwrap();
        let b = run_cw(0.1, 18e3, &W, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|e| e.trigger.is_none()));
        assert!(a.windows(2).all(|w| w[1].emission_time > w[0].emission_time));
    }

    #[test]
    fn flags_stay_monotone() {
        let mut f = StageFlags::all();
        assert!(f.is_monotone());
        f.lose(StageFlags::FIBER_COUPLED);
        assert_eq!(f.bits(), 1);
        assert!(f.is_monotone() && !f.absorbable());
        f.lose(StageFlags::DETECTED);
        assert_eq!(f.bits(), 1);
        assert!(StageFlags::from_bits(0b0101).is_err());
    }
}
