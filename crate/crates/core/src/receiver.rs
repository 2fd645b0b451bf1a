//! Two-state quantum-jump model of the receiver ion and its 397 nm
//! fluorescence record.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::emitter::PhotonEvent;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReceiverParams {
    pub pump_rate_bright_to_dark: f64,
    pub spontaneous_dark_to_bright_rate: f64,
    pub background_dark_to_bright_rate: f64,
    pub p_abs_per_photon: f64,
    pub p_jump_given_absorption: f64,
    /// Count decays through D3/2 (repumped by 866 nm) as jumps too.
    pub include_d32_path: bool,
    /// Branching of P3/2 into D3/2, used with `include_d32_path`.
    pub d32_branching: f64,
    pub bright_detection_rate: f64,
    pub dark_count_rate: f64,
    pub start_bright: bool,
}

impl Default for ReceiverParams {
    fn default() -> Self {
        ReceiverParams {
            pump_rate_bright_to_dark: 2.0,
            spontaneous_dark_to_bright_rate: 1.0 / 1.168,
            background_dark_to_bright_rate: 1.0 / 1.022 - 1.0 / 1.168,
            p_abs_per_photon: 2.5e-4 / 0.9347,
            p_jump_given_absorption: 0.9347,
            include_d32_path: false,
            d32_branching: 1.0 - 0.9347 - 1.35 / (21.49 / 0.9347),
            bright_detection_rate: 3e5,
            dark_count_rate: 200.0,
            start_bright: true,
        }
    }
}

impl ReceiverParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pump_rate_bright_to_dark", self.pump_rate_bright_to_dark),
            ("spontaneous_dark_to_bright_rate", self.spontaneous_dark_to_bright_rate),
            ("background_dark_to_bright_rate", self.background_dark_to_bright_rate),
            ("bright_detection_rate", self.bright_detection_rate),
            ("dark_count_rate", self.dark_count_rate),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(name, "rate must be finite and >= 0"));
            }
        }
        for (name, v) in [
            ("p_abs_per_photon", self.p_abs_per_photon),
            ("p_jump_given_absorption", self.p_jump_given_absorption),
            ("d32_branching", self.d32_branching),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, "probability must lie in [0, 1]"));
            }
        }
        if self.p_jump() > 1.0 {
            return Err(Error::param("d32_branching", "jump probability exceeds 1"));
        }
        Ok(())
    }

    /// Probability that an absorbed photon returns the ion to the cooling cycle.
    pub fn p_jump(&self) -> f64 {
        self.p_jump_given_absorption + if self.include_d32_path { self.d32_branching } else { 0.0 }
    }

    pub fn dark_to_bright_rate(&self) -> f64 {
        self.spontaneous_dark_to_bright_rate + self.background_dark_to_bright_rate
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IonState {
    Bright,
    Dark,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EndCause {
    Pump,
    Spontaneous,
    Background,
    Absorption,
    RunEnd,
}

impl EndCause {
    pub fn name(self) -> &'static str {
        match self {
            EndCause::Pump => "pump",
            EndCause::Spontaneous => "spontaneous",
            EndCause::Background => "background",
            EndCause::Absorption => "absorption",
            EndCause::RunEnd => "run_end",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "pump" => EndCause::Pump,
            "spontaneous" => EndCause::Spontaneous,
            "background" => EndCause::Background,
            "absorption" => EndCause::Absorption,
            "run_end" => EndCause::RunEnd,
            _ => return Err(Error::param("end_cause", format!("unknown cause `{s}`"))),
        })
    }
}

impl fmt::Display for EndCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for IonState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IonState::Bright => "bright",
            IonState::Dark => "dark",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub state: IonState,
    pub start: f64,
    pub end: f64,
    pub end_cause: EndCause,
    /// Trigger index of the photon whose absorption ended the interval.
    pub herald: Option<u64>,
}

impl Interval {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverTrajectory {
    pub intervals: Vec<Interval>,
    pub duration: f64,
}

impl ReceiverTrajectory {
    /// Durations of dark intervals that were not cut by the end of the run.
    pub fn dark_durations(&self) -> Vec<f64> {
        self.intervals
            .iter()
            .filter(|i| i.state == IonState::Dark && i.end_cause != EndCause::RunEnd)
            .map(Interval::duration)
            .collect()
    }

    pub fn count(&self, cause: EndCause) -> usize {
        self.intervals.iter().filter(|i| i.end_cause == cause).count()
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<&Interval> = None;
        for iv in &self.intervals {
            if !(iv.end >= iv.start) {
                return Err(Error::InvalidState("interval ends before it starts".into()));
            }
            if iv.end_cause == EndCause::Absorption && iv.state != IonState::Dark {
                return Err(Error::InvalidState("absorption ended a bright interval".into()));
            }
            if let Some(p) = prev {
                if p.end != iv.start || p.state == iv.state {
                    return Err(Error::InvalidState("intervals are not contiguous and alternating".into()));
                }
            }
            prev = Some(iv);
        }
        Ok(())
    }
}

/// Event-driven simulation of the receiver over `[0, duration]`.
///
/// Only photons that reach the receiver (see [`StageFlags::absorbable`](crate::emitter::StageFlags::absorbable))
/// are considered; they must be time-ordered.
pub fn simulate<I>(duration: f64, photons: I, params: &ReceiverParams, seed: u64) -> Result<ReceiverTrajectory>
where
    I: IntoIterator<Item = PhotonEvent>,
{
    params.validate()?;
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::param("duration", "must be > 0"));
    }
    let mut rng = stream(seed, Stream::Receiver);
    let mut photons = photons.into_iter().enumerate().filter(|(_, p)| p.flags.absorbable()).peekable();
    let mut last = f64::NEG_INFINITY;
    let mut intervals = Vec::new();
    let mut state = if params.start_bright { IonState::Bright } else { IonState::Dark };
    let mut t = 0.0;
    let pump = (params.pump_rate_bright_to_dark > 0.0).then(|| Exp::new(params.pump_rate_bright_to_dark).unwrap());
    let r_off = params.dark_to_bright_rate();
    let decay = (r_off > 0.0).then(|| Exp::new(r_off).unwrap());
    let p_spont = if r_off > 0.0 { params.spontaneous_dark_to_bright_rate / r_off } else { 0.0 };
    let p_jump = params.p_jump();

    let mut check = |idx: usize, time: f64| -> Result<()> {
        if time < last || time.is_nan() {
            return Err(Error::Unordered(idx));
        }
        last = time;
        Ok(())
    };

    while t < duration {
        match state {
            IonState::Bright => {
                let end = pump.as_ref().map_or(f64::INFINITY, |d| t + d.sample(&mut rng));
                // photons arriving while bright have no effect
                while let Some((idx, p)) = photons.next_if(|(_, p)| p.emission_time < end.min(duration)) {
                    check(idx, p.emission_time)?;
                }
                let (end, cause) = if end >= duration { (duration, EndCause::RunEnd) } else { (end, EndCause::Pump) };
                intervals.push(Interval { state, start: t, end, end_cause: cause, herald: None });
                t = end;
                state = IonState::Dark;
            }
            IonState::Dark => {
                let mut end = decay.as_ref().map_or(f64::INFINITY, |d| t + d.sample(&mut rng));
                let mut cause = if rng.random_bool(p_spont) { EndCause::Spontaneous } else { EndCause::Background };
                let mut herald = None;
                while let Some((idx, p)) = photons.next_if(|(_, p)| p.emission_time < end.min(duration)) {
                    check(idx, p.emission_time)?;
                    if rng.random_bool(params.p_abs_per_photon) && rng.random_bool(p_jump) {
                        end = p.emission_time;
                        cause = EndCause::Absorption;
                        herald = p.trigger.map(|tr| tr.index);
                        break;
                    }
                }
                if end >= duration {
                    end = duration;
                    cause = EndCause::RunEnd;
                    herald = None;
                }
                intervals.push(Interval { state, start: t, end, end_cause: cause, herald });
                t = end;
                state = IonState::Bright;
            }
        }
    }
    for (idx, p) in photons {
        if p.emission_time <= duration {
            check(idx, p.emission_time)?;
        }
    }
    Ok(ReceiverTrajectory { intervals, duration })
}

/// Lazily generated 397 nm detection timestamps for a trajectory.
pub struct DetectionStream<'a> {
    intervals: &'a [Interval],
    current: usize,
    t: f64,
    bright: Option<Exp<f64>>,
    dark: Option<Exp<f64>>,
    rng: ChaCha8Rng,
}

impl<'a> DetectionStream<'a> {
    pub fn new(traj: &'a ReceiverTrajectory, params: &ReceiverParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let rate = |r: f64| (r > 0.0).then(|| Exp::new(r).unwrap());
        Ok(DetectionStream {
            intervals: &traj.intervals,
            current: 0,
            t: traj.intervals.first().map_or(0.0, |i| i.start),
            bright: rate(params.bright_detection_rate),
            dark: rate(params.dark_count_rate),
            rng: stream(seed, Stream::Detection),
        })
    }
}

impl Iterator for DetectionStream<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        while let Some(iv) = self.intervals.get(self.current) {
            let gen = match iv.state {
                IonState::Bright => self.bright.as_ref(),
                IonState::Dark => self.dark.as_ref(),
            };
            if let Some(d) = gen {
                // memorylessness lets each interval restart the clock at its start
                let t = self.t + d.sample(&mut self.rng);
                if t < iv.end {
                    self.t = t;
                    return Some(t);
                }
            }
            self.current += 1;
            self.t = iv.end;
        }
        None
    }
}

/// Poisson detections at the bright rate while bright and the dark-count rate
/// while dark.
pub fn synthesize_trace(traj: &ReceiverTrajectory, params: &ReceiverParams, seed: u64) -> Result<Vec<f64>> {
    Ok(DetectionStream::new(traj, params, seed)?.collect())
}
