//! Link efficiency, photon spectrum and spectral overlap with the receiver.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::atom::{AtomModel, LevelLabel, MagneticField};
use crate::emitter::{PhotonEvent, StageFlags};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelBudget {
    pub collection_efficiency: f64,
    pub fiber_coupling_efficiency: f64,
    pub fiber_transmission: f64,
    pub detector_quantum_efficiency: f64,
}

impl Default for ChannelBudget {
    fn default() -> Self {
        ChannelBudget {
            collection_efficiency: 0.04,
            fiber_coupling_efficiency: 0.6,
            fiber_transmission: 2.0 / 3.0,
            detector_quantum_efficiency: 0.24,
        }
    }
}

impl ChannelBudget {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.stages() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, "efficiency must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn stages(&self) -> [(&'static str, f64); 4] {
        [
            ("collection_efficiency", self.collection_efficiency),
            ("fiber_coupling_efficiency", self.fiber_coupling_efficiency),
            ("fiber_transmission", self.fiber_transmission),
            ("detector_quantum_efficiency", self.detector_quantum_efficiency),
        ]
    }

    /// Collection times fiber coupling: the fraction emitted into the fiber mode.
    pub fn single_mode_fraction(&self) -> f64 {
        self.collection_efficiency * self.fiber_coupling_efficiency
    }

    /// Fraction arriving at the receiver ion.
    pub fn to_receiver(&self) -> f64 {
        self.single_mode_fraction() * self.fiber_transmission
    }

    /// Fraction detected on a photon counter at the fiber output.
    pub fn detected(&self) -> f64 {
        self.to_receiver() * self.detector_quantum_efficiency
    }
}

/// Lazily applies per-stage Bernoulli losses.
pub struct Thinning<I> {
    inner: I,
    probs: [f64; 4],
    rng: ChaCha8Rng,
}

impl<I: Iterator<Item = PhotonEvent>> Iterator for Thinning<I> {
    type Item = PhotonEvent;

    fn next(&mut self) -> Option<PhotonEvent> {
        let mut ev = self.inner.next()?;
        for (stage, &p) in StageFlags::STAGES.iter().zip(&self.probs) {
            if !ev.flags.has(*stage) {
                break;
            }
            if !self.rng.random_bool(p) {
                ev.flags.lose(*stage);
                break;
            }
        }
        Some(ev)
    }
}

pub fn thin<I: Iterator<Item = PhotonEvent>>(events: I, budget: &ChannelBudget, seed: u64) -> Result<Thinning<I>> {
    budget.validate()?;
    let s = budget.stages();
    Ok(Thinning { inner: events, probs: [s[0].1, s[1].1, s[2].1, s[3].1], rng: stream(seed, Stream::Channel) })
}

/// Independent Bernoulli thinning of every stage.
pub fn transmit(events: Vec<PhotonEvent>, budget: &ChannelBudget, seed: u64) -> Result<Vec<PhotonEvent>> {
    Ok(thin(events.into_iter(), budget, seed)?.collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralComponent {
    /// Offset from the Zeeman-free line, rad/s.
    pub center: f64,
    pub weight: f64,
    pub fwhm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhotonSpectrum {
    components: Vec<SpectralComponent>,
}

fn check_weights(w: impl Iterator<Item = f64>) -> Result<()> {
    let mut sum = 0.0;
    for v in w {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::param("weights", "must be finite and >= 0"));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::param("weights", format!("sum to {sum}, not 1")));
    }
    Ok(())
}

impl PhotonSpectrum {
    pub fn new(components: Vec<SpectralComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::param("spectrum", "no components"));
        }
        check_weights(components.iter().map(|c| c.weight))?;
        if components.iter().any(|c| !(c.fwhm >= 0.0) || !c.center.is_finite()) {
            return Err(Error::param("spectrum.linewidth", "must be >= 0"));
        }
        Ok(PhotonSpectrum { components })
    }

    /// Default photon: one component per polarization `q` of the receiver's
    /// D5/2 -> P3/2 line. Each sits at the coupling-weighted mean of the
    /// Zeeman-shifted lines with that `q` and carries their total weight.
    pub fn zeeman_split(atom: &AtomModel, field: MagneticField, fwhm: f64) -> Result<Self> {
        let mut comps = Vec::new();
        let lines = zeeman_lines(atom, field)?;
        for q in -1..=1 {
            let sel: Vec<&(i32, f64, f64)> = lines.iter().filter(|l| l.0 == q).collect();
            let w: f64 = sel.iter().map(|l| l.2).sum();
            let c: f64 = sel.iter().map(|l| l.1 * l.2).sum::<f64>() / w;
            comps.push(SpectralComponent { center: c, weight: w, fwhm });
        }
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        comps.iter_mut().for_each(|c| c.weight /= total);
        PhotonSpectrum::new(comps)
    }

    pub fn components(&self) -> &[SpectralComponent] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// Copy shifted by `detuning` (rad/s).
    pub fn shifted(&self, detuning: f64) -> Self {
        let mut s = self.clone();
        s.components.iter_mut().for_each(|c| c.center += detuning);
        s
    }
}

/// `(q, shift, weight)` for each D5/2 -> P3/2 Zeeman line, weights summing to 1
/// for an unpolarized D5/2.
fn zeeman_lines(atom: &AtomModel, field: MagneticField) -> Result<Vec<(i32, f64, f64)>> {
    let mut out = Vec::new();
    let mut total = 0.0;
    for lo in atom.sublevels(&[LevelLabel::D52])? {
        for up in atom.sublevels(&[LevelLabel::P32])? {
            let q2 = up.m.doubled() - lo.m.doubled();
            if q2.abs() > 2 {
                continue;
            }
            let a = atom.coupling_amplitude(lo, up, q2 / 2)?;
            if a == 0.0 {
                continue;
            }
            let shift = atom.zeeman_shift(up, field)? - atom.zeeman_shift(lo, field)?;
            out.push((q2 / 2, shift, a * a));
            total += a * a;
        }
    }
    out.iter_mut().for_each(|l| l.2 /= total);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbsorberLine {
    /// `(center offset rad/s, weight)` per Zeeman component.
    pub components: Vec<(f64, f64)>,
    pub natural_linewidth_fwhm: f64,
}

impl AbsorberLine {
    pub fn new(components: Vec<(f64, f64)>, natural_linewidth_fwhm: f64) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::param("absorber", "no components"));
        }
        check_weights(components.iter().map(|c| c.1))?;
        if !(natural_linewidth_fwhm > 0.0) {
            return Err(Error::param("absorber.linewidth", "must be > 0"));
        }
        Ok(AbsorberLine { components, natural_linewidth_fwhm })
    }

    pub fn single(center: f64, fwhm: f64) -> Result<Self> {
        Self::new(vec![(center, 1.0)], fwhm)
    }

    /// Every D5/2 -> P3/2 Zeeman line of the receiver, weighted by its squared
    /// coupling, with the total P3/2 width.
    pub fn receiver(atom: &AtomModel, field: MagneticField) -> Result<Self> {
        let lines = zeeman_lines(atom, field)?;
        let comps = lines.iter().map(|l| (l.1, l.2)).collect();
        Self::new(comps, atom.total_decay_rate(LevelLabel::P32)?)
    }
}

/// Normalized Lorentzian with full width `fwhm` at detuning `d`.
pub fn lorentzian(d: f64, fwhm: f64) -> f64 {
    let hw = 0.5 * fwhm;
    hw / PI / (d * d + hw * hw)
}

/// Overlap of two sets of Lorentzian lines, normalized to the peak of a single
/// line of width `norm_fwhm`.
pub fn lorentzian_overlap(a: &[(f64, f64, f64)], b: &[(f64, f64, f64)], norm_fwhm: f64) -> f64 {
    let norm = lorentzian(0.0, norm_fwhm);
    let mut s = 0.0;
    for &(ca, wa, ga) in a {
        for &(cb, wb, gb) in b {
            s += wa * wb * lorentzian(ca - cb, ga + gb);
        }
    }
    s / norm
}

/// Absorption of the photon relative to a zero-width photon on resonance with
/// a single absorber line.
pub fn spectral_overlap(photon: &PhotonSpectrum, absorber: &AbsorberLine) -> f64 {
    let a: Vec<(f64, f64, f64)> = photon.components.iter().map(|c| (c.center, c.weight, c.fwhm)).collect();
    let g = absorber.natural_linewidth_fwhm;
    let b: Vec<(f64, f64, f64)> = absorber.components.iter().map(|&(c, w)| (c, w, g)).collect();
    lorentzian_overlap(&a, &b, g)
}

pub fn effective_absorption_prob(p_peak: f64, overlap: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_peak) {
        return Err(Error::param("p_peak", "must lie in [0, 1]"));
    }
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::param("overlap", "must lie in [0, 1]"));
    }
    Ok(p_peak * overlap)
}

/// `(detuning Hz, overlap)` with the photon shifted across the absorber.
pub fn overlap_table(photon: &PhotonSpectrum, absorber: &AbsorberLine, detunings_hz: &[f64]) -> Vec<(f64, f64)> {
    detunings_hz.iter().map(|&d| (d, spectral_overlap(&photon.shifted(2.0 * PI * d), absorber))).collect()
}
