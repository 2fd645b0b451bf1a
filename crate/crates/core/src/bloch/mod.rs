//! Optical Bloch equations for the driven multilevel ion.
//!
//! The master equation is written in a rotating frame under the
//! rotating-wave approximation. Every laser links two fine-structure levels;
//! the set of driven transitions must form a forest so that a frame exists in
//! which the Hamiltonian is piecewise constant.

mod calibrate;
mod density;
mod generator;
mod integrate;
mod observables;
pub mod presets;
mod rate_eq;
mod wavepacket;

use num_complex::Complex64;

use crate::atom::{AtomModel, LevelLabel, Line, MagneticField};
use crate::error::{Error, Result};

pub use calibrate::{calibrate_three_photon, CalibrationOptions, CalibrationResult};
pub use density::DensityMatrix;
pub use generator::{build_generator, Generator, Segment};
pub use integrate::{evolve, EvolveStats, Trajectory};
pub use observables::{pumping_rate, scattering_rates, steady_state};
pub use rate_eq::{RateModel, Resolution};
pub use wavepacket::{fit_exponential_tail, t1_vs_power, wavepacket, InitialState, PumpSequence, Wavepacket};

/// Spherical components `(a_-, a_0, a_+)` of a laser polarization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Polarization([Complex64; 3]);

impl Polarization {
    pub fn new(components: [Complex64; 3]) -> Result<Self> {
        let norm: f64 = components.iter().map(|c| c.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::param("polarization", format!("squared norm {norm} != 1")));
        }
        Ok(Polarization(components))
    }

    /// Normalizes real component weights.
    pub fn from_weights(minus: f64, pi: f64, plus: f64) -> Result<Self> {
        let n = (minus * minus + pi * pi + plus * plus).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::param("polarization", "all components are zero"));
        }
        Ok(Polarization([Complex64::new(minus / n, 0.0), Complex64::new(pi / n, 0.0), Complex64::new(plus / n, 0.0)]))
    }

    pub fn isotropic() -> Self {
        let a = Complex64::new(1.0 / 3f64.sqrt(), 0.0);
        Polarization([a, a, a])
    }

    pub fn sigma_minus() -> Self {
        Polarization([Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)])
    }

    pub fn pi() -> Self {
        Polarization([Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)])
    }

    pub fn sigma_plus() -> Self {
        Polarization([Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)])
    }

    /// Amplitude for `q` in {-1, 0, +1}.
    pub fn component(&self, q: i32) -> Complex64 {
        self.0[(q + 1) as usize]
    }

    pub fn components(&self) -> [Complex64; 3] {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActiveWindow {
    Always,
    /// Switched on at `start`, off at `end` (seconds).
    Between {
        start: f64,
        end: f64,
    },
}

impl ActiveWindow {
    pub fn contains(&self, t: f64) -> bool {
        match *self {
            ActiveWindow::Always => true,
            ActiveWindow::Between { start, end } => t >= start && t < end,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaserField {
    pub lower: LevelLabel,
    pub upper: LevelLabel,
    /// Laser minus Zeeman-free line frequency, rad/s.
    pub detuning: f64,
    /// Rabi frequency on the reduced dipole, rad/s.
    pub rabi_frequency: f64,
    pub polarization: Polarization,
    pub window: ActiveWindow,
}

impl LaserField {
    pub fn on(line: Line, rabi_frequency: f64, detuning: f64) -> Self {
        let (lower, upper) = line.levels();
        LaserField {
            lower,
            upper,
            detuning,
            rabi_frequency,
            polarization: Polarization::isotropic(),
            window: ActiveWindow::Always,
        }
    }

    pub fn with_polarization(mut self, polarization: Polarization) -> Self {
        self.polarization = polarization;
        self
    }

    pub fn with_window(mut self, window: ActiveWindow) -> Self {
        self.window = window;
        self
    }

    pub fn drives(&self, line: Line) -> bool {
        line.levels() == (self.lower, self.upper)
    }

    fn validate(&self) -> Result<()> {
        if !(self.rabi_frequency >= 0.0) || !self.rabi_frequency.is_finite() {
            return Err(Error::param("rabi_frequency", "must be finite and >= 0"));
        }
        if !self.detuning.is_finite() {
            return Err(Error::param("detuning", "must be finite"));
        }
        Polarization::new(self.polarization.0)?;
        if let ActiveWindow::Between { start, end } = self.window {
            if !(start < end) {
                return Err(Error::param("active_window", "start must precede end"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rtol: 1e-8, atol: 1e-10, max_steps: 50_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlochConfig {
    pub atom: AtomModel,
    pub field: MagneticField,
    pub lasers: Vec<LaserField>,
    /// Levels whose Zeeman sublevels span the state space.
    pub levels: Vec<LevelLabel>,
    pub tolerances: Tolerances,
}

impl BlochConfig {
    /// All five levels (18 sublevels), no lasers.
    pub fn new(atom: AtomModel, field: MagneticField) -> Self {
        BlochConfig {
            atom,
            field,
            lasers: Vec::new(),
            levels: LevelLabel::ALL.to_vec(),
            tolerances: Tolerances::default(),
        }
    }

    pub fn with_lasers(mut self, lasers: Vec<LaserField>) -> Self {
        self.lasers = lasers;
        self
    }

    pub fn with_levels(mut self, levels: Vec<LevelLabel>) -> Self {
        self.levels = levels;
        self
    }

    pub fn laser(&self, line: Line) -> Option<&LaserField> {
        self.lasers.iter().find(|l| l.drives(line))
    }

    pub fn laser_mut(&mut self, line: Line) -> Option<&mut LaserField> {
        self.lasers.iter_mut().find(|l| l.drives(line))
    }

    /// Copy without the lasers on `lines`.
    pub fn without(&self, lines: &[Line]) -> Self {
        let mut c = self.clone();
        c.lasers.retain(|l| !lines.iter().any(|&line| l.drives(line)));
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::param("levels", "no levels included"));
        }
        for &lvl in &self.levels {
            self.atom.level(lvl)?;
        }
        for laser in &self.lasers {
            laser.validate()?;
            for lvl in [laser.lower, laser.upper] {
                if !self.levels.contains(&lvl) {
                    return Err(Error::param(
                        "levels",
                        format!("laser {}-{} touches excluded level {lvl}", laser.lower, laser.upper),
                    ));
                }
            }
        }
        let t = &self.tolerances;
        if !(t.rtol > 0.0 && t.atol > 0.0) {
            return Err(Error::param("tolerances", "rtol and atol must be > 0"));
        }
        Ok(())
    }
}
