//! Level structure, decay channels and Zeeman couplings of the 40Ca+ ion.
//!
//! Energies never appear in absolute terms. Everything downstream works in a
//! rotating frame, so the model only carries angular momenta, Landé factors
//! and partial decay rates.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use serde::Deserialize;

use crate::angular::{clebsch_gordan, HalfInt};
use crate::error::{Error, Result};

/// Bohr magneton over Planck's constant, Hz per tesla.
pub const BOHR_MAGNETON_HZ_PER_T: f64 = 1.399_624_493_61e10;

/// Tesla per gauss.
pub const GAUSS: f64 = 1e-4;

/// Angular frequency of `mhz` megahertz.
pub fn two_pi_mhz(mhz: f64) -> f64 {
    TAU * mhz * 1e6
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LevelLabel {
    S12,
    P12,
    P32,
    D32,
    D52,
}

impl LevelLabel {
    pub const ALL: [LevelLabel; 5] =
        [LevelLabel::S12, LevelLabel::P12, LevelLabel::P32, LevelLabel::D32, LevelLabel::D52];

    pub fn name(self) -> &'static str {
        match self {
            LevelLabel::S12 => "S1/2",
            LevelLabel::P12 => "P1/2",
            LevelLabel::P32 => "P3/2",
            LevelLabel::D32 => "D3/2",
            LevelLabel::D52 => "D5/2",
        }
    }

    /// Twice the total angular momentum fixed by the term symbol.
    pub fn j2(self) -> i32 {
        match self {
            LevelLabel::S12 | LevelLabel::P12 => 1,
            LevelLabel::P32 | LevelLabel::D32 => 3,
            LevelLabel::D52 => 5,
        }
    }

    /// Orbital parity: true for odd (P) levels.
    pub fn odd_parity(self) -> bool {
        matches!(self, LevelLabel::P12 | LevelLabel::P32)
    }

    /// Position in the energy ordering S < D3/2 < D5/2 < P1/2 < P3/2.
    pub fn energy_rank(self) -> u8 {
        match self {
            LevelLabel::S12 => 0,
            LevelLabel::D32 => 1,
            LevelLabel::D52 => 2,
            LevelLabel::P12 => 3,
            LevelLabel::P32 => 4,
        }
    }
}

impl fmt::Display for LevelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LevelLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| !c.is_whitespace() && *c != '_').collect();
        match norm.to_ascii_uppercase().as_str() {
            "S1/2" | "S12" => Ok(LevelLabel::S12),
            "P1/2" | "P12" => Ok(LevelLabel::P12),
            "P3/2" | "P32" => Ok(LevelLabel::P32),
            "D3/2" | "D32" => Ok(LevelLabel::D32),
            "D5/2" | "D52" => Ok(LevelLabel::D52),
            _ => Err(Error::param("level", format!("unknown level label `{s}`"))),
        }
    }
}

/// Optical line labels, by vacuum wavelength in nm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Line {
    L393,
    L397,
    L729,
    L732,
    L850,
    L854,
    L866,
}

impl Line {
    pub fn nm(self) -> u16 {
        match self {
            Line::L393 => 393,
            Line::L397 => 397,
            Line::L729 => 729,
            Line::L732 => 732,
            Line::L850 => 850,
            Line::L854 => 854,
            Line::L866 => 866,
        }
    }

    pub fn from_nm(nm: u16) -> Result<Self> {
        Ok(match nm {
            393 => Line::L393,
            397 => Line::L397,
            729 => Line::L729,
            732 => Line::L732,
            850 => Line::L850,
            854 => Line::L854,
            866 => Line::L866,
            _ => return Err(Error::param("wavelength", format!("no line at {nm} nm"))),
        })
    }

    /// The (lower, upper) pair this line connects.
    pub fn levels(self) -> (LevelLabel, LevelLabel) {
        use LevelLabel::*;
        match self {
            Line::L393 => (S12, P32),
            Line::L397 => (S12, P12),
            Line::L729 => (S12, D52),
            Line::L732 => (S12, D32),
            Line::L850 => (D32, P32),
            Line::L854 => (D52, P32),
            Line::L866 => (D32, P12),
        }
    }
}

impl fmt::Display for Line {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} nm", self.nm())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Level {
    pub label: LevelLabel,
    pub j: HalfInt,
    pub g_j: f64,
}

impl Level {
    pub fn new(label: LevelLabel, g_j: f64) -> Result<Self> {
        if !(g_j > 0.0) {
            return Err(Error::param("g_j", format!("Landé factor of {label} must be positive")));
        }
        Ok(Level { label, j: HalfInt::from_doubled(label.j2()), g_j })
    }

    pub fn multiplicity(&self) -> usize {
        (self.j.doubled() + 1) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ZeemanState {
    pub level: LevelLabel,
    pub m: HalfInt,
}

impl ZeemanState {
    pub fn new(level: LevelLabel, m: HalfInt) -> Result<Self> {
        let j2 = level.j2();
        if m.doubled().abs() > j2 || (m.doubled() - j2) % 2 != 0 {
            return Err(Error::InvalidState(format!("m = {m} is not a projection of {level}")));
        }
        Ok(ZeemanState { level, m })
    }

    /// Shorthand taking twice the magnetic quantum number.
    pub fn doubled(level: LevelLabel, m2: i32) -> Result<Self> {
        ZeemanState::new(level, HalfInt::from_doubled(m2))
    }
}

impl fmt::Display for ZeemanState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(m={})", self.level, self.m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayChannel {
    pub upper: LevelLabel,
    pub lower: LevelLabel,
    /// Partial decay rate in s^-1.
    pub partial_rate: f64,
    pub line: Line,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MagneticField {
    tesla: f64,
}

impl MagneticField {
    pub fn from_tesla(tesla: f64) -> Result<Self> {
        if !(tesla >= 0.0) || !tesla.is_finite() {
            return Err(Error::param("magnetic_field", "magnitude must be finite and >= 0"));
        }
        Ok(MagneticField { tesla })
    }

    pub fn from_gauss(gauss: f64) -> Result<Self> {
        MagneticField::from_tesla(gauss * GAUSS)
    }

    pub fn tesla(&self) -> f64 {
        self.tesla
    }

    pub fn gauss(&self) -> f64 {
        self.tesla / GAUSS
    }
}

/// Electric-dipole selection rule at the level of fine-structure terms.
pub fn dipole_connected(a: LevelLabel, b: LevelLabel) -> bool {
    a.odd_parity() != b.odd_parity() && (a.j2() - b.j2()).abs() <= 2
}

/// Multipole rank carrying a decay between two levels.
fn decay_rank(upper: LevelLabel, lower: LevelLabel) -> Option<i32> {
    if dipole_connected(upper, lower) {
        Some(1)
    } else if upper.odd_parity() == lower.odd_parity() && (upper.j2() - lower.j2()).abs() <= 4 {
        Some(2)
    } else {
        None
    }
}

/// Angular amplitude `<J_l m_l; k q | J_u m_u>` for a rank-`k` transition.
fn rank_amplitude(lower: ZeemanState, upper: ZeemanState, rank: i32, q: i32) -> f64 {
    clebsch_gordan(
        HalfInt::from_doubled(lower.level.j2()),
        lower.m,
        HalfInt::from_doubled(2 * rank),
        HalfInt::from_doubled(2 * q),
        HalfInt::from_doubled(upper.level.j2()),
        upper.m,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct AtomModel {
    levels: Vec<Level>,
    channels: Vec<DecayChannel>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelEntry {
    j2: i32,
    g: f64,
    total_rate_2pi_mhz: Option<f64>,
    lifetime_s: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelEntry {
    upper: String,
    lower: String,
    wavelength: u16,
    rate_2pi_mhz: Option<f64>,
    rate_per_s: Option<f64>,
    branching: Option<f64>,
    #[serde(default)]
    remainder: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    levels: BTreeMap<String, LevelEntry>,
    #[serde(default)]
    channels: Vec<ChannelEntry>,
}

const DEFAULT_MODEL: &str = include_str!("../data/ca40.toml");

impl Default for AtomModel {
    fn default() -> Self {
        AtomModel::from_toml_str(DEFAULT_MODEL).expect("bundled atom model is valid")
    }
}

impl AtomModel {
    /// The bundled data file, verbatim.
    pub fn default_source() -> &'static str {
        DEFAULT_MODEL
    }

    pub fn new(levels: Vec<Level>, channels: Vec<DecayChannel>) -> Result<Self> {
        for (i, l) in levels.iter().enumerate() {
            if levels[..i].iter().any(|o| o.label == l.label) {
                return Err(Error::param("levels", format!("{} listed twice", l.label)));
            }
        }
        let has = |lab: LevelLabel| levels.iter().any(|l| l.label == lab);
        for ch in &channels {
            if !has(ch.upper) {
                return Err(Error::UnknownLevel(ch.upper));
            }
            if !has(ch.lower) {
                return Err(Error::UnknownLevel(ch.lower));
            }
            if !(ch.partial_rate >= 0.0) || !ch.partial_rate.is_finite() {
                return Err(Error::param(
                    "partial_rate",
                    format!("{} -> {} rate must be finite and >= 0", ch.upper, ch.lower),
                ));
            }
            if ch.upper.energy_rank() <= ch.lower.energy_rank() {
                return Err(Error::param("channels", format!("{} lies below {}", ch.upper, ch.lower)));
            }
            if decay_rank(ch.upper, ch.lower).is_none() {
                return Err(Error::param(
                    "channels",
                    format!("{} -> {} is not a dipole or quadrupole decay", ch.upper, ch.lower),
                ));
            }
        }
        Ok(AtomModel { levels, channels })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ModelFile =
            toml::from_str(text).map_err(|e| Error::Parse { path: "atom model".into(), reason: e.to_string() })?;
        let mut levels = Vec::new();
        let mut totals: BTreeMap<LevelLabel, f64> = BTreeMap::new();
        for (name, entry) in &file.levels {
            let label: LevelLabel = name.parse()?;
            if entry.j2 != label.j2() {
                return Err(Error::param("j2", format!("{label} requires 2J = {}", label.j2())));
            }
            levels.push(Level::new(label, entry.g)?);
            if let Some(r) = entry.total_rate_2pi_mhz {
                totals.insert(label, two_pi_mhz(r));
            }
            if let Some(tau) = entry.lifetime_s {
                if !(tau > 0.0) {
                    return Err(Error::param("lifetime_s", format!("{label} lifetime must be > 0")));
                }
                totals.insert(label, 1.0 / tau);
            }
        }
        levels.sort_by_key(|l| l.label);

        struct Pending {
            upper: LevelLabel,
            lower: LevelLabel,
            line: Line,
            rate: Option<f64>,
            branching: Option<f64>,
            remainder: bool,
        }
        let mut pending = Vec::new();
        for c in &file.channels {
            let rate = match (c.rate_2pi_mhz, c.rate_per_s) {
                (Some(_), Some(_)) => return Err(Error::param("channels", "give either rate_2pi_mhz or rate_per_s")),
                (Some(m), None) => Some(two_pi_mhz(m)),
                (None, r) => r,
            };
            let p = Pending {
                upper: c.upper.parse()?,
                lower: c.lower.parse()?,
                line: Line::from_nm(c.wavelength)?,
                rate,
                branching: c.branching,
                remainder: c.remainder,
            };
            if let (Some(r), Some(b)) = (p.rate, p.branching) {
                if !(b > 0.0 && b <= 1.0) {
                    return Err(Error::param("branching", "must lie in (0, 1]"));
                }
                totals.insert(p.upper, r / b);
            }
            pending.push(p);
        }

        let mut channels = Vec::new();
        for p in &pending {
            let rate = match (p.rate, p.branching, p.remainder) {
                (Some(r), _, false) => r,
                (None, Some(b), false) => {
                    let total = totals.get(&p.upper).ok_or_else(|| {
                        Error::param("channels", format!("{} has no total rate for branching", p.upper))
                    })?;
                    b * total
                }
                (None, None, true) => continue,
                _ => {
                    return Err(Error::param(
                        "channels",
                        format!("{} -> {}: specify exactly one rate source", p.upper, p.lower),
                    ))
                }
            };
            channels.push(DecayChannel { upper: p.upper, lower: p.lower, partial_rate: rate, line: p.line });
        }
        for p in pending.iter().filter(|p| p.remainder && p.rate.is_none() && p.branching.is_none()) {
            let total = totals
                .get(&p.upper)
                .ok_or_else(|| Error::param("channels", format!("{} has no total rate for closure", p.upper)))?;
            let others: f64 = channels.iter().filter(|c| c.upper == p.upper).map(|c| c.partial_rate).sum();
            let rest = total - others;
            if rest < -1e-9 * total {
                return Err(Error::param("channels", format!("{} partial rates exceed its total rate", p.upper)));
            }
            channels.push(DecayChannel { upper: p.upper, lower: p.lower, partial_rate: rest.max(0.0), line: p.line });
        }
        AtomModel::new(levels, channels)
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn channels(&self) -> &[DecayChannel] {
        &self.channels
    }

    pub fn level(&self, label: LevelLabel) -> Result<&Level> {
        self.levels.iter().find(|l| l.label == label).ok_or(Error::UnknownLevel(label))
    }

    pub fn has_level(&self, label: LevelLabel) -> bool {
        self.levels.iter().any(|l| l.label == label)
    }

    pub fn channel(&self, upper: LevelLabel, lower: LevelLabel) -> Option<&DecayChannel> {
        self.channels.iter().find(|c| c.upper == upper && c.lower == lower)
    }

    pub fn channels_from(&self, upper: LevelLabel) -> impl Iterator<Item = &DecayChannel> {
        self.channels.iter().filter(move |c| c.upper == upper)
    }

    /// Replace (or insert) the partial rate of one channel.
    pub fn set_partial_rate(&mut self, upper: LevelLabel, lower: LevelLabel, rate: f64) -> Result<()> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::param("partial_rate", "must be finite and >= 0"));
        }
        match self.channels.iter_mut().find(|c| c.upper == upper && c.lower == lower) {
            Some(c) => c.partial_rate = rate,
            None => {
                let line = [Line::L393, Line::L397, Line::L729, Line::L732, Line::L850, Line::L854, Line::L866]
                    .into_iter()
                    .find(|l| {
                        let (lo, up) = l.levels();
                        lo == lower && up == upper
                    })
                    .ok_or_else(|| Error::param("channels", format!("no line {upper} -> {lower}")))?;
                let mut channels = self.channels.clone();
                channels.push(DecayChannel { upper, lower, partial_rate: rate, line });
                *self = AtomModel::new(self.levels.clone(), channels)?;
            }
        }
        Ok(())
    }

    pub fn set_g_factor(&mut self, label: LevelLabel, g: f64) -> Result<()> {
        let new = Level::new(label, g)?;
        let slot = self.levels.iter_mut().find(|l| l.label == label).ok_or(Error::UnknownLevel(label))?;
        *slot = new;
        Ok(())
    }

    /// Sum of the partial rates out of `level`, in s^-1.
    pub fn total_decay_rate(&self, level: LevelLabel) -> Result<f64> {
        self.level(level)?;
        Ok(self.channels_from(level).map(|c| c.partial_rate).sum())
    }

    pub fn branching_ratio(&self, upper: LevelLabel, lower: LevelLabel) -> Result<f64> {
        self.level(lower)?;
        let total = self.total_decay_rate(upper)?;
        if total <= 0.0 {
            return Err(Error::NoDecay(upper));
        }
        Ok(self.channel(upper, lower).map_or(0.0, |c| c.partial_rate / total))
    }

    /// Linear Zeeman shift `mu_B g_J m_J B / hbar` in rad/s.
    pub fn zeeman_shift(&self, state: ZeemanState, field: MagneticField) -> Result<f64> {
        let g = self.level(state.level)?.g_j;
        Ok(TAU * BOHR_MAGNETON_HZ_PER_T * g * state.m.value() * field.tesla())
    }

    /// Relative dipole amplitude between two sublevels for polarization `q`.
    ///
    /// Normalized so that, for every upper sublevel, the squared amplitudes
    /// summed over lower sublevels and polarizations equal one.
    pub fn coupling_amplitude(&self, lower: ZeemanState, upper: ZeemanState, q: i32) -> Result<f64> {
        if !(-1..=1).contains(&q) {
            return Err(Error::param("q", "polarization index must be -1, 0 or +1"));
        }
        self.level(lower.level)?;
        self.level(upper.level)?;
        if !dipole_connected(lower.level, upper.level) || lower.level.energy_rank() > upper.level.energy_rank() {
            return Err(Error::NotDipoleConnected(lower.level, upper.level));
        }
        if upper.m.doubled() != lower.m.doubled() + 2 * q {
            return Ok(0.0);
        }
        Ok(rank_amplitude(lower, upper, 1, q))
    }

    /// All Zeeman sublevels of the given levels, in level order then ascending m.
    pub fn sublevels(&self, levels: &[LevelLabel]) -> Result<Vec<ZeemanState>> {
        let mut out = Vec::new();
        for &label in levels {
            let level = self.level(label)?;
            out.extend(level.j.projections().map(|m| ZeemanState { level: label, m }));
        }
        Ok(out)
    }

    /// Sublevel-resolved decay rates `(upper, lower, rate)` for one channel.
    ///
    /// Quadrupole channels (D -> S) use rank-2 angular factors; the sum over
    /// lower sublevels of each upper sublevel reproduces the partial rate.
    pub fn sublevel_decays(&self, channel: &DecayChannel) -> Vec<(ZeemanState, ZeemanState, f64)> {
        let rank = decay_rank(channel.upper, channel.lower).unwrap_or(1);
        let up_j = HalfInt::from_doubled(channel.upper.j2());
        let lo_j = HalfInt::from_doubled(channel.lower.j2());
        let mut out = Vec::new();
        for mu in up_j.projections() {
            let upper = ZeemanState { level: channel.upper, m: mu };
            for ml in lo_j.projections() {
                let q2 = mu.doubled() - ml.doubled();
                if q2.abs() > 2 * rank {
                    continue;
                }
                let lower = ZeemanState { level: channel.lower, m: ml };
                let a = rank_amplitude(lower, upper, rank, q2 / 2);
                if a != 0.0 {
                    out.push((upper, lower, channel.partial_rate * a * a));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use LevelLabel::*;

    #[test]
    fn decay_rates() {
        let atom = AtomModel::default();
        assert_eq!(atom.total_decay_rate(S12).unwrap(), 0.0);
        assert_relative_eq!(atom.total_decay_rate(D52).unwrap(), 1.0 / 1.168, max_relative = 1e-12);
        // 21.49 MHz / 0.9347
        let p32 = atom.total_decay_rate(P32).unwrap();
        assert_relative_eq!(p32, two_pi_mhz(22.99133), max_relative = 1e-5);
        assert!((p32 / two_pi_mhz(22.99) - 1.0).abs() < 0.005);
        // closure remainder into D3/2
        let d32 = atom.channel(P32, D32).unwrap().partial_rate;
        assert_relative_eq!(d32, two_pi_mhz(21.49 / 0.9347 - 21.49 - 1.35), max_relative = 1e-12);
        assert!((d32 / two_pi_mhz(0.152) - 1.0).abs() < 0.01);
    }

    #[test]
    fn branching() {
        let atom = AtomModel::default();
        assert_relative_eq!(atom.branching_ratio(P32, S12).unwrap(), 0.9347, max_relative = 1e-12);
        assert_relative_eq!(atom.branching_ratio(P32, D52).unwrap(), 1.35 / 22.99133, max_relative = 1e-4);
        assert!((atom.branching_ratio(P32, D52).unwrap() - 0.0587).abs() < 5e-4);
        assert_relative_eq!(atom.branching_ratio(P12, D32).unwrap(), 0.065, max_relative = 1e-12);
        assert_eq!(atom.branching_ratio(P12, D52).unwrap(), 0.0);
        assert!(matches!(atom.branching_ratio(S12, P32), Err(Error::NoDecay(S12))));
        assert!(matches!(atom.branching_ratio(D32, S12), Err(Error::NoDecay(D32))));
        for up in [P12, P32, D52] {
            let sum: f64 = LevelLabel::ALL.iter().map(|&lo| atom.branching_ratio(up, lo).unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_level() {
        let full = AtomModel::default();
        let levels = full.levels().iter().copied().filter(|l| l.label != D52).collect();
        let channels = full.channels().iter().copied().filter(|c| c.lower != D52 && c.upper != D52).collect();
        let atom = AtomModel::new(levels, channels).unwrap();
        assert!(matches!(atom.total_decay_rate(D52), Err(Error::UnknownLevel(D52))));
    }

    #[test]
    fn zeeman() {
        let atom = AtomModel::default();
        let one_gauss = MagneticField::from_gauss(1.0).unwrap();
        let zero = MagneticField::default();
        let s = ZeemanState::doubled(S12, 1).unwrap();
        assert_eq!(atom.zeeman_shift(s, zero).unwrap(), 0.0);
        // mu_B g m B / hbar, evaluated by hand: 1.39962 MHz/G * 2.0023 * 0.5
        let shift = atom.zeeman_shift(s, one_gauss).unwrap() / TAU;
        assert!((shift - 1.40e6).abs() < 0.01e6, "{shift}");
        let d = ZeemanState::doubled(D52, 5).unwrap();
        let shift = atom.zeeman_shift(d, one_gauss).unwrap() / TAU;
        assert!((shift - 4.20e6).abs() < 0.01e6, "{shift}");
    }

    #[test]
    fn zeeman_is_odd_and_linear() {
        let atom = AtomModel::default();
        for label in LevelLabel::ALL {
            for m in HalfInt::from_doubled(label.j2()).projections() {
                let st = ZeemanState { level: label, m };
                let neg = ZeemanState { level: label, m: HalfInt::from_doubled(-m.doubled()) };
                let unit = atom.zeeman_shift(st, MagneticField::from_gauss(1.0).unwrap()).unwrap();
                for b in [0.0, 0.5, 1.0, 3.0, 10.0, 100.0] {
                    let f = MagneticField::from_gauss(b).unwrap();
                    let v = atom.zeeman_shift(st, f).unwrap();
                    assert_relative_eq!(v, -atom.zeeman_shift(neg, f).unwrap(), epsilon = 1e-9);
                    assert_relative_eq!(v, unit * b, max_relative = 1e-12, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn state_validation() {
        assert!(ZeemanState::doubled(S12, 3).is_err());
        assert!(ZeemanState::doubled(P32, 2).is_err());
        assert!(ZeemanState::doubled(D52, -5).is_ok());
        assert!(MagneticField::from_gauss(-1.0).is_err());
    }

    #[test]
    fn coupling_selection_and_stretched() {
        let atom = AtomModel::default();
        let s = ZeemanState::doubled(S12, -1).unwrap();
        let p = ZeemanState::doubled(P32, -3).unwrap();
        assert_relative_eq!(atom.coupling_amplitude(s, p, -1).unwrap().abs(), 1.0, epsilon = 1e-14);
        assert_eq!(atom.coupling_amplitude(s, p, 0).unwrap(), 0.0);
        assert_eq!(atom.coupling_amplitude(s, p, 1).unwrap(), 0.0);
        let d = ZeemanState::doubled(D52, 1).unwrap();
        assert!(matches!(atom.coupling_amplitude(s, d, 0), Err(Error::NotDipoleConnected(S12, D52))));
        let p12 = ZeemanState::doubled(P12, 1).unwrap();
        assert!(atom.coupling_amplitude(d, p12, 0).is_err());
    }

    #[test]
    fn coupling_sum_rule() {
        let atom = AtomModel::default();
        for (lo, up) in [(S12, P12), (S12, P32), (D32, P12), (D32, P32), (D52, P32)] {
            for u in atom.sublevels(&[up]).unwrap() {
                let mut sum = 0.0;
                for l in atom.sublevels(&[lo]).unwrap() {
                    for q in -1..=1 {
                        sum += atom.coupling_amplitude(l, u, q).unwrap().powi(2);
                    }
                }
                assert!((sum - 1.0).abs() < 1e-12, "{lo}->{up} {u}: {sum}");
            }
        }
    }

    #[test]
    fn sublevel_decays_reproduce_partial_rates() {
        let atom = AtomModel::default();
        for ch in atom.channels() {
            let parts = atom.sublevel_decays(ch);
            for u in atom.sublevels(&[ch.upper]).unwrap() {
                let s: f64 = parts.iter().filter(|p| p.0 == u).map(|p| p.2).sum();
                assert_relative_eq!(s, ch.partial_rate, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn bundled_file_round_trips_through_parser() {
        let a = AtomModel::from_toml_str(AtomModel::default_source()).unwrap();
        assert_eq!(a, AtomModel::default());
        assert!(AtomModel::from_toml_str("[levels.\"S1/2\"]\nj2 = 3\ng = 2.0\n").is_err());
    }
}
