use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::BlochConfig;
use crate::atom::{LevelLabel, Line, ZeemanState};
use crate::error::{Error, Result};

/// How finely the rate equations resolve the level structure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Resolution {
    /// One population per fine-structure level; pair rates are averaged over
    /// a uniform sublevel distribution.
    #[default]
    Level,
    /// One population per Zeeman sublevel.
    Sublevel,
}

/// Population rate equations, the incoherent limit of the Bloch equations
/// with coherences adiabatically eliminated per sublevel pair.
#[derive(Clone, Debug, PartialEq)]
pub struct RateModel {
    labels: Vec<LevelLabel>,
    /// `rates[(to, from)]`, s^-1.
    rates: DMatrix<f64>,
}

impl RateModel {
    /// Builds the model with every laser of `config` switched on.
    pub fn from_config(config: &BlochConfig, resolution: Resolution) -> Result<Self> {
        config.validate()?;
        let atom = &config.atom;
        let basis = atom.sublevels(&config.levels)?;
        let ns = basis.len();
        let sub = |s: ZeemanState| basis.iter().position(|&x| x == s).unwrap();
        let mut w = DMatrix::zeros(ns, ns);
        for ch in atom.channels() {
            if config.levels.contains(&ch.upper) && config.levels.contains(&ch.lower) {
                for (u, l, r) in atom.sublevel_decays(ch) {
                    w[(sub(l), sub(u))] += r;
                }
            }
        }
        for laser in &config.lasers {
            let (lo, up) = (laser.lower, laser.upper);
            let gamma = 0.5 * (atom.total_decay_rate(up)? + atom.total_decay_rate(lo)?);
            for sl in atom.sublevels(&[lo])? {
                for su in atom.sublevels(&[up])? {
                    let q2 = su.m.doubled() - sl.m.doubled();
                    if q2.abs() > 2 {
                        continue;
                    }
                    let q = q2 / 2;
                    let c = atom.coupling_amplitude(sl, su, q)?;
                    let omega = laser.rabi_frequency * c * laser.polarization.component(q).norm();
                    let delta = laser.detuning
                        - (atom.zeeman_shift(su, config.field)? - atom.zeeman_shift(sl, config.field)?);
                    let r = omega * omega * gamma / (2.0 * (delta * delta + gamma * gamma));
                    w[(sub(su), sub(sl))] += r;
                    w[(sub(sl), sub(su))] += r;
                }
            }
        }
        match resolution {
            Resolution::Sublevel => Ok(RateModel { labels: basis.iter().map(|s| s.level).collect(), rates: w }),
            Resolution::Level => {
                let labels = config.levels.clone();
                let n = labels.len();
                let lvl = |i: usize| labels.iter().position(|&l| l == basis[i].level).unwrap();
                let mut rates = DMatrix::zeros(n, n);
                for j in 0..ns {
                    let g = (basis[j].level.j2() + 1) as f64;
                    for i in 0..ns {
                        if lvl(i) != lvl(j) {
                            rates[(lvl(i), lvl(j))] += w[(i, j)] / g;
                        }
                    }
                }
                Ok(RateModel { labels, rates })
            }
        }
    }

    /// Total transfer rate between two levels, s^-1, for a uniform
    /// distribution over the sublevels of `from`.
    pub fn rate(&self, from: LevelLabel, to: LevelLabel) -> f64 {
        let mut total = 0.0;
        let mut count = 0.0;
        for j in (0..self.labels.len()).filter(|&j| self.labels[j] == from) {
            count += 1.0;
            for i in (0..self.labels.len()).filter(|&i| self.labels[i] == to && i != j) {
                total += self.rates[(i, j)];
            }
        }
        if count > 0.0 {
            total / count
        } else {
            0.0
        }
    }

    /// `dP/dt = A P`.
    fn generator(&self) -> DMatrix<f64> {
        let mut a = self.rates.clone();
        for j in 0..a.ncols() {
            a[(j, j)] = 0.0;
            let out: f64 = a.column(j).sum();
            a[(j, j)] = -out;
        }
        a
    }

    fn aggregate(&self, p: &DVector<f64>) -> BTreeMap<LevelLabel, f64> {
        let mut out = BTreeMap::new();
        for (l, v) in self.labels.iter().zip(p.iter()) {
            *out.entry(*l).or_insert(0.0) += v;
        }
        out
    }

    fn stationary(&self) -> Result<DVector<f64>> {
        let mut a = self.generator();
        let n = a.nrows();
        a.row_mut(0).fill(1.0);
        let mut b = DVector::zeros(n);
        b[0] = 1.0;
        a.lu().solve(&b).ok_or_else(|| Error::Numeric("rate equations have no unique stationary state".into()))
    }

    /// Stationary level populations.
    pub fn steady_state(&self) -> Result<BTreeMap<LevelLabel, f64>> {
        Ok(self.aggregate(&self.stationary()?))
    }

    pub fn scattering_rates(config: &BlochConfig, pops: &BTreeMap<LevelLabel, f64>) -> BTreeMap<Line, f64> {
        let mut out = BTreeMap::new();
        for ch in config.atom.channels() {
            *out.entry(ch.line).or_insert(0.0) += ch.partial_rate * pops.get(&ch.upper).copied().unwrap_or(0.0);
        }
        out
    }

    /// Inverse mean time to reach D5/2 once the 850 nm laser is switched on,
    /// starting from the stationary state of the cooling lasers.
    pub fn pumping_rate(config: &BlochConfig, resolution: Resolution) -> Result<f64> {
        if config.laser(Line::L850).is_none() {
            return Err(Error::NoEmissionPath("no 850 nm laser in the config".into()));
        }
        let mut pump = config.without(&[Line::L854]);
        pump.levels = super::observables::PUMP_LEVELS.to_vec();
        let model = RateModel::from_config(&pump, resolution)?;

        let mut cool = config.without(&[Line::L850, Line::L854]);
        cool.levels = pump.levels.clone();
        let cmodel = RateModel::from_config(&cool, resolution)?;
        // P3/2 is empty while cooling; solve on the remaining states
        let keep: Vec<usize> = (0..cmodel.labels.len()).filter(|&i| cmodel.labels[i] != LevelLabel::P32).collect();
        let sub = RateModel {
            labels: keep.iter().map(|&i| cmodel.labels[i]).collect(),
            rates: DMatrix::from_fn(keep.len(), keep.len(), |i, j| cmodel.rates[(keep[i], keep[j])]),
        };
        let ps = sub.stationary()?;
        let mut p0 = DVector::zeros(cmodel.labels.len());
        for (k, &i) in keep.iter().enumerate() {
            p0[i] = ps[k];
        }

        // decays into D5/2 leave the modelled states
        let mut a = model.generator();
        for ch in config.atom.channels_from(LevelLabel::P32).filter(|c| c.lower == LevelLabel::D52) {
            for j in 0..a.ncols() {
                if model.labels[j] == LevelLabel::P32 {
                    a[(j, j)] -= ch.partial_rate;
                }
            }
        }
        let x = a.lu().solve(&p0).ok_or_else(|| Error::NoEmissionPath("D5/2 is not reachable".into()))?;
        let mean = -x.sum();
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(Error::NoEmissionPath("D5/2 is not reachable".into()));
        }
        Ok(1.0 / mean)
    }
}
