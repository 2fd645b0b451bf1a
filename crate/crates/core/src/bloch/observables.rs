use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::generator::{build_generator, build_with_sinks};
use super::{BlochConfig, DensityMatrix};
use crate::atom::{LevelLabel, Line};
use crate::error::{Error, Result};

/// Stationary state with every laser of `config` switched on.
pub fn steady_state(config: &BlochConfig) -> Result<DensityMatrix> {
    let mut cfg = config.clone();
    for l in &mut cfg.lasers {
        l.window = super::ActiveWindow::Always;
    }
    let gen = build_generator(&cfg)?;
    let n = gen.basis().len();
    let mut l = gen.segments()[0].liouvillian();
    // replace the first equation by tr(rho) = 1
    let scale = l.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    for c in 0..n * n {
        l[(0, c)] = Complex64::new(0.0, 0.0);
    }
    for i in 0..n {
        l[(0, i * n + i)] = Complex64::new(scale, 0.0);
    }
    let mut rhs = DVector::zeros(n * n);
    rhs[0] = Complex64::new(scale, 0.0);
    let v =
        l.lu().solve(&rhs).ok_or_else(|| Error::Numeric("steady state is not unique (singular Liouvillian)".into()))?;
    let m = DMatrix::from_fn(n, n, |i, j| v[i * n + j]);
    let m = (&m + m.adjoint()).scale(0.5);
    DensityMatrix::new(gen.basis().to_vec(), m)
}

/// Photon emission rate per line: partial rate times upper-level population.
pub fn scattering_rates(config: &BlochConfig, rho: &DensityMatrix) -> BTreeMap<Line, f64> {
    let mut out = BTreeMap::new();
    for ch in config.atom.channels() {
        *out.entry(ch.line).or_insert(0.0) += ch.partial_rate * rho.level_population(ch.upper);
    }
    out
}

/// `R393 / R397` for a stationary state.
pub(crate) fn ratio_393_397(config: &BlochConfig, rho: &DensityMatrix) -> f64 {
    let r = scattering_rates(config, rho);
    let r397 = r.get(&Line::L397).copied().unwrap_or(0.0);
    r.get(&Line::L393).copied().unwrap_or(0.0) / r397
}

pub(crate) const PUMP_LEVELS: [LevelLabel; 4] = [LevelLabel::S12, LevelLabel::P12, LevelLabel::P32, LevelLabel::D32];
pub(crate) const COOLING_LEVELS: [LevelLabel; 3] = [LevelLabel::S12, LevelLabel::P12, LevelLabel::D32];

/// Config restricted to the pump phase: 854 nm lasers dropped, D5/2 removed
/// from the basis.
pub(crate) fn pump_phase(config: &BlochConfig) -> Result<BlochConfig> {
    if config.laser(Line::L850).is_none() {
        return Err(Error::NoEmissionPath("no 850 nm laser in the config".into()));
    }
    let mut cfg = config.without(&[Line::L854]);
    cfg.levels = PUMP_LEVELS.to_vec();
    for l in &mut cfg.lasers {
        l.window = super::ActiveWindow::Always;
    }
    Ok(cfg)
}

/// Cooling-laser stationary state (397 + 866 only) embedded in the pump basis.
pub(crate) fn cooled_state(config: &BlochConfig) -> Result<DensityMatrix> {
    let mut cool = config.without(&[Line::L850, Line::L854]);
    cool.levels = COOLING_LEVELS.to_vec();
    let rho = steady_state(&cool)?;
    let basis = config.atom.sublevels(&PUMP_LEVELS)?;
    let n = basis.len();
    let mut m = DMatrix::zeros(n, n);
    let idx: Vec<usize> =
        rho.basis().iter().map(|s| basis.iter().position(|b| b == s).expect("cooling basis is a subset")).collect();
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            m[(i, j)] = rho.entries()[(a, b)];
        }
    }
    DensityMatrix::new(basis, m)
}

/// Rate of population transfer into D5/2 when the 850 nm laser is switched
/// on, starting from the cooling stationary state: the inverse of the mean
/// time to reach D5/2.
pub fn pumping_rate(config: &BlochConfig) -> Result<f64> {
    let cfg = pump_phase(config)?;
    let gen = build_with_sinks(&cfg, &[LevelLabel::D52])?;
    let l = gen.segments()[0].liouvillian();
    let rho0 = cooled_state(config)?;
    let n = rho0.dim();
    let v0 = DVector::from_fn(n * n, |k, _| rho0.entries()[(k / n, k % n)]);
    let x =
        l.lu().solve(&v0).ok_or_else(|| Error::NoEmissionPath("D5/2 is not reachable from the cooled state".into()))?;
    let mean_time: f64 = -(0..n).map(|i| x[i * n + i].re).sum::<f64>();
    if !(mean_time > 0.0) || !mean_time.is_finite() {
        return Err(Error::NoEmissionPath("D5/2 is not reachable from the cooled state".into()));
    }
    Ok(1.0 / mean_time)
}
