use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{BlochConfig, LaserField};
use crate::atom::{LevelLabel, ZeemanState};
use crate::error::{Error, Result};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Jump {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

/// Generator on one interval where the set of active lasers is fixed.
#[derive(Clone, Debug)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    hamiltonian: DMatrix<Complex64>,
    h_eff: DMatrix<Complex64>,
    jumps: Vec<Jump>,
}

impl Segment {
    pub fn hamiltonian(&self) -> &DMatrix<Complex64> {
        &self.hamiltonian
    }

    /// `d rho / dt = -i (H_eff rho - rho H_eff^dagger) + sum_k r_k rho_uu |l><l|`
    pub fn apply(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let hr = &self.h_eff * rho;
        let rh = rho * self.h_eff.adjoint();
        let mut out = (hr - rh) * (-I);
        for j in &self.jumps {
            out[(j.to, j.to)] += rho[(j.from, j.from)] * j.rate;
        }
        out
    }

    /// Dense superoperator acting on row-major `vec(rho)`.
    pub fn liouvillian(&self) -> DMatrix<Complex64> {
        let n = self.h_eff.nrows();
        let h = &self.h_eff;
        let mut l = DMatrix::zeros(n * n, n * n);
        for i in 0..n {
            for j in 0..n {
                let row = i * n + j;
                for k in 0..n {
                    // -i H_ik rho_kj
                    l[(row, k * n + j)] += -I * h[(i, k)];
                    // +i rho_ik conj(H_jk)
                    l[(row, i * n + k)] += I * h[(j, k)].conj();
                }
            }
        }
        for jump in &self.jumps {
            l[(jump.to * n + jump.to, jump.from * n + jump.from)] += Complex64::new(jump.rate, 0.0);
        }
        l
    }

    /// Total outgoing decay rate of each basis state.
    pub fn loss_rates(&self) -> Vec<f64> {
        (0..self.h_eff.nrows()).map(|i| -2.0 * self.h_eff[(i, i)].im).collect()
    }
}

/// Piecewise-constant, time-dependent master-equation generator.
#[derive(Clone, Debug)]
pub struct Generator {
    basis: Vec<ZeemanState>,
    segments: Vec<Segment>,
}

impl Generator {
    pub fn basis(&self) -> &[ZeemanState] {
        &self.basis
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment_at(&self, t: f64) -> &Segment {
        self.segments
            .iter()
            .find(|s| t >= s.start && t < s.end)
            .unwrap_or_else(|| self.segments.last().expect("at least one segment"))
    }

    /// Switching times strictly inside `(t0, t1)`.
    pub fn breakpoints_within(&self, t0: f64, t1: f64) -> Vec<f64> {
        self.segments.iter().map(|s| s.start).filter(|&b| b > t0 && b < t1).collect()
    }

    pub fn apply(&self, t: f64, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        self.segment_at(t).apply(rho)
    }
}

/// Frame energies of each level, by walking the laser forest.
fn frame_offsets(lasers: &[LaserField], levels: &[LevelLabel]) -> Result<BTreeMap<LevelLabel, f64>> {
    // union-find over levels to reject loops
    let mut parent: BTreeMap<LevelLabel, LevelLabel> = levels.iter().map(|&l| (l, l)).collect();
    fn root(p: &BTreeMap<LevelLabel, LevelLabel>, mut x: LevelLabel) -> LevelLabel {
        while p[&x] != x {
            x = p[&x];
        }
        x
    }
    for laser in lasers {
        let (a, b) = (root(&parent, laser.lower), root(&parent, laser.upper));
        if a == b {
            let names: Vec<String> = lasers.iter().map(|l| format!("{}-{}", l.lower, l.upper)).collect();
            return Err(Error::FrameLoop(names.join(", ")));
        }
        parent.insert(a, b);
    }
    let mut offsets: BTreeMap<LevelLabel, f64> = BTreeMap::new();
    let mut order: Vec<LevelLabel> = levels.to_vec();
    order.sort_by_key(|l| l.energy_rank());
    for &seed in &order {
        if offsets.contains_key(&seed) {
            continue;
        }
        offsets.insert(seed, 0.0);
        let mut changed = true;
        while changed {
            changed = false;
            for laser in lasers {
                let lo = offsets.get(&laser.lower).copied();
                let up = offsets.get(&laser.upper).copied();
                match (lo, up) {
                    (Some(e), None) => {
                        offsets.insert(laser.upper, e - laser.detuning);
                        changed = true;
                    }
                    (None, Some(e)) => {
                        offsets.insert(laser.lower, e + laser.detuning);
                        changed = true;
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(offsets)
}

/// Builds the master-equation generator for `config`.
pub fn build_generator(config: &BlochConfig) -> Result<Generator> {
    build_with_sinks(config, &[])
}

/// As [`build_generator`], but decays into `sinks` (levels outside the basis)
/// are treated as pure population loss.
pub(crate) fn build_with_sinks(config: &BlochConfig, sinks: &[LevelLabel]) -> Result<Generator> {
    config.validate()?;
    let atom = &config.atom;
    let basis = atom.sublevels(&config.levels)?;
    let n = basis.len();
    let index: BTreeMap<ZeemanState, usize> = basis.iter().enumerate().map(|(i, s)| (*s, i)).collect();

    for laser in &config.lasers {
        atom.coupling_amplitude(
            ZeemanState { level: laser.lower, m: crate::angular::HalfInt::from_doubled(laser.lower.j2()) },
            ZeemanState { level: laser.upper, m: crate::angular::HalfInt::from_doubled(laser.upper.j2()) },
            0,
        )?;
    }
    let offsets = frame_offsets(&config.lasers, &config.levels)?;

    let mut diag = vec![0.0; n];
    for (i, s) in basis.iter().enumerate() {
        diag[i] = offsets[&s.level] + atom.zeeman_shift(*s, config.field)?;
    }

    let mut jumps = Vec::new();
    let mut loss = vec![0.0; n];
    for ch in atom.channels() {
        if ch.partial_rate == 0.0 || !config.levels.contains(&ch.upper) {
            continue;
        }
        let into_basis = config.levels.contains(&ch.lower);
        if !into_basis && !sinks.contains(&ch.lower) {
            return Err(Error::param(
                "levels",
                format!("decay {} -> {} leaves the included levels", ch.upper, ch.lower),
            ));
        }
        for (u, l, r) in atom.sublevel_decays(ch) {
            let from = index[&u];
            loss[from] += r;
            if into_basis {
                jumps.push(Jump { from, to: index[&l], rate: r });
            }
        }
    }

    let mut cuts: Vec<f64> = Vec::new();
    for laser in &config.lasers {
        if let super::ActiveWindow::Between { start, end } = laser.window {
            cuts.push(start);
            cuts.push(end);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut bounds = vec![f64::NEG_INFINITY];
    bounds.extend(cuts.iter().copied());
    bounds.push(f64::INFINITY);

    let mut segments = Vec::new();
    for w in bounds.windows(2) {
        let (start, end) = (w[0], w[1]);
        let probe = match (start.is_finite(), end.is_finite()) {
            (true, true) => 0.5 * (start + end),
            (true, false) => start,
            (false, true) => end - 1.0,
            (false, false) => 0.0,
        };
        let mut h = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            h[(i, i)] = Complex64::new(diag[i], 0.0);
        }
        for laser in config.lasers.iter().filter(|l| l.window.contains(probe)) {
            for (il, sl) in basis.iter().enumerate().filter(|(_, s)| s.level == laser.lower) {
                for (iu, su) in basis.iter().enumerate().filter(|(_, s)| s.level == laser.upper) {
                    let q2 = su.m.doubled() - sl.m.doubled();
                    if q2.abs() > 2 {
                        continue;
                    }
                    let q = q2 / 2;
                    let c = atom.coupling_amplitude(*sl, *su, q)?;
                    let v = laser.polarization.component(q) * (0.5 * laser.rabi_frequency * c);
                    h[(iu, il)] += v;
                    h[(il, iu)] += v.conj();
                }
            }
        }
        let mut h_eff = h.clone();
        for i in 0..n {
            h_eff[(i, i)] -= I * (0.5 * loss[i]);
        }
        segments.push(Segment { start, end, hamiltonian: h, h_eff, jumps: jumps.clone() });
    }

    Ok(Generator { basis, segments })
}
