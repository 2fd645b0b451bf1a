use nalgebra::DMatrix;
use num_complex::Complex64;

use super::generator::{build_generator, Generator};
use super::{BlochConfig, DensityMatrix, Tolerances};
use crate::error::{Error, Result};

type M = DMatrix<Complex64>;

// Dormand-Prince 5(4) tableau
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvolveStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub min_step: f64,
    pub max_step: f64,
    /// Largest `|tr(rho) - 1|` seen at an output point.
    pub max_trace_error: f64,
    /// Most negative eigenvalue seen at an output point (0 if none).
    pub min_eigenvalue: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub stats: EvolveStats,
}

/// Integrates the master equation from `rho0` at t = 0 and records the state
/// at every time in `grid` (each within `[0, duration]`, ascending).
pub fn evolve(config: &BlochConfig, rho0: &DensityMatrix, duration: f64, grid: &[f64]) -> Result<Trajectory> {
    let gen = build_generator(config)?;
    if rho0.basis() != gen.basis() {
        return Err(Error::InvalidState("initial state basis does not match the config".into()));
    }
    rho0.validate()?;
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::param("duration", "must be > 0"));
    }
    for (i, &t) in grid.iter().enumerate() {
        if !(0.0..=duration).contains(&t) || (i > 0 && t < grid[i - 1]) {
            return Err(Error::param("output_grid", "times must be ascending within [0, duration]"));
        }
    }
    let mut integ = Integrator::new(&gen, config.tolerances);
    let mut rho = rho0.entries().clone();
    let mut t = 0.0;
    let mut times = Vec::with_capacity(grid.len());
    let mut states = Vec::with_capacity(grid.len());
    let mut stats = EvolveStats { min_step: f64::INFINITY, ..Default::default() };
    for &target in grid {
        integ.advance(&mut rho, &mut t, target)?;
        let h = (&rho + rho.adjoint()).scale(0.5);
        let state = DensityMatrix::new(gen.basis().to_vec(), h)?;
        let trace_err = (state.trace() - 1.0).abs();
        let eig = state.min_eigenvalue();
        stats.max_trace_error = stats.max_trace_error.max(trace_err);
        stats.min_eigenvalue = stats.min_eigenvalue.min(eig);
        if let Err(e) = state.validate() {
            return Err(Error::Numeric(format!("at t = {target:e} s: {e} ({})", integ.diagnostics())));
        }
        times.push(target);
        states.push(state);
    }
    stats.accepted_steps = integ.accepted;
    stats.rejected_steps = integ.rejected;
    stats.min_step = integ.min_step;
    stats.max_step = integ.max_step;
    Ok(Trajectory { times, states, stats })
}

fn axpy(y: &mut M, a: f64, x: &M) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += xi * a;
    }
}

pub(crate) struct Integrator<'a> {
    gen: &'a Generator,
    tol: Tolerances,
    h: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub min_step: f64,
    pub max_step: f64,
}

impl<'a> Integrator<'a> {
    pub fn new(gen: &'a Generator, tol: Tolerances) -> Self {
        Integrator { gen, tol, h: 0.0, accepted: 0, rejected: 0, min_step: f64::INFINITY, max_step: 0.0 }
    }

    fn diagnostics(&self) -> String {
        format!(
            "accepted {}, rejected {}, step range [{:e}, {:e}] s",
            self.accepted, self.rejected, self.min_step, self.max_step
        )
    }

    /// Advances `rho` from `*t` to `target`, stopping exactly at every
    /// laser switching time in between.
    pub fn advance(&mut self, rho: &mut M, t: &mut f64, target: f64) -> Result<()> {
        let mut stops = self.gen.breakpoints_within(*t, target);
        stops.push(target);
        for stop in stops {
            self.advance_smooth(rho, t, stop)?;
        }
        Ok(())
    }

    fn advance_smooth(&mut self, rho: &mut M, t: &mut f64, target: f64) -> Result<()> {
        if target <= *t {
            return Ok(());
        }
        let seg = self.gen.segment_at(0.5 * (*t + target)).clone();
        if self.h <= 0.0 {
            let scale = seg.apply(rho).iter().map(|z| z.norm()).fold(0.0, f64::max);
            self.h = if scale > 0.0 { 0.01 / scale } else { target - *t };
        }
        let mut k: Vec<M> = Vec::with_capacity(7);
        let n = rho.nrows();
        while *t < target {
            if self.accepted + self.rejected >= self.tol.max_steps {
                return Err(Error::Numeric(format!("step limit reached at t = {:e} s; {}", *t, self.diagnostics())));
            }
            let remaining = target - *t;
            let last = self.h >= remaining;
            let h = if last { remaining } else { self.h };
            if h < 1e-15 * t.abs().max(1e-12) {
                return Err(Error::Numeric(format!("step size underflow at t = {:e} s; {}", *t, self.diagnostics())));
            }
            k.clear();
            k.push(seg.apply(rho));
            #[allow(clippy::needless_range_loop)]
            for s in 1..7 {
                let mut y = rho.clone();
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = A[s][j];
                    if a != 0.0 {
                        axpy(&mut y, h * a, kj);
                    }
                }
                k.push(seg.apply(&y));
            }
            let mut y5 = rho.clone();
            let mut err = M::zeros(n, n);
            for s in 0..7 {
                if B5[s] != 0.0 {
                    axpy(&mut y5, h * B5[s], &k[s]);
                }
                let d = B5[s] - B4[s];
                if d != 0.0 {
                    axpy(&mut err, h * d, &k[s]);
                }
            }
            let mut ratio: f64 = 0.0;
            for ((e, a), b) in err.iter().zip(rho.iter()).zip(y5.iter()) {
                let sc = self.tol.atol + self.tol.rtol * a.norm().max(b.norm());
                ratio = ratio.max(e.norm() / sc);
            }
            if !ratio.is_finite() {
                return Err(Error::Numeric(format!("non-finite state at t = {:e} s; {}", *t, self.diagnostics())));
            }
            if ratio <= 1.0 {
                *rho = y5;
                *t = if last { target } else { *t + h };
                self.accepted += 1;
                self.min_step = self.min_step.min(h);
                self.max_step = self.max_step.max(h);
                let grow = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || grow < 1.0 {
                    self.h = h * grow;
                }
            } else {
                self.rejected += 1;
                self.h = h * (0.9 * ratio.powf(-0.2)).clamp(0.1, 0.9);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angular::HalfInt;
    use crate::atom::{two_pi_mhz, AtomModel, LevelLabel::*, Line, MagneticField, ZeemanState};
    use crate::bloch::{LaserField, Polarization};

    fn state(level: crate::atom::LevelLabel, m2: i32) -> ZeemanState {
        ZeemanState { level, m: HalfInt::from_doubled(m2) }
    }

    #[test]
    fn two_level_rabi() {
        let mut atom = AtomModel::default();
        atom.set_partial_rate(P32, S12, 0.0).unwrap();
        atom.set_partial_rate(P32, D52, 0.0).unwrap();
        atom.set_partial_rate(P32, D32, 0.0).unwrap();
        let omega = two_pi_mhz(1.0);
        let cfg =
            BlochConfig::new(atom, MagneticField::default()).with_lasers(vec![
                LaserField::on(Line::L393, omega, 0.0).with_polarization(Polarization::sigma_minus())
            ]);
        let basis = cfg.atom.sublevels(&cfg.levels).unwrap();
        let rho0 = DensityMatrix::pure(basis, state(S12, -1)).unwrap();
        let grid: Vec<f64> = (0..=500).map(|i| i as f64 * 1e-8).collect();
        let traj = evolve(&cfg, &rho0, 5e-6, &grid).unwrap();
        let mut worst: f64 = 0.0;
        for (t, rho) in traj.times.iter().zip(&traj.states) {
            let exact = (omega * t / 2.0).sin().powi(2);
            worst = worst.max((rho.population(state(P32, -3)) - exact).abs());
        }
        assert!(worst < 1e-6, "{worst:e}");
    }

    #[test]
    fn pure_decay() {
        let cfg = BlochConfig::new(AtomModel::default(), MagneticField::from_gauss(3.0).unwrap());
        let basis = cfg.atom.sublevels(&cfg.levels).unwrap();
        let rho0 = DensityMatrix::pure(basis, state(P32, 1)).unwrap();
        let gamma = cfg.atom.total_decay_rate(P32).unwrap();
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 4e-10).collect();
        let traj = evolve(&cfg, &rho0, 4e-8, &grid).unwrap();
        for (t, rho) in traj.times.iter().zip(&traj.states) {
            let exact = (-gamma * t).exp();
            let p = rho.level_population(P32);
            assert!((p - exact).abs() <= 1e-6 * exact, "t={t} p={p} exact={exact}");
        }
    }
}
