//! Calibrated laser settings.

use super::{BlochConfig, LaserField, Polarization};
use crate::atom::{two_pi_mhz, AtomModel, Line, MagneticField};

/// Default magnetic field, gauss.
pub const FIELD_GAUSS: f64 = 6.0;

/// Rabi frequencies (397, 866, 850, 854) and detunings (397, 866), MHz,
/// found by [`calibrate_three_photon`](super::calibrate_three_photon).
pub const CALIBRATED_MHZ: [f64; 6] = [73.9, 300.0, 80.8, 20.0, -60.0, -37.6];

/// The four cw lasers with the 850 nm detuning fixed by three-photon resonance,
/// `d397 - d866 + d850 = 0`. Arguments are angular frequencies.
pub fn three_photon_lasers(rabi: [f64; 4], d397: f64, d866: f64, polarization: Polarization) -> Vec<LaserField> {
    vec![
        LaserField::on(Line::L397, rabi[0], d397).with_polarization(polarization),
        LaserField::on(Line::L866, rabi[1], d866).with_polarization(polarization),
        LaserField::on(Line::L850, rabi[2], d866 - d397).with_polarization(polarization),
        LaserField::on(Line::L854, rabi[3], 0.0).with_polarization(polarization),
    ]
}

pub(crate) fn from_mhz(p: [f64; 6]) -> Vec<LaserField> {
    three_photon_lasers(
        [two_pi_mhz(p[0]), two_pi_mhz(p[1]), two_pi_mhz(p[2]), two_pi_mhz(p[3])],
        two_pi_mhz(p[4]),
        two_pi_mhz(p[5]),
        Polarization::isotropic(),
    )
}

/// cw photon generation: all four lasers on, isotropic polarization.
pub fn calibrated() -> BlochConfig {
    BlochConfig::new(AtomModel::default(), MagneticField::from_gauss(FIELD_GAUSS).expect("positive field"))
        .with_lasers(from_mhz(CALIBRATED_MHZ))
}
