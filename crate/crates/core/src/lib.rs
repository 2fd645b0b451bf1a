//! Simulation and analysis of a heralded single-photon link between two
//! trapped 40Ca+ ions: a sender driven into emitting 854 nm photons and a
//! receiver whose quantum jumps signal absorption.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod angular;
pub mod atom;
pub mod bloch;
pub mod channel;
pub mod cli;
pub mod config;
pub mod emitter;
pub mod error;
pub mod io;
pub mod receiver;
pub mod rng;

pub use error::{Error, Result};
