//! Python bindings: configuration, the Bloch wave packet, receiver runs and
//! the analysis fits.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyList};

use ionlink::analysis::{self, CorrelationHistogram, JumpRecord};
use ionlink::bloch::{self, PumpSequence};
use ionlink::channel::{effective_absorption_prob, spectral_overlap, thin};
use ionlink::config::RunConfig;
use ionlink::emitter::{cw_stream, sample_many, ArrivalDensity};
use ionlink::receiver::{simulate, EndCause};

fn err(e: ionlink::Error) -> PyErr {
    match e {
        ionlink::Error::Config { .. } | ionlink::Error::InvalidParameter { .. } | ionlink::Error::Parse { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py(py: Python<'_>, v: &toml::Value) -> PyResult<Py<PyAny>> {
    Ok(match v {
        toml::Value::String(s) => s.into_pyobject(py)?.into_any().unbind(),
        toml::Value::Integer(i) => i.into_pyobject(py)?.into_any().unbind(),
        toml::Value::Float(x) => x.into_pyobject(py)?.into_any().unbind(),
        toml::Value::Boolean(b) => PyBool::new(py, *b).to_owned().into_any().unbind(),
        toml::Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any().unbind()
        }
        other => other.to_string().into_pyobject(py)?.into_any().unbind(),
    })
}

/// Run configuration. Built from flat TOML text; missing keys take defaults.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = ""))]
    fn new(toml: &str) -> PyResult<Self> {
        Ok(PyConfig { inner: RunConfig::from_toml_str(toml).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyConfig { inner: RunConfig::parse(std::path::Path::new(path)).map_err(err)? })
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        RunConfig::keys().iter().map(|k| k.key).collect()
    }

    fn get(&self, py: Python<'_>, key: &str) -> PyResult<Option<Py<PyAny>>> {
        if !RunConfig::keys().iter().any(|k| k.key == key) {
            return Err(PyValueError::new_err(format!("unknown key `{key}`")));
        }
        self.inner.entries().iter().find(|(k, _)| *k == key).map(|(_, v)| to_py(py, v)).transpose()
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    /// Photon arrival density of one pump pulse.
    fn wavepacket(&self) -> PyResult<Wavepacket> {
        let seq = PumpSequence { samples: self.inner.samples as usize, ..PumpSequence::new(self.inner.pump_window) };
        let wp = bloch::wavepacket(&self.inner.bloch().map_err(err)?, &seq).map_err(err)?;
        Ok(Wavepacket { inner: wp })
    }

    /// Rate of pumping into D5/2 with all lasers on, s^-1.
    fn pumping_rate(&self) -> PyResult<f64> {
        bloch::pumping_rate(&self.inner.bloch().map_err(err)?).map_err(err)
    }

    /// Steady-state scattering rates per line, s^-1.
    fn scattering_rates(&self) -> PyResult<BTreeMap<String, f64>> {
        let cfg = self.inner.bloch().map_err(err)?;
        let rho = bloch::steady_state(&cfg).map_err(err)?;
        Ok(bloch::scattering_rates(&cfg, &rho).into_iter().map(|(l, r)| (l.to_string(), r)).collect())
    }

    /// `(power, T1)` pairs over `t1scan.powers`.
    fn t1_scan(&self) -> PyResult<Vec<(f64, f64)>> {
        let curve = bloch::t1_vs_power(&self.inner.bloch().map_err(err)?, &self.inner.powers).map_err(err)?;
        Ok(curve.into_iter().map(|(p, k)| (p, 1.0 / k)).collect())
    }

    /// Spectral overlap of the emitted photon with the receiver line, and
    /// the resulting absorption probability for `channel.p_peak`.
    fn absorption_probability(&self) -> PyResult<(f64, f64)> {
        let overlap = spectral_overlap(&self.inner.spectrum().map_err(err)?, &self.inner.absorber().map_err(err)?);
        Ok((overlap, effective_absorption_prob(self.inner.p_peak, overlap).map_err(err)?))
    }

    /// Receiver driven by cw photons for `duration` seconds.
    #[pyo3(signature = (duration, seed))]
    fn run_cw(&self, duration: f64, seed: u64) -> PyResult<CwRun> {
        let c = &self.inner;
        let weights = c.spectrum().map_err(err)?.weights();
        let photons = cw_stream(duration, c.cw_rate, &weights, seed).map_err(err)?;
        let photons = thin(photons, &c.budget(), seed).map_err(err)?;
        let traj = simulate(duration, photons, &c.receiver(), seed).map_err(err)?;
        let counts = [EndCause::Pump, EndCause::Spontaneous, EndCause::Background, EndCause::Absorption]
            .into_iter()
            .map(|e| (e.name().to_string(), traj.count(e)))
            .collect();
        Ok(CwRun { dark_durations: traj.dark_durations(), transitions: counts })
    }

    fn __repr__(&self) -> String {
        format!("Config({} explicit keys)", self.inner.explicit.len())
    }
}

#[pyclass(frozen)]
struct Wavepacket {
    inner: bloch::Wavepacket,
}

#[pymethods]
impl Wavepacket {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    #[getter]
    fn density(&self) -> Vec<f64> {
        self.inner.density.clone()
    }

    #[getter]
    fn t1(&self) -> f64 {
        self.inner.t1
    }

    #[getter]
    fn pump_probability(&self) -> f64 {
        self.inner.pump_probability
    }

    /// Draws `n` arrival times from the normalized density.
    fn sample(&self, n: usize, seed: u64) -> PyResult<Vec<f64>> {
        let g = ArrivalDensity::from_wavepacket(&self.inner).map_err(err)?;
        Ok(sample_many(&g, n, seed))
    }
}

#[pyclass(frozen, get_all)]
struct CwRun {
    dark_durations: Vec<f64>,
    transitions: BTreeMap<String, usize>,
}

/// Maximum-likelihood exponential fit; returns `(tau, stderr, n)`.
#[pyfunction]
fn fit_exponential(durations: Vec<f64>) -> PyResult<(f64, f64, usize)> {
    let f = analysis::fit_exponential(&durations).map_err(err)?;
    Ok((f.tau, f.tau_stderr, f.n_samples))
}

/// Histogram of jump times folded on the preceding trigger.
#[pyfunction]
fn correlate(trigger_times: Vec<f64>, jump_times: Vec<f64>, period: f64, bin: f64) -> PyResult<Vec<u64>> {
    let jumps: Vec<JumpRecord> = jump_times
        .iter()
        .map(|&t| JumpRecord {
            dark_start: t,
            dark_end: t,
            first_bright_detection: t,
            start_truncated: false,
            end_truncated: false,
        })
        .collect();
    Ok(analysis::correlate(&trigger_times, &jumps, period, bin).map_err(err)?.counts)
}

/// Rise/decay fit of a correlation histogram. Keys: t0, tau_rise,
/// tau_decay, amplitude, background_per_bin, chi2, dof.
#[pyfunction]
fn fit_correlation(counts: Vec<u64>, period: f64, bin: f64) -> PyResult<BTreeMap<&'static str, f64>> {
    let mut h = CorrelationHistogram::empty(period, bin).map_err(err)?;
    if h.counts.len() != counts.len() {
        return Err(PyValueError::new_err(format!("expected {} bins, got {}", h.counts.len(), counts.len())));
    }
    h.counts = counts;
    let f = analysis::fit_correlation(&h).map_err(err)?;
    Ok(BTreeMap::from([
        ("t0", f.t0),
        ("tau_rise", f.tau_rise),
        ("tau_decay", f.tau_decay),
        ("amplitude", f.amplitude),
        ("background_per_bin", f.background_per_bin),
        ("chi2", f.chi2),
        ("dof", f.dof as f64),
    ]))
}

/// Runs the command-line tool in-process and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    ionlink::cli::main_with_args(std::iter::once("ionlink".to_string()).chain(args))
}

#[pymodule]
#[pyo3(name = "ionlink")]
fn ionlink_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<Wavepacket>()?;
    m.add_class::<CwRun>()?;
    m.add_function(wrap_pyfunction!(fit_exponential, m)?)?;
    m.add_function(wrap_pyfunction!(correlate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
