//! Flat dotted-key run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use toml::Value;

use crate::analysis::JumpParams;
use crate::atom::{two_pi_mhz, AtomModel, Line, MagneticField};
use crate::bloch::presets::{CALIBRATED_MHZ, FIELD_GAUSS};
use crate::bloch::{BlochConfig, LaserField, Polarization, Tolerances};
use crate::channel::{AbsorberLine, ChannelBudget, PhotonSpectrum, SpectralComponent};
use crate::emitter::{ArrivalDensity, SequenceSchedule};
use crate::error::{Error, Result};
use crate::receiver::ReceiverParams;

/// Accepted range of a numeric key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Check {
    Any,
    NonNegative,
    Positive,
    Probability,
}

trait Field: Sized {
    fn to_value(&self) -> Option<Value>;
    fn from_value(v: &Value) -> Option<Self>;
    fn check(&self, _c: Check) -> bool {
        true
    }
}

impl Field for f64 {
    fn to_value(&self) -> Option<Value> {
        Some(Value::Float(*self))
    }
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }
    fn check(&self, c: Check) -> bool {
        self.is_finite()
            && match c {
                Check::Any => true,
                Check::NonNegative => *self >= 0.0,
                Check::Positive => *self > 0.0,
                Check::Probability => (0.0..=1.0).contains(self),
            }
    }
}

impl Field for u64 {
    fn to_value(&self) -> Option<Value> {
        Some(match i64::try_from(*self) {
            Ok(i) => Value::Integer(i),
            Err(_) => Value::String(self.to_string()),
        })
    }
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Integer(i) => u64::try_from(*i).ok(),
            Value::String(s) => s.parse().ok(),
            _ => None,
        }
    }
    fn check(&self, c: Check) -> bool {
        c != Check::Positive || *self > 0
    }
}

impl Field for Option<u64> {
    fn to_value(&self) -> Option<Value> {
        self.and_then(|s| s.to_value())
    }
    fn from_value(v: &Value) -> Option<Self> {
        u64::from_value(v).map(Some)
    }
}

impl Field for bool {
    fn to_value(&self) -> Option<Value> {
        Some(Value::Boolean(*self))
    }
    fn from_value(v: &Value) -> Option<Self> {
        v.as_bool()
    }
}

impl Field for String {
    fn to_value(&self) -> Option<Value> {
        Some(Value::String(self.clone()))
    }
    fn from_value(v: &Value) -> Option<Self> {
        v.as_str().map(str::to_string)
    }
}

impl Field for Vec<f64> {
    fn to_value(&self) -> Option<Value> {
        Some(Value::Array(self.iter().map(|&x| Value::Float(x)).collect()))
    }
    fn from_value(v: &Value) -> Option<Self> {
        v.as_array()?.iter().map(f64::from_value).collect()
    }
    fn check(&self, c: Check) -> bool {
        self.iter().all(|x| x.check(c))
    }
}

/// Documentation of one configuration key.
#[derive(Clone, Debug)]
pub struct KeyDoc {
    pub key: &'static str,
    pub unit: &'static str,
    /// The default encodes a modelling assumption rather than a measured value.
    pub assumption: bool,
    pub doc: &'static str,
}

macro_rules! run_config {
    ($( $key:literal => $field:ident : $ty:ty = $default:expr, $check:ident, $unit:literal, $assume:literal, $doc:literal; )*) => {
        /// Every setting of a run. Keys are listed in [`RunConfig::keys`].
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $( pub $field: $ty, )*
            /// Keys set explicitly in the parsed file.
            pub explicit: Vec<String>,
            /// Directory that relative paths are resolved against.
            pub base_dir: PathBuf,
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig {
                    $( $field: $default, )*
                    explicit: Vec::new(),
                    base_dir: PathBuf::from("."),
                }
            }
        }

        impl RunConfig {
            pub fn keys() -> Vec<KeyDoc> {
                vec![$( KeyDoc { key: $key, unit: $unit, assumption: $assume, doc: $doc }, )*]
            }

            /// `(key, value)` for every key with a value, in schema order.
            pub fn entries(&self) -> Vec<(&'static str, Value)> {
                let mut out = Vec::new();
                $( if let Some(v) = self.$field.to_value() { out.push(($key, v)); } )*
                out
            }

            fn set(&mut self, key: &str, v: &Value) -> Result<()> {
                match key {
                    $( $key => {
                        let x = <$ty as Field>::from_value(v)
                            .ok_or_else(|| Error::config(key, format!("expected {}", stringify!($ty))))?;
                        if !x.check(Check::$check) {
                            return Err(Error::config(key, check_reason(Check::$check)));
                        }
                        self.$field = x;
                    } )*
                    _ => return Err(Error::config(key, "unknown key")),
                }
                Ok(())
            }
        }
    };
}

fn check_reason(c: Check) -> &'static str {
    match c {
        Check::Any => "must be finite",
        Check::NonNegative => "must be finite and >= 0",
        Check::Positive => "must be finite and > 0",
        Check::Probability => "must lie in [0, 1]",
    }
}

run_config! {
    "run.seed" => seed: Option<u64> = None, Any, "", false, "Random seed. The --seed flag takes precedence.";
    "run.duration_s" => duration_s: f64 = 60.0, Positive, "s", false, "Simulated time of cw-run.";
    "run.triggers" => triggers: u64 = 1_000_000, Positive, "", false, "Sequence repetitions of seq-run.";

    "atom.model_file" => atom_model_file: String = String::new(), Any, "path", false, "Atom model data file; empty selects the bundled 40Ca+ model.";
    "field.gauss" => field_gauss: f64 = FIELD_GAUSS, NonNegative, "G", true, "Magnetic field magnitude at both ions.";

    "laser.397.rabi_mhz" => l397_rabi: f64 = CALIBRATED_MHZ[0], NonNegative, "MHz", true, "397 nm Rabi frequency (divided by 2 pi).";
    "laser.397.detuning_mhz" => l397_detuning: f64 = CALIBRATED_MHZ[4], Any, "MHz", true, "397 nm detuning from the field-free line.";
    "laser.397.polarization" => l397_pol: String = "isotropic".into(), Any, "", true, "One of isotropic, sigma-, pi, sigma+.";
    "laser.866.rabi_mhz" => l866_rabi: f64 = CALIBRATED_MHZ[1], NonNegative, "MHz", true, "866 nm Rabi frequency.";
    "laser.866.detuning_mhz" => l866_detuning: f64 = CALIBRATED_MHZ[5], Any, "MHz", true, "866 nm detuning.";
    "laser.866.polarization" => l866_pol: String = "isotropic".into(), Any, "", true, "866 nm polarization.";
    "laser.850.rabi_mhz" => l850_rabi: f64 = CALIBRATED_MHZ[2], NonNegative, "MHz", true, "850 nm Rabi frequency at relative power 1.";
    "laser.850.detuning_mhz" => l850_detuning: f64 = CALIBRATED_MHZ[5] - CALIBRATED_MHZ[4], Any, "MHz", true, "850 nm detuning; three-photon resonance needs d397 - d866 + d850 = 0.";
    "laser.850.polarization" => l850_pol: String = "isotropic".into(), Any, "", true, "850 nm polarization.";
    "laser.850.power" => l850_power: f64 = 1.0, NonNegative, "rel", false, "850 nm power relative to the calibrated setting; the Rabi frequency scales with its square root.";
    "laser.854.rabi_mhz" => l854_rabi: f64 = CALIBRATED_MHZ[3], NonNegative, "MHz", true, "854 nm Rabi frequency (cw generation and repumping).";
    "laser.854.detuning_mhz" => l854_detuning: f64 = 0.0, Any, "MHz", true, "854 nm detuning.";
    "laser.854.polarization" => l854_pol: String = "isotropic".into(), Any, "", true, "854 nm polarization.";

    "bloch.rtol" => rtol: f64 = Tolerances::default().rtol, Positive, "", false, "Relative integrator tolerance.";
    "bloch.atol" => atol: f64 = Tolerances::default().atol, Positive, "", false, "Absolute integrator tolerance.";
    "bloch.samples" => samples: u64 = 2001, Positive, "", false, "Grid points of the wave packet.";
    "t1scan.powers" => powers: Vec<f64> = vec![0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0], Positive, "rel", false, "Relative 850 nm powers of the T1 scan, strictly increasing.";

    "schedule.repetition_rate_hz" => repetition_rate: f64 = 125e3, Positive, "Hz", false, "Sequence repetition rate.";
    "schedule.cooling_s" => cooling: f64 = 3e-6, NonNegative, "s", true, "Doppler cooling phase; the herald follows it.";
    "schedule.pump_window_s" => pump_window: f64 = 4e-6, Positive, "s", true, "850 nm pulse length.";
    "schedule.repump_s" => repump: f64 = 1e-6, NonNegative, "s", true, "854 nm repump phase.";

    "emitter.pump_success" => pump_success: f64 = 0.95, Probability, "", true, "Probability that a pump pulse emits a photon.";
    "emitter.arrival" => arrival: String = "bloch".into(), Any, "", false, "Arrival density: bloch (wave packet of the laser settings) or exponential.";
    "emitter.t1_s" => t1: f64 = 1.1e-6, Positive, "s", false, "Wave packet duration when emitter.arrival = exponential.";
    "emitter.cw_rate_hz" => cw_rate: f64 = 750e3, NonNegative, "Hz", true, "cw emission rate at the ion, before collection.";

    "channel.collection" => collection: f64 = 0.04, Probability, "", false, "Collection efficiency of the objective.";
    "channel.fiber_coupling" => fiber_coupling: f64 = 0.6, Probability, "", true, "Coupling into the single-mode fiber.";
    "channel.fiber_transmission" => fiber_transmission: f64 = 2.0 / 3.0, Probability, "", true, "Transmission from fiber input to the receiver ion.";
    "channel.detector" => detector: f64 = 0.24, Probability, "", false, "Quantum efficiency of the photon counter.";
    "channel.photon_fwhm_mhz" => photon_fwhm: f64 = 6.0, Positive, "MHz", false, "Lorentzian width of each photon component.";
    "channel.photon_detuning_mhz" => photon_detuning: f64 = 0.0, Any, "MHz", false, "Photon offset from the receiver line.";
    "channel.component_weights" => component_weights: Vec<f64> = Vec::new(), NonNegative, "", true, "Weights of the three photon components (q = -1, 0, +1); empty uses squared coupling amplitudes.";
    "channel.p_peak" => p_peak: f64 = 4.3e-4, Probability, "", false, "Absorption probability of a narrow laser on the line peak.";
    "channel.scan_span_mhz" => scan_span: f64 = 40.0, Positive, "MHz", false, "Half span of the overlap table.";
    "channel.scan_points" => scan_points: u64 = 161, Positive, "", false, "Rows of the overlap table.";

    "receiver.pump_rate" => pump_rate: f64 = 2.0, NonNegative, "1/s", true, "Bright to dark pumping by the attenuated 850 nm laser.";
    "receiver.spontaneous_rate" => spontaneous_rate: f64 = 1.0 / 1.168, NonNegative, "1/s", false, "Inverse D5/2 lifetime.";
    "receiver.background_rate" => background_rate: f64 = 1.0 / 1.022 - 1.0 / 1.168, NonNegative, "1/s", true, "Dark to bright rate from stray 854 nm light.";
    "receiver.p_abs" => p_abs: f64 = 2.5e-4 / 0.9347, Probability, "", true, "Absorption probability per incident photon.";
    "receiver.p_jump" => p_jump: f64 = 0.9347, Probability, "", false, "Probability that an absorption returns the ion to S1/2.";
    "receiver.include_d32_path" => include_d32: bool = false, Any, "", true, "Also count decays through D3/2 as jumps.";
    "receiver.d32_branching" => d32_branching: f64 = 1.0 - 0.9347 - 1.35 / (21.49 / 0.9347), Probability, "", false, "P3/2 to D3/2 branching used with include_d32_path.";
    "receiver.bright_rate" => bright_rate: f64 = 3e5, NonNegative, "1/s", false, "397 nm detection rate while bright.";
    "receiver.dark_count_rate" => dark_count_rate: f64 = 200.0, NonNegative, "1/s", true, "Detector dark counts.";
    "receiver.start_bright" => start_bright: bool = true, Any, "", false, "Initial receiver state.";

    "analysis.bin_s" => jump_bin: f64 = 1e-3, Positive, "s", false, "Bin width of jump detection.";
    "analysis.threshold_fraction" => threshold_fraction: f64 = 0.1, Positive, "", false, "Threshold as a fraction of the expected bright counts per bin.";
    "analysis.hysteresis" => hysteresis: u64 = 2, Positive, "bins", false, "Bins needed to confirm a level change.";
    "analysis.histogram_bin_s" => dark_hist_bin: f64 = 50e-3, Positive, "s", false, "Bin width of the dark-period histogram.";
    "analysis.correlation_bin_s" => correlation_bin: f64 = 0.8e-6, Positive, "s", false, "Bin width of the trigger correlation.";

    "output.write_events" => write_events: bool = false, Any, "", false, "Write the photon event log (one row per emitted photon, including lost ones).";
    "output.write_detections" => write_detections: bool = true, Any, "", false, "Write every 397 nm detection.";
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            _ => out.push((key, v.clone())),
        }
    }
}

fn polarization(key: &str, name: &str) -> Result<Polarization> {
    match name {
        "isotropic" => Ok(Polarization::isotropic()),
        "sigma-" => Ok(Polarization::sigma_minus()),
        "pi" => Ok(Polarization::pi()),
        "sigma+" => Ok(Polarization::sigma_plus()),
        _ => Err(Error::config(key, format!("unknown polarization `{name}`"))),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_in(text, Path::new("."))
    }

    fn from_toml_in(text: &str, base_dir: &Path) -> Result<Self> {
        let table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::Parse { path: "config".into(), reason: e.to_string() })?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat);
        let mut cfg = RunConfig { base_dir: base_dir.to_path_buf(), ..RunConfig::default() };
        for (k, v) in &flat {
            cfg.set(k, v)?;
            cfg.explicit.push(k.clone());
        }
        cfg.explicit.sort();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative paths inside it resolve
    /// against its directory.
    pub fn parse(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_in(&text, base)
    }

    /// Every key, one `key = value` line each, in schema order.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Keys whose value is a default that encodes an assumption.
    pub fn provenance(&self) -> Vec<(&'static str, Value, &'static str)> {
        let docs = Self::keys();
        self.entries()
            .into_iter()
            .filter_map(|(k, v)| {
                let d = docs.iter().find(|d| d.key == k)?;
                let from = if self.explicit.iter().any(|e| e == k) { "config" } else { "default" };
                d.assumption.then_some((k, v, from))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (k, p) in [
            ("laser.397.polarization", &self.l397_pol),
            ("laser.866.polarization", &self.l866_pol),
            ("laser.850.polarization", &self.l850_pol),
            ("laser.854.polarization", &self.l854_pol),
        ] {
            polarization(k, p)?;
        }
        if !["bloch", "exponential"].contains(&self.arrival.as_str()) {
            return Err(Error::config("emitter.arrival", "expected bloch or exponential"));
        }
        if self.powers.is_empty() || self.powers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("t1scan.powers", "must be non-empty and strictly increasing"));
        }
        if !self.component_weights.is_empty()
            && (self.component_weights.len() != 3 || self.component_weights.iter().sum::<f64>() <= 0.0)
        {
            return Err(Error::config("channel.component_weights", "expected three weights with a positive sum"));
        }
        if self.samples < 16 {
            return Err(Error::config("bloch.samples", "need at least 16 points"));
        }
        if self.scan_points < 2 {
            return Err(Error::config("channel.scan_points", "need at least 2 points"));
        }
        self.schedule().validate().map_err(|e| Error::config("schedule.repetition_rate_hz", e.to_string()))?;
        self.receiver().validate().map_err(|e| Error::config("receiver.p_jump", e.to_string()))?;
        self.jump_params()
            .check_rates(self.dark_count_rate, self.bright_rate)
            .map_err(|e| Error::config("analysis.threshold_fraction", e.to_string()))?;
        self.atom()?;
        Ok(())
    }

    pub fn atom(&self) -> Result<AtomModel> {
        if self.atom_model_file.is_empty() {
            return Ok(AtomModel::default());
        }
        let path = self.base_dir.join(&self.atom_model_file);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::config("atom.model_file", format!("{}: {e}", path.display())))?;
        AtomModel::from_toml_str(&text).map_err(|e| Error::config("atom.model_file", e.to_string()))
    }

    pub fn field(&self) -> Result<MagneticField> {
        MagneticField::from_gauss(self.field_gauss).map_err(|e| Error::config("field.gauss", e.to_string()))
    }

    /// Sender lasers; the 850 nm Rabi frequency includes the relative power.
    pub fn lasers(&self) -> Result<Vec<LaserField>> {
        let laser = |line, rabi: f64, det: f64, key, pol: &str| -> Result<LaserField> {
            Ok(LaserField::on(line, two_pi_mhz(rabi), two_pi_mhz(det)).with_polarization(polarization(key, pol)?))
        };
        Ok(vec![
            laser(Line::L397, self.l397_rabi, self.l397_detuning, "laser.397.polarization", &self.l397_pol)?,
            laser(Line::L866, self.l866_rabi, self.l866_detuning, "laser.866.polarization", &self.l866_pol)?,
            laser(
                Line::L850,
                self.l850_rabi * self.l850_power.sqrt(),
                self.l850_detuning,
                "laser.850.polarization",
                &self.l850_pol,
            )?,
            laser(Line::L854, self.l854_rabi, self.l854_detuning, "laser.854.polarization", &self.l854_pol)?,
        ])
    }

    pub fn bloch(&self) -> Result<BlochConfig> {
        let mut c = BlochConfig::new(self.atom()?, self.field()?).with_lasers(self.lasers()?);
        c.tolerances = Tolerances { rtol: self.rtol, atol: self.atol, ..Tolerances::default() };
        Ok(c)
    }

    pub fn schedule(&self) -> SequenceSchedule {
        SequenceSchedule {
            repetition_rate: self.repetition_rate,
            cooling_duration: self.cooling,
            pump_window: self.pump_window,
            repump_duration: self.repump,
        }
    }

    pub fn budget(&self) -> ChannelBudget {
        ChannelBudget {
            collection_efficiency: self.collection,
            fiber_coupling_efficiency: self.fiber_coupling,
            fiber_transmission: self.fiber_transmission,
            detector_quantum_efficiency: self.detector,
        }
    }

    pub fn spectrum(&self) -> Result<PhotonSpectrum> {
        let base = PhotonSpectrum::zeeman_split(&self.atom()?, self.field()?, two_pi_mhz(self.photon_fwhm))?;
        let spec = if self.component_weights.is_empty() {
            base
        } else {
            let total: f64 = self.component_weights.iter().sum();
            PhotonSpectrum::new(
                base.components()
                    .iter()
                    .zip(&self.component_weights)
                    .map(|(c, w)| SpectralComponent { weight: w / total, ..*c })
                    .collect(),
            )
            .map_err(|e| Error::config("channel.component_weights", e.to_string()))?
        };
        Ok(spec.shifted(two_pi_mhz(self.photon_detuning)))
    }

    pub fn absorber(&self) -> Result<AbsorberLine> {
        AbsorberLine::receiver(&self.atom()?, self.field()?)
    }

    pub fn receiver(&self) -> ReceiverParams {
        ReceiverParams {
            pump_rate_bright_to_dark: self.pump_rate,
            spontaneous_dark_to_bright_rate: self.spontaneous_rate,
            background_dark_to_bright_rate: self.background_rate,
            p_abs_per_photon: self.p_abs,
            p_jump_given_absorption: self.p_jump,
            include_d32_path: self.include_d32,
            d32_branching: self.d32_branching,
            bright_detection_rate: self.bright_rate,
            dark_count_rate: self.dark_count_rate,
            start_bright: self.start_bright,
        }
    }

    pub fn jump_params(&self) -> JumpParams {
        let bin = self.jump_bin;
        let bright = self.bright_rate * bin;
        JumpParams {
            bin,
            threshold: self.threshold_fraction * bright,
            hysteresis: self.hysteresis as usize,
            gap: if self.bright_rate > 0.0 { 1.0 / (self.threshold_fraction * self.bright_rate) } else { bin },
        }
    }

    /// Exponential arrival density (the bloch density needs a solver run).
    pub fn exponential_arrival(&self) -> Result<ArrivalDensity> {
        ArrivalDensity::exponential(self.t1, self.pump_window)
    }
}

/// Markdown table of every key with unit, default and meaning.
pub fn render_schema() -> String {
    let defaults = RunConfig::default();
    let values = defaults.entries();
    let mut s = String::from(
        "# Run configuration keys\n\n\
         Config files are flat TOML with dotted keys, e.g. `receiver.pump_rate = 2.0`.\n\
         Unknown keys are rejected. Keys marked `yes` under assumption carry defaults that are\n\
         modelling choices; they are echoed in the provenance section of every run report.\n\n\
         | key | unit | default | assumption | meaning |\n|---|---|---|---|---|\n",
    );
    for d in RunConfig::keys() {
        let v = values.iter().find(|(k, _)| *k == d.key).map_or("(unset)".to_string(), |(_, v)| v.to_string());
        let _ = writeln!(
            s,
            "| `{}` | {} | `{}` | {} | {} |",
            d.key,
            d.unit,
            v,
            if d.assumption { "yes" } else { "" },
            d.doc
        );
    }
    s
}
