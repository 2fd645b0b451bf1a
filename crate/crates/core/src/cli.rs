//! Command-line front end: runs a command from a config and writes its
//! artifacts plus a manifest into the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::analysis::{
    absorption_probability, absorption_rate, correlate_train, fit_correlation, fit_exponential, CorrelationHistogram,
    ExpFit, JumpDetector, JumpRecord, TriggerTrain,
};
use crate::atom::Line;
use crate::bloch::{pumping_rate, scattering_rates, steady_state, t1_vs_power, wavepacket, PumpSequence};
use crate::channel::{effective_absorption_prob, overlap_table, spectral_overlap, thin, ChannelBudget};
use crate::config::{render_schema, RunConfig};
use crate::emitter::{cw_stream, sequence_stream, ArrivalDensity, PhotonEvent};
use crate::error::{Error, Result};
use crate::io::{self, num, to_ns, CsvOut, Report};
use crate::receiver::{simulate, DetectionStream, EndCause, ReceiverTrajectory};

#[derive(Parser, Debug)]
#[command(name = "ionlink", version, about = "Heralded single-photon link between two trapped ions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct RunArgs {
    /// Config file (flat TOML with dotted keys); defaults apply if omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed; overrides run.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Simulated time of cw-run, s.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Number of sequence repetitions.
    #[arg(long)]
    pub triggers: Option<u64>,
    /// Directory with the artifacts to analyze (defaults to --out).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Photons-off run used as reference by `analyze`.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Photon arrival-time density of the pump pulse.
    Wavepacket(RunArgs),
    /// Inverse wave packet duration against 850 nm power.
    T1scan(RunArgs),
    /// Continuous photon stream into the receiver.
    CwRun(RunArgs),
    /// Triggered sequence: emitter, channel, receiver and correlation.
    SeqRun(RunArgs),
    /// Dark-period statistics of a recorded run.
    Analyze(RunArgs),
    /// Trigger to quantum-jump correlation of a recorded run.
    Correlate(RunArgs),
    /// Efficiency chain and spectral overlap.
    Budget(RunArgs),
    /// Print the configuration key reference.
    Schema,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Wavepacket(_) => "wavepacket",
            Command::T1scan(_) => "t1scan",
            Command::CwRun(_) => "cw-run",
            Command::SeqRun(_) => "seq-run",
            Command::Analyze(_) => "analyze",
            Command::Correlate(_) => "correlate",
            Command::Budget(_) => "budget",
            Command::Schema => "schema",
        }
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command. `Ok(2)` means artifacts were written but the
/// correlation showed no signal above background.
pub fn run(command: &Command) -> Result<i32> {
    let args = match command {
        Command::Schema => {
            print!("{}", render_schema());
            return Ok(0);
        }
        Command::Wavepacket(a)
        | Command::T1scan(a)
        | Command::CwRun(a)
        | Command::SeqRun(a)
        | Command::Analyze(a)
        | Command::Correlate(a)
        | Command::Budget(a) => a,
    };
    let mut cfg = match &args.config {
        Some(p) => RunConfig::parse(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    if let Some(d) = args.duration {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::config("--duration", "must be > 0"));
        }
        cfg.duration_s = d;
    }
    if let Some(n) = args.triggers {
        if n == 0 {
            return Err(Error::config("--triggers", "must be >= 1"));
        }
        cfg.triggers = n;
    }
    let seed = cfg.seed.ok_or_else(|| Error::config("run.seed", "no seed given; use --seed or run.seed"))?;
    std::fs::create_dir_all(&args.out).map_err(|source| Error::Io { path: args.out.display().to_string(), source })?;
    let mut run = Run { cfg, seed, out: args.out.clone(), artifacts: Vec::new(), report: Report::default() };
    run.report.add("command", format!("\"{}\"", command.name()));
    run.report.add("seed", seed);
    let input = args.input.clone().unwrap_or_else(|| args.out.clone());
    let status = match command {
        Command::Wavepacket(_) => run.wavepacket(),
        Command::T1scan(_) => run.t1scan(),
        Command::CwRun(_) => run.cw_run(),
        Command::SeqRun(_) => run.seq_run(),
        Command::Analyze(_) => run.analyze(&input, args.reference.as_deref()),
        Command::Correlate(_) => run.correlate(&input),
        Command::Budget(_) => run.budget(),
        Command::Schema => unreachable!(),
    };
    let code = match status {
        Ok(()) => 0,
        Err(Error::BackgroundOnly(msg)) => {
            run.report.add("status", "\"background_only\"");
            run.report.add("status_detail", format!("{msg:?}"));
            2
        }
        Err(e) => return Err(e),
    };
    run.finish(command.name())?;
    Ok(code)
}

struct Run {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
    artifacts: Vec<String>,
    report: Report,
}

fn fit_lines(r: &mut Report, prefix: &str, f: &ExpFit) {
    r.f(&format!("{prefix}.tau_s"), f.tau);
    r.f(&format!("{prefix}.tau_stderr_s"), f.tau_stderr);
    r.add(&format!("{prefix}.n"), f.n_samples);
}

fn complete_durations(jumps: &[JumpRecord]) -> Vec<f64> {
    jumps.iter().filter(|j| j.is_complete()).map(|j| j.duration()).collect()
}

impl Run {
    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn finish(mut self, command: &str) -> Result<()> {
        let config_text = self.cfg.to_toml();
        let config_path = self.path("config.toml");
        io::write_text(&config_path, &config_text)?;

        self.report.section("provenance");
        for (k, v, from) in self.cfg.provenance() {
            self.report.add(k, format!("{v} # {from}"));
        }
        let report_path = self.path("report.txt");
        self.report.write(&report_path)?;

        let mut m = String::new();
        let _ = writeln!(m, "tool = \"ionlink\"");
        let _ = writeln!(m, "version = \"{}\"", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(m, "command = \"{command}\"");
        let _ = writeln!(m, "seed = \"{}\"", self.seed);
        let _ = writeln!(m, "config_sha256 = \"{}\"", io::sha256_str(&config_text));
        let _ = writeln!(m, "\n[provenance]");
        for (k, v, from) in self.cfg.provenance() {
            let _ = writeln!(m, "\"{k}\" = {{ value = {v}, source = \"{from}\" }}");
        }
        let _ = writeln!(m, "\n[artifacts]");
        let mut names = self.artifacts.clone();
        names.sort();
        for name in names {
            let _ = writeln!(m, "\"{name}\" = \"{}\"", io::sha256_file(&self.out.join(&name))?);
        }
        io::write_text(&self.out.join("manifest.toml"), &m)
    }

    fn wavepacket(&mut self) -> Result<()> {
        let bloch = self.cfg.bloch()?;
        let seq = PumpSequence { samples: self.cfg.samples as usize, ..PumpSequence::new(self.cfg.pump_window) };
        let wp = wavepacket(&bloch, &seq)?;
        let path = self.path("wavepacket.csv");
        io::write_xy(&path, ["time_s", "value"], wp.times.iter().zip(&wp.density).map(|(t, g)| (num(*t), num(*g))))?;
        let r = &mut self.report;
        r.f("t1_s", wp.t1);
        r.f("pump_probability", wp.pump_probability);
        r.f("pumping_rate_per_s", pumping_rate(&bloch)?);
        let ratio = |c: &crate::bloch::BlochConfig| -> Result<f64> {
            let rates = scattering_rates(c, &steady_state(c)?);
            Ok(rates.get(&Line::L393).copied().unwrap_or(0.0) / rates.get(&Line::L397).copied().unwrap_or(f64::NAN))
        };
        let full = ratio(&bloch)?;
        let without = ratio(&bloch.without(&[Line::L866]))?;
        r.f("ratio_393_397", full);
        r.f("ratio_393_397_without_866", without);
        Ok(())
    }

    fn t1scan(&mut self) -> Result<()> {
        let bloch = self.cfg.bloch()?;
        let curve = t1_vs_power(&bloch, &self.cfg.powers)?;
        let path = self.path("t1scan.csv");
        io::write_xy(&path, ["power_rel", "value"], curve.iter().map(|(p, k)| (num(*p), num(*k))))?;
        for (p, k) in &curve {
            self.report.f(&format!("t1_s.p{p}"), 1.0 / k);
        }
        Ok(())
    }

    fn weights(&self) -> Result<Vec<f64>> {
        Ok(self.cfg.spectrum()?.weights())
    }

    /// Feeds photons through the channel and the receiver, then detects jumps
    /// in the synthesized fluorescence. Both logs are written when enabled.
    fn receive<I: Iterator<Item = PhotonEvent>>(
        &mut self,
        photons: I,
        budget: &ChannelBudget,
        duration: f64,
    ) -> Result<(ReceiverTrajectory, Vec<JumpRecord>, u64)> {
        let params = self.cfg.receiver();
        let mut events = if self.cfg.write_events {
            let p = self.path("events.csv");
            Some(CsvOut::create(&p, &io::EVENT_HEADER)?)
        } else {
            None
        };
        let mut write_err = None;
        let mut absorbable = 0u64;
        let thinned = thin(photons, budget, self.seed)?.inspect(|e| {
            absorbable += e.flags.absorbable() as u64;
            if let (Some(w), None) = (events.as_mut(), write_err.as_ref()) {
                if let Err(x) = w.row(io::event_row(e)) {
                    write_err = Some(x);
                }
            }
        });
        let traj = simulate(duration, thinned, &params, self.seed)?;
        if let Some(e) = write_err {
            return Err(e);
        }
        if let Some(w) = events {
            w.finish()?;
        }
        let p = self.path("intervals.csv");
        io::write_intervals(&p, &traj)?;

        let mut det = JumpDetector::new(self.cfg.jump_params(), 0.0);
        let mut out = if self.cfg.write_detections {
            let p = self.path("detections.csv");
            Some(CsvOut::create(&p, &["time_ns"])?)
        } else {
            None
        };
        let mut n = 0u64;
        for t in DetectionStream::new(&traj, &params, self.seed)? {
            det.push(t)?;
            n += 1;
            if let Some(w) = out.as_mut() {
                w.row([to_ns(t).to_string()])?;
            }
        }
        if let Some(w) = out {
            w.finish()?;
        }
        let jumps = det.finish(duration)?;
        let p = self.path("jumps.csv");
        io::write_jumps(&p, &jumps)?;
        self.report.add("detections", n);
        self.report.add("photons_at_receiver", absorbable);
        Ok((traj, jumps, n))
    }

    fn trajectory_lines(&mut self, traj: &ReceiverTrajectory) {
        let r = &mut self.report;
        for c in [EndCause::Pump, EndCause::Spontaneous, EndCause::Background, EndCause::Absorption] {
            r.add(&format!("true_transitions.{}", c.name()), traj.count(c));
        }
        if let Ok(f) = fit_exponential(&traj.dark_durations()) {
            fit_lines(r, "true_dark", &f);
        }
    }

    fn dark_stats(&mut self, jumps: &[JumpRecord]) -> Result<ExpFit> {
        let d = complete_durations(jumps);
        let fit = fit_exponential(&d)?;
        fit_lines(&mut self.report, "dark", &fit);
        let bin = self.cfg.dark_hist_bin;
        let nbins = (d.iter().fold(0.0f64, |a, &b| a.max(b)) / bin).floor() as usize + 1;
        let mut counts = vec![0u64; nbins];
        for x in &d {
            counts[(x / bin).floor() as usize] += 1;
        }
        let p = self.path("dark_histogram.csv");
        io::write_xy(
            &p,
            ["bin_start_ns", "count"],
            counts.iter().enumerate().map(|(i, c)| (to_ns(i as f64 * bin).to_string(), c.to_string())),
        )?;
        Ok(fit)
    }

    fn incident_rate(&self) -> f64 {
        self.cfg.cw_rate * self.cfg.budget().to_receiver()
    }

    fn cw_run(&mut self) -> Result<()> {
        let duration = self.cfg.duration_s;
        let budget = self.cfg.budget();
        budget.validate()?;
        // Without an event log only photons reaching the receiver matter, and
        // a thinned Poisson stream is again Poisson.
        let (rate, budget) = if self.cfg.write_events {
            (self.cfg.cw_rate, budget)
        } else {
            let passed = ChannelBudget {
                collection_efficiency: 1.0,
                fiber_coupling_efficiency: 1.0,
                fiber_transmission: 1.0,
                ..budget
            };
            (self.cfg.cw_rate * budget.to_receiver(), passed)
        };
        let photons = cw_stream(duration, rate, &self.weights()?, self.seed)?;
        self.report.f("duration_s", duration);
        self.report.f("incident_rate_hz", self.incident_rate());
        let (traj, jumps, _) = self.receive(photons, &budget, duration)?;
        self.trajectory_lines(&traj);
        self.dark_stats(&jumps)?;
        Ok(())
    }

    fn arrival(&self) -> Result<ArrivalDensity> {
        match self.cfg.arrival.as_str() {
            "exponential" => self.cfg.exponential_arrival(),
            _ => {
                let seq =
                    PumpSequence { samples: self.cfg.samples as usize, ..PumpSequence::new(self.cfg.pump_window) };
                ArrivalDensity::from_wavepacket(&wavepacket(&self.cfg.bloch()?, &seq)?)
            }
        }
    }

    fn train(&self) -> TriggerTrain {
        let s = self.cfg.schedule();
        TriggerTrain { first: s.trigger_time(0), period: s.period(), count: self.cfg.triggers }
    }

    fn seq_run(&mut self) -> Result<()> {
        let schedule = self.cfg.schedule();
        let n = self.cfg.triggers;
        let duration = n as f64 * schedule.period();
        let g = self.arrival()?;
        let photons = sequence_stream(n, schedule, &g, self.cfg.pump_success, &self.weights()?, self.seed)?;
        self.report.add("triggers", n);
        self.report.f("duration_s", duration);
        let budget = self.cfg.budget();
        let (traj, jumps, _) = self.receive(photons, &budget, duration)?;
        self.trajectory_lines(&traj);

        let absorbed = traj.count(EndCause::Absorption) as f64;
        let r = &mut self.report;
        r.f("heralding_efficiency", absorbed / n as f64);
        r.f("heralding_efficiency_stderr", absorbed.sqrt() / n as f64);
        let (per_dark, expected) = heralding_estimate(&self.cfg);
        r.f("heralding_efficiency_per_dark_trigger", per_dark);
        r.f("heralding_efficiency_expected", expected);
        let _ = self.dark_stats(&jumps);
        self.correlation(&jumps)
    }

    fn correlation(&mut self, jumps: &[JumpRecord]) -> Result<()> {
        let train = self.train();
        let mut hist = correlate_train(&train, jumps, self.cfg.correlation_bin)?;
        let fit = fit_correlation(&hist);
        let p = self.path("correlation.csv");
        write_histogram(&p, &hist)?;
        self.report.add("correlation.jumps", hist.total());
        let fit = fit?;
        hist.fit = Some(fit);
        let r = &mut self.report;
        r.f("fit.t0_s", fit.t0);
        r.f("fit.tau_rise_s", fit.tau_rise);
        r.f("fit.tau_decay_s", fit.tau_decay);
        r.f("fit.amplitude", fit.amplitude);
        r.f("fit.background_per_bin", fit.background_per_bin);
        for (k, s) in ["t0_s", "tau_rise_s", "tau_decay_s", "amplitude", "background_per_bin"].iter().zip(fit.stderr) {
            r.f(&format!("fit.stderr.{k}"), s);
        }
        r.f("fit.chi2", fit.chi2);
        r.add("fit.dof", fit.dof);
        let p = self.path("correlation_fit.csv");
        let model = crate::analysis::model_counts(
            hist.counts.len(),
            hist.bin_width,
            fit.background_per_bin,
            fit.amplitude,
            fit.t0,
            fit.tau_rise,
            fit.tau_decay,
        );
        io::write_xy(
            &p,
            ["bin_start_ns", "model"],
            model.iter().enumerate().map(|(i, m)| (to_ns(hist.bin_start(i)).to_string(), num(*m))),
        )?;
        Ok(())
    }

    fn analyze(&mut self, input: &Path, reference: Option<&Path>) -> Result<()> {
        let on = load_jumps(&self.cfg, input)?;
        if input != self.out.as_path() {
            let p = self.path("jumps.csv");
            io::write_jumps(&p, &on)?;
        }
        let fit_on = self.dark_stats(&on)?;
        if let Some(r) = reference {
            let off = fit_exponential(&complete_durations(&load_jumps(&self.cfg, r)?))?;
            fit_lines(&mut self.report, "reference", &off);
            let (rate, err) = absorption_rate(&fit_on, &off);
            self.report.f("absorption_rate_per_s", rate);
            self.report.f("absorption_rate_stderr", err);
            let incident = self.incident_rate();
            if incident > 0.0 {
                self.report.f("incident_rate_hz", incident);
                self.report.f("absorption_probability", absorption_probability(rate, incident)?);
            }
        }
        Ok(())
    }

    fn correlate(&mut self, input: &Path) -> Result<()> {
        let jumps = io::read_jumps(&input.join("jumps.csv"))?;
        self.correlation(&jumps)
    }

    fn budget(&mut self) -> Result<()> {
        let b = self.cfg.budget();
        b.validate()?;
        let spec = self.cfg.spectrum()?;
        let absorber = self.cfg.absorber()?;
        let overlap = spectral_overlap(&spec, &absorber);
        let p_eff = effective_absorption_prob(self.cfg.p_peak, overlap)?;
        let cfg = &self.cfg;
        let (per_dark, expected) = heralding_estimate(cfg);
        let triggered = cfg.repetition_rate * cfg.pump_success;
        let lines = [
            ("single_mode_fraction", b.single_mode_fraction()),
            ("receiver_fraction", b.to_receiver()),
            ("cw.single_mode_rate_hz", cfg.cw_rate * b.single_mode_fraction()),
            ("cw.incident_rate_hz", cfg.cw_rate * b.to_receiver()),
            ("cw.fiber_detected_rate_hz", cfg.cw_rate * b.single_mode_fraction() * b.detector_quantum_efficiency),
            ("cw.absorption_rate_per_s", cfg.cw_rate * b.to_receiver() * cfg.p_abs * cfg.p_jump),
            ("triggered.single_mode_rate_hz", triggered * b.single_mode_fraction()),
            ("triggered.incident_rate_hz", triggered * b.to_receiver()),
            ("spectral_overlap", overlap),
            ("p_abs_effective", p_eff),
            ("heralding_efficiency", per_dark),
            ("heralding_efficiency_with_dark_fraction", expected),
            ("heralding_efficiency_from_overlap", cfg.pump_success * b.to_receiver() * p_eff),
        ];
        for (k, v) in lines {
            self.report.f(k, v);
        }
        let half = self.cfg.scan_span * 1e6;
        let n = self.cfg.scan_points as usize;
        let det: Vec<f64> = (0..n).map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64).collect();
        let table = overlap_table(&spec, &absorber, &det);
        let p = self.path("overlap.csv");
        io::write_xy(&p, ["detuning_hz", "overlap"], table.iter().map(|(d, o)| (num(*d), num(*o))))
    }
}

/// Herald success per trigger: for a dark receiver, and averaged over the
/// stationary dark fraction of the two-state model.
pub fn heralding_estimate(cfg: &RunConfig) -> (f64, f64) {
    let params = cfg.receiver();
    let reach = cfg.pump_success * cfg.budget().to_receiver();
    let per_dark = reach * params.p_abs_per_photon * params.p_jump();
    let hazard = cfg.repetition_rate * per_dark;
    let k = params.pump_rate_bright_to_dark;
    let dark = if k > 0.0 {
        k / (k + params.dark_to_bright_rate() + hazard)
    } else if params.start_bright {
        0.0
    } else {
        1.0
    };
    (per_dark, per_dark * dark)
}

fn load_jumps(cfg: &RunConfig, dir: &Path) -> Result<Vec<JumpRecord>> {
    let det = dir.join("detections.csv");
    if det.exists() {
        let traj = io::read_intervals(&dir.join("intervals.csv"))?;
        let mut d = JumpDetector::new(cfg.jump_params(), 0.0);
        for t in io::read_detections(&det)? {
            d.push(t)?;
        }
        d.finish(traj.duration)
    } else {
        io::read_jumps(&dir.join("jumps.csv"))
    }
}

fn write_histogram(path: &Path, h: &CorrelationHistogram) -> Result<()> {
    io::write_xy(
        path,
        ["bin_start_ns", "count"],
        h.counts.iter().enumerate().map(|(i, c)| (to_ns(h.bin_start(i)).to_string(), c.to_string())),
    )
}
