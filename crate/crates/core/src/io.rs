//! CSV artifacts (integer nanosecond timestamps) and the run manifest.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::analysis::JumpRecord;
use crate::emitter::{PhotonEvent, StageFlags, Trigger};
use crate::error::{Error, Result};
use crate::receiver::{EndCause, Interval, IonState, ReceiverTrajectory};

pub fn to_ns(t: f64) -> i64 {
    (t * 1e9).round() as i64
}

pub fn from_ns(ns: i64) -> f64 {
    ns as f64 / 1e9
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse { path: path.display().to_string(), reason: e.to_string() }
}

/// Buffered CSV file writer.
pub struct CsvOut {
    path: PathBuf,
    w: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let f = File::create(path).map_err(io_err(path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(f));
        w.write_record(header).map_err(csv_err(path))?;
        Ok(CsvOut { path: path.to_path_buf(), w })
    }

    pub fn row<I, T>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.w.write_record(fields).map_err(csv_err(&self.path))
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(io_err(&self.path))
    }
}

pub const EVENT_HEADER: [&str; 5] =
    ["trigger_index", "trigger_time_ns", "emission_time_ns", "spectral_component", "flags"];

pub fn event_row(e: &PhotonEvent) -> [String; 5] {
    let (idx, time) = match e.trigger {
        Some(t) => (t.index.to_string(), to_ns(t.time).to_string()),
        None => (String::new(), String::new()),
    };
    [idx, time, to_ns(e.emission_time).to_string(), e.spectral_component.to_string(), e.flags.bits().to_string()]
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(csv::Reader::from_reader(f))
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        reason: format!("bad field {i} in line {}", rec.position().map_or(0, |p| p.line())),
    })
}

pub fn read_events(path: &Path) -> Result<Vec<PhotonEvent>> {
    let mut out = Vec::new();
    for rec in reader(path)?.records() {
        let rec = rec.map_err(csv_err(path))?;
        let trigger = if rec.get(0).is_some_and(|s| !s.is_empty()) {
            Some(Trigger { index: field(path, &rec, 0)?, time: from_ns(field(path, &rec, 1)?) })
        } else {
            None
        };
        out.push(PhotonEvent {
            trigger,
            emission_time: from_ns(field(path, &rec, 2)?),
            spectral_component: field(path, &rec, 3)?,
            flags: StageFlags::from_bits(field(path, &rec, 4)?)?,
        });
    }
    Ok(out)
}

pub const INTERVAL_HEADER: [&str; 5] = ["state", "start_ns", "end_ns", "end_cause", "herald_trigger"];

pub fn write_intervals(path: &Path, traj: &ReceiverTrajectory) -> Result<()> {
    let mut w = CsvOut::create(path, &INTERVAL_HEADER)?;
    for iv in &traj.intervals {
        w.row([
            match iv.state {
                IonState::Bright => "bright".to_string(),
                IonState::Dark => "dark".to_string(),
            },
            to_ns(iv.start).to_string(),
            to_ns(iv.end).to_string(),
            iv.end_cause.name().to_string(),
            iv.herald.map_or(String::new(), |h| h.to_string()),
        ])?;
    }
    w.finish()
}

pub fn read_intervals(path: &Path) -> Result<ReceiverTrajectory> {
    let mut intervals = Vec::new();
    for rec in reader(path)?.records() {
        let rec = rec.map_err(csv_err(path))?;
        let state = match rec.get(0) {
            Some("bright") => IonState::Bright,
            Some("dark") => IonState::Dark,
            _ => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    reason: "state must be bright or dark".into(),
                })
            }
        };
        let herald = match rec.get(4) {
            Some(s) if !s.is_empty() => Some(field(path, &rec, 4)?),
            _ => None,
        };
        intervals.push(Interval {
            state,
            start: from_ns(field(path, &rec, 1)?),
            end: from_ns(field(path, &rec, 2)?),
            end_cause: EndCause::parse(rec.get(3).unwrap_or(""))?,
            herald,
        });
    }
    let duration = intervals.last().map_or(0.0, |i| i.end);
    Ok(ReceiverTrajectory { intervals, duration })
}

pub fn read_detections(path: &Path) -> Result<Vec<f64>> {
    reader(path)?
        .records()
        .map(|rec| {
            let rec = rec.map_err(csv_err(path))?;
            Ok(from_ns(field(path, &rec, 0)?))
        })
        .collect()
}

pub const JUMP_HEADER: [&str; 5] =
    ["dark_start_ns", "dark_end_ns", "first_bright_detection_ns", "start_truncated", "end_truncated"];

pub fn write_jumps(path: &Path, jumps: &[JumpRecord]) -> Result<()> {
    let mut w = CsvOut::create(path, &JUMP_HEADER)?;
    for j in jumps {
        w.row([
            to_ns(j.dark_start).to_string(),
            to_ns(j.dark_end).to_string(),
            to_ns(j.first_bright_detection).to_string(),
            j.start_truncated.to_string(),
            j.end_truncated.to_string(),
        ])?;
    }
    w.finish()
}

pub fn read_jumps(path: &Path) -> Result<Vec<JumpRecord>> {
    reader(path)?
        .records()
        .map(|rec| {
            let rec = rec.map_err(csv_err(path))?;
            Ok(JumpRecord {
                dark_start: from_ns(field(path, &rec, 0)?),
                dark_end: from_ns(field(path, &rec, 1)?),
                first_bright_detection: from_ns(field(path, &rec, 2)?),
                start_truncated: field(path, &rec, 3)?,
                end_truncated: field(path, &rec, 4)?,
            })
        })
        .collect()
}

/// Two-column numeric table.
pub fn write_xy(path: &Path, header: [&str; 2], rows: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let mut w = CsvOut::create(path, &header)?;
    for (a, b) in rows {
        w.row([a, b])?;
    }
    w.finish()
}

/// Formats a float so that it parses back to the same value.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(io_err(path))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn sha256_str(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// Accumulates `key = value` report lines.
#[derive(Default)]
pub struct Report {
    lines: Vec<String>,
}

impl Report {
    pub fn add(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{key} = {value}"));
    }

    pub fn f(&mut self, key: &str, value: f64) {
        self.add(key, num(value));
    }

    pub fn section(&mut self, name: &str) {
        self.lines.push(String::new());
        self.lines.push(format!("[{name}]"));
    }

    pub fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.text())
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}
