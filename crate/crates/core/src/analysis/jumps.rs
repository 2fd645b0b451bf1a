use std::collections::VecDeque;

use crate::error::{Error, Result};

/// One dark period found in a fluorescence record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpRecord {
    pub dark_start: f64,
    pub dark_end: f64,
    /// First 397 nm detection of the following bright period.
    pub first_bright_detection: f64,
    /// The record began while dark.
    pub start_truncated: bool,
    /// The record ended while dark.
    pub end_truncated: bool,
}

impl JumpRecord {
    pub fn duration(&self) -> f64 {
        self.dark_end - self.dark_start
    }

    pub fn is_complete(&self) -> bool {
        !self.start_truncated && !self.end_truncated
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpParams {
    /// Bin width, s.
    pub bin: f64,
    /// Counts per bin separating dark from bright.
    pub threshold: f64,
    /// Consecutive bins needed to confirm a change of state.
    pub hysteresis: usize,
    /// Detections closer than this belong to a bright run, s.
    pub gap: f64,
}

impl JumpParams {
    /// 1 ms bins, threshold at 10% of the bright counts per bin, 2-bin
    /// hysteresis. Fails unless the threshold separates the two rates.
    pub fn for_rates(dark_rate: f64, bright_rate: f64) -> Result<Self> {
        let bin = 1e-3;
        let p = JumpParams { bin, threshold: 0.1 * bright_rate * bin, hysteresis: 2, gap: 1.0 / (0.1 * bright_rate) };
        p.check_rates(dark_rate, bright_rate)?;
        Ok(p)
    }

    pub fn check_rates(&self, dark_rate: f64, bright_rate: f64) -> Result<()> {
        if !(self.bin > 0.0) || self.hysteresis < 1 || !(self.gap > 0.0) {
            return Err(Error::param("jump_params", "bin and gap must be > 0, hysteresis >= 1"));
        }
        let (lo, hi) = (dark_rate * self.bin, bright_rate * self.bin);
        if !(self.threshold > lo && self.threshold < hi) {
            return Err(Error::param(
                "threshold",
                format!("{} counts/bin is not between dark {lo} and bright {hi}", self.threshold),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Level {
    Bright,
    Dark,
}

/// Streaming hysteresis detector; feed timestamps in order, then `finish`.
pub struct JumpDetector {
    p: JumpParams,
    t0: f64,
    /// Index of the bin being filled.
    bin: i64,
    /// Start of the next bin.
    edge: f64,
    count: u64,
    /// Timestamps of the recent bins, oldest first, with their bin index.
    buffer: VecDeque<(i64, f64)>,
    state: Option<Level>,
    run_start: i64,
    run_len: usize,
    open: Option<(f64, bool)>,
    records: Vec<JumpRecord>,
    last: f64,
    seen: usize,
}

impl JumpDetector {
    pub fn new(p: JumpParams, t0: f64) -> Self {
        JumpDetector {
            p,
            t0,
            bin: 0,
            edge: t0 + p.bin,
            count: 0,
            buffer: VecDeque::new(),
            state: None,
            run_start: 0,
            run_len: 0,
            open: None,
            records: Vec::new(),
            last: f64::NEG_INFINITY,
            seen: 0,
        }
    }

    fn bin_start(&self, b: i64) -> f64 {
        self.t0 + b as f64 * self.p.bin
    }

    pub fn push(&mut self, t: f64) -> Result<()> {
        if t < self.last || t < self.t0 || t.is_nan() {
            return Err(Error::Unordered(self.seen));
        }
        self.last = t;
        self.seen += 1;
        if t >= self.edge {
            let b = ((t - self.t0) / self.p.bin).floor() as i64;
            while self.bin < b {
                self.close_bin(1.0);
            }
        }
        self.count += 1;
        self.buffer.push_back((self.bin, t));
        Ok(())
    }

    fn close_bin(&mut self, fraction: f64) {
        let level = if (self.count as f64) < self.p.threshold * fraction { Level::Dark } else { Level::Bright };
        let b = self.bin;
        match self.state {
            None => {
                self.state = Some(level);
                if level == Level::Dark {
                    self.open = Some((self.t0, true));
                }
            }
            Some(s) if s == level => self.run_len = 0,
            Some(_) => {
                if self.run_len == 0 {
                    self.run_start = b;
                }
                self.run_len += 1;
                if self.run_len >= self.p.hysteresis {
                    self.confirm(level);
                }
            }
        }
        self.bin += 1;
        self.edge = self.bin_start(self.bin + 1);
        self.count = 0;
        let keep_from = self.bin - self.p.hysteresis as i64 - 1;
        while self.buffer.front().is_some_and(|&(bb, _)| bb < keep_from) {
            self.buffer.pop_front();
        }
    }

    fn confirm(&mut self, level: Level) {
        let lo = self.run_start - 1;
        let times: Vec<f64> = self.buffer.iter().filter(|&&(b, _)| b >= lo).map(|&(_, t)| t).collect();
        match level {
            Level::Dark => {
                // last detection still inside a dense run
                let before: Vec<f64> =
                    self.buffer.iter().filter(|&&(b, _)| b <= self.run_start).map(|&(_, t)| t).collect();
                let mut start = self.bin_start(self.run_start);
                for i in (1..before.len()).rev() {
                    if before[i] - before[i - 1] < self.p.gap && before[i] >= self.bin_start(lo) {
                        start = before[i];
                        break;
                    }
                }
                self.open = Some((start, false));
            }
            Level::Bright => {
                let (start, truncated) = self.open.take().unwrap_or((self.t0, true));
                let mut end = self.bin_start(self.run_start);
                for i in 0..times.len().saturating_sub(1) {
                    if times[i] > start && times[i + 1] - times[i] < self.p.gap {
                        end = times[i];
                        break;
                    }
                }
                let end = end.max(start);
                if end > start {
                    self.records.push(JumpRecord {
                        dark_start: start,
                        dark_end: end,
                        first_bright_detection: end,
                        start_truncated: truncated,
                        end_truncated: false,
                    });
                }
            }
        }
        self.state = Some(level);
        self.run_len = 0;
    }

    /// Closes the record at `t_end` and returns all dark periods.
    pub fn finish(mut self, t_end: f64) -> Result<Vec<JumpRecord>> {
        if t_end < self.last || !(t_end > self.t0) {
            return Err(Error::param("t_end", "must follow every detection and the start"));
        }
        let last_bin = ((t_end - self.t0) / self.p.bin).floor() as i64;
        while self.bin < last_bin {
            self.close_bin(1.0);
        }
        let frac = (t_end - self.bin_start(self.bin)) / self.p.bin;
        if frac > 1e-9 {
            self.close_bin(frac);
        }
        let dark_at_end = match self.state {
            Some(Level::Dark) => true,
            None => true,
            Some(Level::Bright) => false,
        };
        if dark_at_end {
            let (start, truncated) = self.open.take().unwrap_or((self.t0, true));
            if t_end > start {
                self.records.push(JumpRecord {
                    dark_start: start,
                    dark_end: t_end,
                    first_bright_detection: t_end,
                    start_truncated: truncated,
                    end_truncated: true,
                });
            }
        }
        Ok(self.records)
    }
}

/// Dark periods in a time-ordered detection record spanning `[t0, t_end]`.
pub fn detect_jumps<I: IntoIterator<Item = f64>>(
    detections: I,
    p: JumpParams,
    t0: f64,
    t_end: f64,
) -> Result<Vec<JumpRecord>> {
    let mut det = JumpDetector::new(p, t0);
    for t in detections {
        det.push(t)?;
    }
    det.finish(t_end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::receiver::{simulate, synthesize_trace, IonState, ReceiverParams};

    fn params() -> JumpParams {
        JumpParams::for_rates(200.0, 3e5).unwrap()
    }

    #[test]
    fn threshold_must_separate_rates() {
        assert!(JumpParams::for_rates(5e4, 3e5).is_err());
        let mut p = params();
        p.threshold = 400.0;
        assert!(p.check_rates(200.0, 3e5).is_err());
    }

    #[test]
    fn fully_bright_has_no_jumps() {
        let det: Vec<f64> = (0..300_000).map(|i| i as f64 / 3e5).collect();
        assert!(detect_jumps(det, params(), 0.0, 1.0).unwrap().is_empty());
    }

    #[test]
    fn empty_trace_is_one_dark_period() {
        let r = detect_jumps(Vec::new(), params(), 0.0, 2.0).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!((r[0].dark_start, r[0].dark_end), (0.0, 2.0));
        assert!(r[0].start_truncated && r[0].end_truncated);
    }

    #[test]
    fn recovers_ground_truth() {
        let rp = ReceiverParams { pump_rate_bright_to_dark: 5.0, ..Default::default() };
        let traj = simulate(300.0, Vec::new(), &rp, 11).unwrap();
        let det = synthesize_trace(&traj, &rp, 11).unwrap();
        let found = detect_jumps(det, params(), 0.0, 300.0).unwrap();
        let truth: Vec<_> =
            traj.intervals.iter().filter(|i| i.state == IonState::Dark && i.start > 0.0 && i.end < 300.0).collect();
        let long: Vec<_> = truth.iter().filter(|i| i.duration() >= 10e-3).collect();
        let mut hit = 0;
        for iv in &long {
            if found.iter().any(|r| (r.dark_start - iv.start).abs() <= 2e-3 && (r.dark_end - iv.end).abs() <= 2e-3) {
                hit += 1;
            }
        }
        assert!(long.len() > 100);
        assert!(hit as f64 >= 0.99 * long.len() as f64, "{hit} of {}", long.len());
    }
}
