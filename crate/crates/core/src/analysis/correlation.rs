use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::storage::Owned;
use nalgebra::{DMatrix, DVector, Dyn};

use super::JumpRecord;
use crate::error::{Error, Result};

/// Evenly spaced triggers `first + k * period`, `k < count`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriggerTrain {
    pub first: f64,
    pub period: f64,
    pub count: u64,
}

impl TriggerTrain {
    pub fn time(&self, k: u64) -> f64 {
        self.first + k as f64 * self.period
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationFit {
    pub t0: f64,
    pub tau_rise: f64,
    pub tau_decay: f64,
    /// Total correlated counts in one period.
    pub amplitude: f64,
    pub background_per_bin: f64,
    /// Standard errors in the same order: t0, tau_rise, tau_decay, amplitude,
    /// background.
    pub stderr: [f64; 5],
    pub chi2: f64,
    pub dof: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationHistogram {
    pub bin_width: f64,
    pub period: f64,
    pub counts: Vec<u64>,
    pub fit: Option<CorrelationFit>,
}

impl CorrelationHistogram {
    pub fn empty(period: f64, bin_width: f64) -> Result<Self> {
        let n = bins(period, bin_width)?;
        Ok(CorrelationHistogram { bin_width, period, counts: vec![0; n], fit: None })
    }

    pub fn bin_start(&self, i: usize) -> f64 {
        i as f64 * self.bin_width
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds another histogram with the same binning.
    pub fn merge(&mut self, other: &CorrelationHistogram) -> Result<()> {
        if self.counts.len() != other.counts.len() || self.bin_width != other.bin_width {
            return Err(Error::param("histogram", "binning differs"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn add_delay_ns(&mut self, delay_ns: i64) {
        let b = (delay_ns / to_ns(self.bin_width)) as usize;
        self.counts[b] += 1;
    }
}

fn to_ns(t: f64) -> i64 {
    (t * 1e9).round() as i64
}

fn bins(period: f64, bin: f64) -> Result<usize> {
    let (p, b) = (to_ns(period), to_ns(bin));
    if b <= 0 || p <= 0 {
        return Err(Error::param("bin_width", "period and bin must be at least 1 ns"));
    }
    if p % b != 0 {
        return Err(Error::param("bin_width", format!("{b} ns bins do not tile a {p} ns period")));
    }
    Ok((p / b) as usize)
}

/// Histogram of `(first bright detection - preceding trigger) mod period` for
/// arbitrary trigger times. Times are rounded to whole nanoseconds.
pub fn correlate(trigger_times: &[f64], jumps: &[JumpRecord], period: f64, bin: f64) -> Result<CorrelationHistogram> {
    let mut h = CorrelationHistogram::empty(period, bin)?;
    if trigger_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::param("trigger_times", "must be ascending"));
    }
    let p = to_ns(period);
    for j in jumps.iter().filter(|j| !j.end_truncated) {
        let t = j.first_bright_detection;
        let k = trigger_times.partition_point(|&x| x <= t);
        if k == 0 {
            continue;
        }
        h.add_delay_ns((to_ns(t) - to_ns(trigger_times[k - 1])).rem_euclid(p));
    }
    Ok(h)
}

/// As [`correlate`] for an evenly spaced trigger train.
pub fn correlate_train(train: &TriggerTrain, jumps: &[JumpRecord], bin: f64) -> Result<CorrelationHistogram> {
    let mut h = CorrelationHistogram::empty(train.period, bin)?;
    let (first, p) = (to_ns(train.first), to_ns(train.period));
    for j in jumps.iter().filter(|j| !j.end_truncated) {
        let t = to_ns(j.first_bright_detection);
        if t < first || train.count == 0 {
            continue;
        }
        h.add_delay_ns((t - first).rem_euclid(p));
    }
    Ok(h)
}

/// Integral of the normalized response `h` from 0 to `x`.
fn response_cdf(x: f64, tr: f64, td: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if (td - tr).abs() <= 1e-6 * td.max(tr) {
        let tau = 0.5 * (tr + td);
        return 1.0 - (-x / tau).exp() * (1.0 + x / tau);
    }
    1.0 - (td * (-x / td).exp() - tr * (-x / tr).exp()) / (td - tr)
}

/// Expected counts per bin: background plus the response to a signal at `t0`
/// repeating every period.
pub fn model_counts(
    nbins: usize,
    bin: f64,
    background: f64,
    amplitude: f64,
    t0: f64,
    tau_rise: f64,
    tau_decay: f64,
) -> Vec<f64> {
    let period = nbins as f64 * bin;
    (0..nbins)
        .map(|i| {
            let (s, e) = (i as f64 * bin, (i + 1) as f64 * bin);
            let mut frac = 0.0;
            for k in -1..=1 {
                let shift = k as f64 * period - t0;
                frac += response_cdf(e + shift, tau_rise, tau_decay) - response_cdf(s + shift, tau_rise, tau_decay);
            }
            background + amplitude * frac
        })
        .collect()
}

struct Fit<'a> {
    counts: &'a [f64],
    sigma: Vec<f64>,
    /// Parameters in bin units: background, amplitude, t0, ln tau_a, ln tau_b.
    x: DVector<f64>,
}

impl Fit<'_> {
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let m = model_counts(self.counts.len(), 1.0, x[0], x[1], x[2], x[3].exp(), x[4].exp());
        DVector::from_iterator(
            self.counts.len(),
            m.iter().zip(self.counts).zip(&self.sigma).map(|((m, n), s)| (m - n) / s),
        )
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for Fit<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.x.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.x.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let r = self.eval(&self.x);
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let n = self.counts.len();
        let mut j = DMatrix::zeros(n, 5);
        for k in 0..5 {
            let h = 1e-6 * self.x[k].abs().max(1.0);
            let mut a = self.x.clone();
            let mut b = self.x.clone();
            a[k] += h;
            b[k] -= h;
            let d = (self.eval(&a) - self.eval(&b)) / (2.0 * h);
            j.set_column(k, &d);
        }
        j.iter().all(|v| v.is_finite()).then_some(j)
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Least-squares fit of background plus a rise-and-decay response.
///
/// The response is the convolution of two exponentials; the shorter time is
/// reported as `tau_rise`. Starting points are fitted with data weights
/// `sqrt(max(n, 1))`; the best one is refined with model weights.
pub fn fit_correlation(hist: &CorrelationHistogram) -> Result<CorrelationFit> {
    let n = hist.counts.len();
    if n < 8 {
        return Err(Error::InsufficientData(format!("{n} bins, need at least 8")));
    }
    let counts: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let b0 = median(&counts);
    let (peak, pmax) =
        counts.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, v)| if v > a.1 { (i, v) } else { a });
    if !(pmax > b0 + 5.0 * b0.max(1.0).sqrt()) {
        return Err(Error::BackgroundOnly(format!("peak {pmax} counts over background {b0}")));
    }
    let excess: f64 = counts.iter().map(|c| (c - b0).max(0.0)).sum();
    let sigma: Vec<f64> = counts.iter().map(|c| c.max(1.0).sqrt()).collect();

    let mut best: Option<(f64, DVector<f64>, DMatrix<f64>)> = None;
    for back in 0..5 {
        for (ta, tb) in [(0.5, 2.0), (1.0, 4.0), (2.0, 8.0), (0.3, 1.0)] {
            let t0 = peak as f64 - back as f64;
            let x0 = DVector::from_vec(vec![b0, excess, t0, f64::ln(ta), f64::ln(tb)]);
            let problem = Fit { counts: &counts, sigma: sigma.clone(), x: x0 };
            let (done, report) = LevenbergMarquardt::new().with_patience(200).minimize(problem);
            if !report.objective_function.is_finite() {
                continue;
            }
            let chi2 = 2.0 * report.objective_function;
            if best.as_ref().is_none_or(|b| chi2 < b.0) {
                if let Some(j) = done.jacobian() {
                    best = Some((chi2, done.x.clone(), j));
                }
            }
        }
    }
    let (mut chi2, mut x, mut j) = best.ok_or_else(|| Error::Numeric("correlation fit did not converge".into()))?;
    // refit with variances from the model to remove the bias of data weights
    for _ in 0..3 {
        let m = model_counts(n, 1.0, x[0], x[1], x[2], x[3].exp(), x[4].exp());
        let problem = Fit { counts: &counts, sigma: m.iter().map(|v| v.max(1.0).sqrt()).collect(), x: x.clone() };
        let (done, report) = LevenbergMarquardt::new().with_patience(200).minimize(problem);
        match done.jacobian() {
            Some(jac) if report.objective_function.is_finite() => {
                chi2 = 2.0 * report.objective_function;
                x = done.x.clone();
                j = jac;
            }
            _ => break,
        }
    }
    let cov = (j.transpose() * &j).try_inverse();
    let var = |k: usize| cov.as_ref().map_or(f64::NAN, |c| c[(k, k)].max(0.0).sqrt());
    let w = hist.bin_width;
    let (ta, tb) = (x[3].exp(), x[4].exp());
    let (sa, sb) = (ta * var(3) * w, tb * var(4) * w);
    let ((tr, sr), (td, sd)) = if ta <= tb { ((ta, sa), (tb, sb)) } else { ((tb, sb), (ta, sa)) };
    let period = n as f64 * w;
    Ok(CorrelationFit {
        t0: (x[2] * w).rem_euclid(period),
        tau_rise: tr * w,
        tau_decay: td * w,
        amplitude: x[1],
        background_per_bin: x[0],
        stderr: [var(2) * w, sr, sd, var(1), var(0)],
        chi2,
        dof: n.saturating_sub(5),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    fn jump_at(t: f64) -> JumpRecord {
        JumpRecord {
            dark_start: t - 0.1,
            dark_end: t,
            first_bright_detection: t,
            start_truncated: false,
            end_truncated: false,
        }
    }

    fn synthetic(seed: u64, b: f64, a: f64) -> CorrelationHistogram {
        let m = model_counts(40, 0.8e-6, b, a, 0.8e-6, 1.1e-6, 3e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CorrelationHistogram {
            bin_width: 0.8e-6,
            period: 32e-6,
            counts: m.iter().map(|&l| Poisson::new(l).unwrap().sample(&mut rng) as u64).collect(),
            fit: None,
        }
    }

    #[test]
    fn jump_on_trigger_lands_in_bin_zero() {
        let train = TriggerTrain { first: 1e-3, period: 32e-6, count: 100 };
        let h = correlate_train(&train, &[jump_at(train.time(7))], 0.8e-6).unwrap();
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.total(), 1);
        let times: Vec<f64> = (0..100).map(|k| train.time(k)).collect();
        assert_eq!(correlate(&times, &[jump_at(train.time(7))], 32e-6, 0.8e-6).unwrap().counts, h.counts);
    }

    #[test]
    fn bins_must_tile_the_period() {
        assert!(CorrelationHistogram::empty(32e-6, 0.7e-6).is_err());
        assert_eq!(CorrelationHistogram::empty(32e-6, 0.8e-6).unwrap().counts.len(), 40);
    }

    #[test]
    fn model_is_normalized() {
        let m = model_counts(40, 0.8e-6, 0.0, 1.0, 5e-6, 1.1e-6, 3e-6);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let d = model_counts(40, 0.8e-6, 0.0, 1.0, 5e-6, 2e-6, 2e-6);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn flat_histogram_is_background_only() {
        let h = CorrelationHistogram { bin_width: 0.8e-6, period: 32e-6, counts: vec![80; 40], fit: None };
        assert!(matches!(fit_correlation(&h), Err(Error::BackgroundOnly(_))));
    }

    #[test]
    fn recovers_model_parameters() {
        let fit = fit_correlation(&synthetic(3, 80.0, 3000.0)).unwrap();
        let close = |a: f64, b: f64| (a / b - 1.0).abs() < 0.1;
        assert!(close(fit.tau_rise, 1.1e-6), "{fit:?}");
        assert!(close(fit.tau_decay, 3e-6), "{fit:?}");
        assert!(close(fit.t0, 0.8e-6), "{fit:?}");
        assert!(close(fit.amplitude, 3000.0), "{fit:?}");
        assert!(close(fit.background_per_bin, 80.0), "{fit:?}");
    }
}
