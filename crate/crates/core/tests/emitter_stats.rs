use ionlink::bloch::presets::calibrated;
use ionlink::bloch::{wavepacket, PumpSequence};
use ionlink::channel::{thin, ChannelBudget};
use ionlink::emitter::{run_cw, run_sequence, sample_many, ArrivalDensity, SequenceSchedule, StageFlags};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn density() -> ArrivalDensity {
    let wp = wavepacket(&calibrated(), &PumpSequence::new(4e-6)).unwrap();
    ArrivalDensity::from_wavepacket(&wp).unwrap()
}

fn ks_distance(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn schedule() -> SequenceSchedule {
    SequenceSchedule { repetition_rate: 125e3, cooling_duration: 3e-6, pump_window: 4e-6, repump_duration: 1e-6 }
}

#[test]
fn sampled_arrivals_follow_the_wave_packet() {
    let g = density();
    let d = ks_distance(sample_many(&g, 100_000, 11), |t| g.cdf(t));
    assert!(d < 0.01, "KS distance {d}");
}

#[test]
fn emission_offsets_pass_chi_square() {
    let g = density();
    let events = run_sequence(100_000, schedule(), &g, 1.0, &[1.0], 5).unwrap();
    let edges: Vec<f64> = (0..=40).map(|i| i as f64 * 0.1e-6).collect();
    let mut counts = vec![0.0; 40];
    for e in &events {
        let off = e.emission_offset().unwrap();
        assert!((0.0..=4e-6).contains(&off));
        counts[((off / 0.1e-6) as usize).min(39)] += 1.0;
    }
    let n = events.len() as f64;
    // merge sparse tail bins so every expectation is at least 5
    let (mut chi2, mut dof, mut obs, mut exp) = (0.0, 0usize, 0.0, 0.0);
    for i in 0..40 {
        obs += counts[i];
        exp += n * (g.cdf(edges[i + 1]) - g.cdf(edges[i]));
        if exp >= 5.0 || i == 39 {
            chi2 += (obs - exp) * (obs - exp) / exp;
            dof += 1;
            obs = 0.0;
            exp = 0.0;
        }
    }
    let p = 1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 0.001, "chi2 {chi2} dof {dof} p {p}");
}

#[test]
fn sequence_is_ordered_and_reproducible() {
    let g = density();
    let a = run_sequence(20_000, schedule(), &g, 0.95, &[0.2, 0.5, 0.3], 9).unwrap();
    let b = run_sequence(20_000, schedule(), &g, 0.95, &[0.2, 0.5, 0.3], 9).unwrap();
    assert_eq!(a, b);
    assert!(a.windows(2).all(|w| w[0].emission_time < w[1].emission_time));
    let frac = a.len() as f64 / 20_000.0;
    assert!((frac - 0.95).abs() < 3.0 * (0.95 * 0.05 / 20_000f64).sqrt());
}

#[test]
fn triggered_single_mode_rate() {
    // one second at 125 kHz with 4% collection and 60% fiber coupling
    let g = density();
    let events = run_sequence(125_000, schedule(), &g, 1.0, &[1.0], 3).unwrap();
    let budget = ChannelBudget { fiber_transmission: 1.0, ..ChannelBudget::default() };
    let coupled =
        thin(events.into_iter(), &budget, 3).unwrap().filter(|e| e.flags.has(StageFlags::FIBER_COUPLED)).count() as f64;
    let p: f64 = 0.024;
    let sigma = (125_000.0 * p * (1.0 - p)).sqrt();
    assert!((coupled - 3000.0).abs() < 3.0 * sigma, "{coupled} per second");
}

#[test]
fn cw_count_and_exponential_gaps() {
    let ev = run_cw(10.0, 18e3, &[1.0], 21).unwrap();
    let n = ev.len() as f64;
    assert!((n - 180_000.0).abs() < 3.0 * 180_000f64.sqrt(), "{n}");
    assert!(ev.iter().all(|e| e.trigger.is_none()));
    let gaps: Vec<f64> = ev.windows(2).map(|w| w[1].emission_time - w[0].emission_time).collect();
    let d = ks_distance(gaps.clone(), |x| 1.0 - (-18e3 * x).exp());
    // asymptotic critical value at alpha = 0.01
    let crit = 1.628 / (gaps.len() as f64).sqrt();
    assert!(d < crit, "KS {d} vs {crit}");
}

#[test]
fn exponential_density_quantile_returns_t1() {
    let g = ArrivalDensity::exponential(1.1e-6, 1.0).unwrap();
    let t = ionlink::emitter::sample_arrival(&g, 1.0 - (-1.0f64).exp()).unwrap();
    assert!((t / 1.1e-6 - 1.0).abs() < 1e-9);
}
