use ionlink::bloch::{calibrate_three_photon, presets, t1_vs_power, CalibrationOptions};

fn main() {
    let base = presets::calibrated();
    let args: Vec<f64> = std::env::args().skip(1).map(|s| s.parse().unwrap()).collect();
    let opts = CalibrationOptions {
        max_iters: args.first().copied().unwrap_or(400.0) as u64,
        max_detuning_mhz: args.get(1).copied().unwrap_or(60.0),

        ..Default::default()
    };
    let r = calibrate_three_photon(&base, &opts).unwrap();
    println!("params {:?}", r.params_mhz);
    println!("ratio {} without 866 {} pump {} evals {}", r.ratio, r.ratio_without_866, r.pump_rate, r.evaluations);
    let curve = t1_vs_power(&r.config, &[0.001, 0.01, 0.1, 1.0]).unwrap();
    for (p, inv) in curve {
        println!("p {p} T1 {:.3} us", 1e6 / inv);
    }
}
