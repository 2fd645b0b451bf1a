"""Smoke test for the ionlink Python bindings.

Build and install first:
    cd crates/python && maturin develop --release
"""

import math
import random
import tempfile
from pathlib import Path

import ionlink


def main():
    cfg = ionlink.Config()
    assert "receiver.pump_rate" in ionlink.Config.keys()
    assert cfg.get("field.gauss") == 6.0

    wp = cfg.wavepacket()
    assert 0.5e-6 < wp.t1 < 1.5e-6, wp.t1
    assert 0.9 < wp.pump_probability <= 1.0
    dt = wp.times[1] - wp.times[0]
    assert abs(sum(wp.density) * dt - wp.pump_probability) < 0.01
    arrivals = wp.sample(20000, 1)
    assert all(0.0 <= t <= wp.times[-1] for t in arrivals)

    rates = cfg.scattering_rates()
    assert rates["393 nm"] / rates["397 nm"] > 1.0

    overlap, p_abs = cfg.absorption_probability()
    assert 2e-4 <= p_abs <= 3e-4, p_abs

    off = ionlink.Config('"emitter.cw_rate_hz" = 0\n"receiver.pump_rate" = 20\n').run_cw(300.0, 7)
    tau, err, n = ionlink.fit_exponential(off.dark_durations)
    assert abs(tau - 1.0 / 0.97) < 3 * err, (tau, err)
    assert off.transitions["absorption"] == 0

    rng = random.Random(3)
    period, bin_ = 32e-6, 0.8e-6
    triggers = [k * period for k in range(200000)]
    jumps = sorted(
        k * period + 1e-6 + rng.expovariate(1 / 3e-6)
        for k in rng.sample(range(199999), 4000)
    )
    counts = ionlink.correlate(triggers, jumps, period, bin_)
    assert sum(counts) == 4000 and len(counts) == 40
    fit = ionlink.fit_correlation(counts, period, bin_)
    assert math.isfinite(fit["tau_decay"])

    with tempfile.TemporaryDirectory() as d:
        assert ionlink.run_cli(["budget", "--seed", "1", "--out", d]) == 0
        assert (Path(d) / "manifest.toml").exists()
        assert ionlink.run_cli(["budget", "--out", d]) == 1

    try:
        ionlink.Config('"receiver.background_rate" = -1')
    except ValueError as e:
        assert "receiver.background_rate" in str(e)
    else:
        raise AssertionError("negative rate accepted")

    print(f"T1 {wp.t1 * 1e6:.3f} us, p_abs {p_abs:.3e}, tau_off {tau:.3f} s, tau_decay {fit['tau_decay'] * 1e6:.2f} us")
    print("smoke test passed")


if __name__ == "__main__":
    main()
