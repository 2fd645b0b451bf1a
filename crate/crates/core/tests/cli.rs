use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ionlink::cli::main_with_args;

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("ionlink").chain(args.iter().copied()))
}

fn report(dir: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(dir.join("report.txt"))
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn num(r: &BTreeMap<String, String>, key: &str) -> f64 {
    r.get(key).unwrap_or_else(|| panic!("missing {key}")).parse().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "\"output.write_events\" = true\n\"receiver.pump_rate\" = 5\n");
    let outs: Vec<_> = ["a", "b"].iter().map(|n| tmp.path().join(n)).collect();
    for o in &outs {
        assert_eq!(
            run(&["cw-run", "--config", &cfg, "--seed", "11", "--duration", "20", "--out", o.to_str().unwrap()]),
            0
        );
    }
    let names =
        ["events.csv", "intervals.csv", "detections.csv", "jumps.csv", "report.txt", "manifest.toml", "config.toml"];
    for n in names {
        assert_eq!(fs::read(outs[0].join(n)).unwrap(), fs::read(outs[1].join(n)).unwrap(), "{n}");
    }
    let c = tmp.path().join("c");
    run(&["cw-run", "--config", &cfg, "--seed", "12", "--duration", "20", "--out", c.to_str().unwrap()]);
    assert_ne!(fs::read(outs[0].join("jumps.csv")).unwrap(), fs::read(c.join("jumps.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["budget", "--no-such-flag", "--out", o]), 1);
    assert_eq!(run(&["budget", "--out", o]), 1, "missing seed");
    let bad = write_config(tmp.path(), "\"receiver.background_rate\" = -1\n");
    assert_eq!(run(&["budget", "--seed", "1", "--config", &bad, "--out", o]), 1);
    let unknown = write_config(tmp.path(), "\"receiver.nonsense\" = 1\n");
    assert_eq!(run(&["budget", "--seed", "1", "--config", &unknown, "--out", o]), 1);

    let dark = write_config(
        tmp.path(),
        "\"laser.397.rabi_mhz\" = 0\n\"laser.866.rabi_mhz\" = 0\n\"laser.850.rabi_mhz\" = 0\n\"laser.854.rabi_mhz\" = 0\n",
    );
    assert_eq!(run(&["wavepacket", "--seed", "1", "--config", &dark, "--out", o]), 3);

    let quiet = write_config(tmp.path(), "\"emitter.arrival\" = \"exponential\"\n\"channel.collection\" = 0\n");
    let q = tmp.path().join("q");
    assert_eq!(
        run(&["seq-run", "--seed", "1", "--config", &quiet, "--triggers", "2000000", "--out", q.to_str().unwrap()]),
        2
    );
    let r = report(&q);
    assert_eq!(r["status"], "\"background_only\"");
    assert!(q.join("correlation.csv").exists() && q.join("manifest.toml").exists());
}

#[test]
fn photons_off_dark_lifetime() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "\"emitter.cw_rate_hz\" = 0\n\"receiver.pump_rate\" = 20\n");
    let out = tmp.path().join("off");
    assert_eq!(
        run(&["cw-run", "--config", &cfg, "--seed", "2", "--duration", "60", "--out", out.to_str().unwrap()]),
        0
    );
    let a = tmp.path().join("an");
    assert_eq!(
        run(&[
            "analyze",
            "--config",
            &cfg,
            "--seed",
            "2",
            "--input",
            out.to_str().unwrap(),
            "--out",
            a.to_str().unwrap()
        ]),
        0
    );
    let r = report(&a);
    let d = ionlink::receiver::ReceiverParams::default();
    let want = 1.0 / (d.spontaneous_dark_to_bright_rate + d.background_dark_to_bright_rate);
    let (tau, se) = (num(&r, "dark.tau_s"), num(&r, "dark.tau_stderr_s"));
    assert!((tau - want).abs() < 3.0 * se, "{tau} ± {se} vs {want}");
}

#[test]
fn budget_heralding_order_of_magnitude() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    assert_eq!(run(&["budget", "--seed", "1", "--out", out.to_str().unwrap()]), 0);
    let h = num(&report(&out), "heralding_efficiency");
    assert!(h > 3e-6 && h < 12e-6, "{h}");
    assert!(out.join("overlap.csv").exists());
}

#[test]
fn empty_config_means_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = write_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&["budget", "--seed", "4", "--config", &empty, "--out", a.to_str().unwrap()]), 0);
    assert_eq!(run(&["budget", "--seed", "4", "--out", b.to_str().unwrap()]), 0);
    for n in ["report.txt", "config.toml", "overlap.csv"] {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n}");
    }
    assert!(fs::read_to_string(a.join("report.txt")).unwrap().contains("# default"));
}
