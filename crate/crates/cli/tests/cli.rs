use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn preset() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets/kagome_cs_363k.toml")
}

fn hcfmem(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcfmem"))
        .arg("--output-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn with_preset(out: &Path, args: &[&str]) -> Output {
    let p = preset();
    let mut all = vec!["--config", p.to_str().unwrap()];
    all.extend_from_slice(args);
    hcfmem(out, &all)
}

fn ok(o: &Output) {
    assert_eq!(
        o.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

fn strip_timestamp(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("generated_at");
    v
}

#[test]
fn simulated_minimum_sits_next_to_the_strongest_line() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_preset(dir.path(), &["simulate-spectrum"]));
    let rows = csv_rows(&dir.path().join("spectrum.csv"));
    let (f_min, _) = rows
        .iter()
        .map(|r| (r[0], r[1]))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    // F=3 lines: F'=2, 3, 4 at -352.5, -201.3, 0 MHz with S = 5/14, 3/8, 15/56
    let lines: [(f64, f64); 3] = [
        (-352.51131e6, 5.0 / 14.0),
        (-201.28701e6, 3.0 / 8.0),
        (0.0, 15.0 / 56.0),
    ];
    let nearest = lines
        .iter()
        .min_by(|a, b| (a.0 - f_min).abs().total_cmp(&(b.0 - f_min).abs()))
        .unwrap();
    let strongest = lines.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!(nearest, strongest, "minimum at {f_min}");
    let report = json(&dir.path().join("spectrum.json"));
    assert_eq!(report["result"]["min_transmission_frequency"].as_f64(), Some(f_min));
    assert!(report["digests"]["config"].is_string());
}

#[test]
fn zero_od_gives_flat_baseline() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_preset(dir.path(), &["simulate-spectrum", "--effective-od", "0"]));
    let rows = csv_rows(&dir.path().join("spectrum.csv"));
    assert!(rows.iter().all(|r| r[1] == 1.0));
}

#[test]
fn malformed_config_exits_two_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[thermal]\ntemperature = \"hot\"\n").unwrap();
    let out = dir.path().join("out");
    let o = hcfmem(&out, &["--config", cfg.to_str().unwrap(), "simulate-spectrum"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("temperature"));
    assert!(!out.exists());
}

#[test]
fn numerical_domain_error_leaves_no_partial_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = with_preset(&out, &["simulate-spectrum", "--doppler-sigma", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn simulate_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_preset(
        dir.path(),
        &["simulate-spectrum", "--noise", "0.01", "--seed", "3"],
    ));
    let csv = dir.path().join("spectrum.csv");
    ok(&with_preset(
        dir.path(),
        &["fit-spectrum", "--input", csv.to_str().unwrap()],
    ));
    let r = json(&dir.path().join("fit_spectrum.json"));
    let p = &r["result"]["fit"]["parameters"];
    assert!((p["effective_od"].as_f64().unwrap() - 5.7).abs() < 0.1, "{p}");
    assert!((p["doppler_sigma"].as_f64().unwrap() - 177e6).abs() < 3e6, "{p}");
    assert_eq!(r["result"]["fit"]["converged"], Value::Bool(true));
    assert!(r["digests"]["input"].is_string());
}

#[test]
fn satspec_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_preset(
        dir.path(),
        &[
            "simulate-spectrum",
            "--satspec",
            "--effective-od",
            "2",
            "--noise",
            "0.001",
            "--seed",
            "4",
        ],
    ));
    let csv = dir.path().join("spectrum.csv");
    ok(&with_preset(
        dir.path(),
        &["fit-satspec", "--input", csv.to_str().unwrap()],
    ));
    let r = json(&dir.path().join("fit_satspec.json"));
    let w = r["result"]["fit"]["parameters"]["dip_fwhm"].as_f64().unwrap();
    assert!((w / 6e6 - 1.0).abs() < 0.1, "dip width {w}");
}

#[test]
fn empty_csv_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    fs::write(&csv, "frequency_hz,transmission\n").unwrap();
    let o = with_preset(dir.path(), &["fit-spectrum", "--input", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    let power = dir.path().join("power.csv");
    fs::write(&power, "power,width_hz,width_sigma_hz\n").unwrap();
    let o = with_preset(dir.path(), &["fit-power", "--input", power.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_power_on_three_exact_points() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("power.csv");
    let g = |p: f64| 6e6 * (1.0 + p / 50e-9).sqrt();
    let mut text = String::from("power,width_hz,width_sigma_hz\n");
    for p in [10e-9, 50e-9, 200e-9] {
        text += &format!("{p:?},{:?},1e5\n", g(p));
    }
    fs::write(&csv, text).unwrap();
    ok(&hcfmem(dir.path(), &["fit-power", "--input", csv.to_str().unwrap()]));
    let r = json(&dir.path().join("fit_power.json"));
    let p = &r["result"]["fit"]["parameters"];
    assert!((p["gamma0"].as_f64().unwrap() / 6e6 - 1.0).abs() < 1e-9);
    assert!((p["i_sat"].as_f64().unwrap() / 50e-9 - 1.0).abs() < 1e-9);
}

#[test]
fn equal_powers_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("power.csv");
    fs::write(
        &csv,
        "power,width_hz,width_sigma_hz\n1,6e6,1e5\n1,6.1e6,1e5\n1,5.9e6,1e5\n",
    )
    .unwrap();
    let o = hcfmem(dir.path(), &["fit-power", "--input", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unconverged_fit_exits_four_unless_allowed() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_preset(
        dir.path(),
        &["simulate-spectrum", "--noise", "0.01", "--seed", "3"],
    ));
    let csv = dir.path().join("spectrum.csv");
    let cfg = dir.path().join("short.toml");
    fs::write(&cfg, "[fit]\nmax_iterations = 1\n").unwrap();
    let args = [
        "--config",
        cfg.to_str().unwrap(),
        "fit-spectrum",
        "--input",
        csv.to_str().unwrap(),
    ];
    assert_eq!(hcfmem(dir.path(), &args).status.code(), Some(4));
    let mut allowed = args.to_vec();
    allowed.insert(0, "--allow-unconverged");
    ok(&hcfmem(dir.path(), &allowed));
    let r = json(&dir.path().join("fit_spectrum.json"));
    assert_eq!(r["result"]["fit"]["converged"], Value::Bool(false));
}

#[test]
fn fit_liad_and_calibrate() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("liad.csv");
    let model = |t: f64| {
        let x: f64 = t - 2.0;
        if x <= 0.0 {
            5.7
        } else {
            5.7 + 300.0 * (1.0 - (-x / 0.05).exp()) * (-x / 30.0).exp()
        }
    };
    let mut text = String::from("time_s,effective_od\n");
    let times = (0..20)
        .map(|i| 0.1 * i as f64)
        .chain((0..100).map(|i| 2.0 + 0.01 * i as f64))
        .chain((0..235).map(|i| 3.0 + 0.5 * i as f64));
    for t in times {
        text += &format!("{t:?},{:?}\n", model(t));
    }
    fs::write(&csv, text).unwrap();
    ok(&hcfmem(dir.path(), &["fit-liad", "--input", csv.to_str().unwrap()]));
    let r = json(&dir.path().join("fit_liad.json"));
    let tau_d = r["result"]["fit"]["parameters"]["decay_tau"].as_f64().unwrap();
    assert!((tau_d / 30.0 - 1.0).abs() < 1e-3);
    assert!(r["result"]["fit"]["derived"]["peak_effective_od"].as_f64().unwrap() > 290.0);

    let cal = dir.path().join("cal.csv");
    fs::write(&cal, "raw,reference_hz\n0,0\n1,201.3e6\n").unwrap();
    ok(&hcfmem(dir.path(), &["calibrate", "--input", cal.to_str().unwrap()]));
    let r = json(&dir.path().join("calibration.json"));
    assert!((r["result"]["calibration"]["scale"].as_f64().unwrap() - 201.3e6).abs() < 1e-3);
}

#[test]
fn transit_mc_requires_seed_and_brackets_hundred_ns() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcfmem(dir.path(), &["transit-mc"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    ok(&with_preset(dir.path(), &["transit-mc"]));
    let r = json(&dir.path().join("transit.json"));
    let mean = r["result"]["stats"]["mean"].as_f64().unwrap();
    assert!((60e-9..=140e-9).contains(&mean), "{mean}");
    assert_eq!(r["result"]["stats"]["n_samples"].as_u64(), Some(1_000_000));
}

#[test]
fn reruns_are_identical_apart_from_timestamp() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&with_preset(d.path(), &["transit-mc", "--n-samples", "20000"]));
        ok(&with_preset(d.path(), &["simulate-spectrum", "--noise", "0.01"]));
    }
    for f in ["transit.json", "spectrum.json"] {
        assert_eq!(
            strip_timestamp(json(&a.path().join(f))),
            strip_timestamp(json(&b.path().join(f)))
        );
    }
    assert_eq!(
        fs::read(a.path().join("spectrum.csv")).unwrap(),
        fs::read(b.path().join("spectrum.csv")).unwrap()
    );
}

#[test]
fn pump_sweep_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_preset(dir.path(), &["pump-efficiency", "--n-samples", "100000"]));
    let rows = csv_rows(&dir.path().join("pump_efficiency_sweep.csv"));
    assert_eq!(rows.len(), 21);
    assert_eq!(rows[0], vec![0.0, 9.0 / 16.0]);
    assert!(rows.windows(2).all(|w| w[1][1] >= w[0][1]));
    assert!((rows.last().unwrap()[0] - 1e9).abs() < 1.0);
}

#[test]
fn extract_efficiency_command() {
    let dir = tempfile::tempdir().unwrap();
    ok(&hcfmem(
        dir.path(),
        &["extract-efficiency", "--od-unpumped", "5.7", "--od-pumped", "5.7"],
    ));
    let r = json(&dir.path().join("extracted_efficiency.json"));
    assert_eq!(r["result"]["efficiency"].as_f64(), Some(0.5625));
    let o = hcfmem(
        dir.path(),
        &["extract-efficiency", "--od-unpumped", "5.7", "--od-pumped", "7"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn memory_report_from_preset_is_feasible() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_preset(dir.path(), &["memory-report"]));
    let r = json(&dir.path().join("memory_report.json"));
    assert_eq!(r["result"]["verdict"], "feasible");
    assert_eq!(r["result"]["report"]["coupling"]["efficient"], Value::Bool(true));
    let text = fs::read_to_string(dir.path().join("memory_report.txt")).unwrap();
    assert!(text.starts_with("verdict: feasible"));
}

#[test]
fn memory_report_lists_missing_inputs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m.toml");
    fs::write(
        &cfg,
        "[memory.budget]\neffective_od = 300.0\n[memory.reports]\ntransit = \"nope.json\"\npump = \"gone.json\"\n",
    )
    .unwrap();
    let o = hcfmem(
        &dir.path().join("out"),
        &["--config", cfg.to_str().unwrap(), "memory-report"],
    );
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("transit") && err.contains("pump"), "{err}");

    fs::write(&cfg, "[memory.budget]\neffective_od = 300.0\n").unwrap();
    let o = hcfmem(
        &dir.path().join("out"),
        &["--config", cfg.to_str().unwrap(), "memory-report"],
    );
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("rabi_omega") && err.contains("pulse_duration"), "{err}");
}

#[test]
fn memory_report_composes_upstream_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&with_preset(out, &["simulate-spectrum", "--noise", "0.005"]));
    let csv = out.join("spectrum.csv");
    ok(&with_preset(out, &["fit-spectrum", "--input", csv.to_str().unwrap()]));
    ok(&with_preset(out, &["transit-mc", "--n-samples", "50000"]));
    let transit = out.join("transit.json");
    ok(&with_preset(
        out,
        &["pump-efficiency", "--transit-report", transit.to_str().unwrap()],
    ));
    let cfg = out.join("chain.toml");
    fs::write(
        &cfg,
        "output_dir = \".\"\n\
         [memory.budget]\nhomogeneous_gamma = 5.2e6\nbandwidth_delta = 1.5e9\nrabi_omega = 3e9\n\
         detuning_delta = 15.2e9\npulse_duration = 300e-12\n\
         [memory.reports]\ntransmission_fit = \"fit_spectrum.json\"\ntransit = \"transit.json\"\n\
         pump = \"pump_efficiency.json\"\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_hcfmem"))
        .args(["--config", cfg.to_str().unwrap(), "memory-report"])
        .output()
        .unwrap();
    ok(&o);
    let r = json(&out.join("memory_report.json"));
    let sources = &r["result"]["inputs"]["sources"];
    assert!(sources["effective_od"].as_str().unwrap().starts_with("fit-spectrum"));
    assert!(sources["transit_mean"].as_str().unwrap().starts_with("transit-mc"));
    // d* = 5.7 is far below 10 x delta/gamma_i and gives C^2 < 1
    assert_eq!(r["result"]["verdict"], "infeasible");
    assert!(r["digests"]["transit"].is_string());
}
