//! End-to-end runs of every output-producing experiment kind, the
//! determinism contract (byte-identical CSV bodies across reruns and worker
//! counts), and the installed binary's argument/exit-code behavior.

use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::json;

use ionsim::cli::{run, RunConfig};
use ionsim::units::HBAR;

fn config(kind: &str, params: serde_json::Value) -> RunConfig {
    serde_json::from_value(json!({
        "context": { "species": "Ca-40", "omega_z": 1.0e6 },
        "kind": kind,
        "params": params,
    }))
    .unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("missing {name}: {e}"))
}

/// Matched three-ion soft-mode quartic coefficient (J/m⁴) and the margin-one
/// quadratic coefficient −|a|* (J/m²), derived through the library itself.
fn margin_one_chain_well() -> (f64, f64) {
    let ctx = ionsim::units::ContextSpec::matched().build().unwrap();
    let lc = ionsim::modes::chain_landau(3, 1.0, &ctx).unwrap();
    let a_star = ionsim::modes::one_level_threshold(lc.b, lc.mass);
    (lc.b, -a_star)
}

#[test]
fn entropy_full_single_point_matches_gaussian_theory_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        "entropy-full",
        json!({ "r_values": [1.7], "grid": { "n_base": 32 } }),
    );
    run(&cfg, dir.path(), Some(1)).unwrap();
    let scan = read(dir.path(), "scan.csv");
    let mut lines = scan.lines();
    assert_eq!(lines.next().unwrap(), "r_x,S_bits,sqrt_x2_m,gap_Hz");
    let row: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(row[0], 1.7);
    // Far above the transition the harmonic theory pins the entropy.
    assert!((row[1] - 0.158).abs() < 0.03, "S = {}", row[1]);
    assert!(row[2] > 0.0 && row[3] > 0.0);
    let plot = read(dir.path(), "plot.dat");
    assert!(plot.starts_with("# r_x  S [bits]"), "{plot}");
    assert!(!dir.path().join("points").exists());

    // Rerun with a different worker count: byte-identical bodies.
    let dir2 = tempfile::tempdir().unwrap();
    run(&cfg, dir2.path(), Some(2)).unwrap();
    assert_eq!(scan, read(dir2.path(), "scan.csv"));
    assert_eq!(plot, read(dir2.path(), "plot.dat"));
    // Manifests agree except for the echoed output directory.
    let strip = |dir: &Path| -> serde_json::Value {
        let mut m: serde_json::Value =
            serde_json::from_str(&read(dir, "manifest.json")).unwrap();
        m["resolved_config"]["out_dir"] = json!("");
        m
    };
    assert_eq!(strip(dir.path()), strip(dir2.path()));
}

#[test]
fn entropy_gaussian_scan_emits_per_site_columns_in_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("entropy-gaussian", json!({ "n": 3, "r_values": [2.2, 1.7, 1.9] }));
    run(&cfg, dir.path(), Some(2)).unwrap();
    let csv = read(dir.path(), "entropy.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "r_x,S_site0_bits,S_site1_bits,S_site2_bits");
    assert_eq!(lines.len(), 4);
    // Input order preserved in the CSV …
    let rs: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(rs, vec![2.2, 1.7, 1.9]);
    // … and the mirror symmetry of the chain shows in the site columns.
    for l in &lines[1..] {
        let cols: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
        assert!((cols[1] - cols[3]).abs() < 1e-9, "outer sites match: {l}");
        assert!(cols[1] > 0.0);
    }
    // plot.dat sorts by r.
    let plot = read(dir.path(), "plot.dat");
    let xs: Vec<f64> = plot
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(xs, vec![1.7, 1.9, 2.2]);
}

#[test]
fn entropy_gaussian_below_critical_fails_naming_the_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("entropy-gaussian", json!({ "n": 3, "r_values": [1.7, 1.2] }));
    let err = run(&cfg, dir.path(), Some(1)).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("point 1") && msg.contains("1.2"), "{msg}");
}

#[test]
fn doublewell_spectrum_from_chain_reports_criterion_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        "doublewell-spectrum",
        json!({ "well": { "n": 3, "r_x": 1.4 }, "levels": 4 }),
    );
    run(&cfg, dir.path(), Some(1)).unwrap();
    let csv = read(dir.path(), "spectrum.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# k, E [J], (E-E0)/h [Hz]");
    assert_eq!(lines.len(), 5);
    let energies: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(", ").nth(1).unwrap().parse().unwrap())
        .collect();
    for w in energies.windows(2) {
        assert!(w[1] >= w[0], "spectrum sorted: {energies:?}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "manifest.json")).unwrap();
    let res = &manifest["results"];
    assert!(res["a_J_per_m2"].as_f64().unwrap() < 0.0, "zigzag side opens a well");
    assert!(res["criterion_point"]["a_star_J_per_m2"].as_f64().unwrap() < 0.0);
    assert!(res["criterion_point"]["detuning_rad_s"].as_f64().unwrap() > 0.0);
    assert!(res["barrier_J"].as_f64().unwrap() > 0.0);
    assert!(res["well_separation_m"].as_f64().unwrap() > 0.0);
    assert!(res["landau"]["b_J_per_m4"].as_f64().unwrap() > 0.0);
    assert!(res["max_residual"].as_f64().unwrap() < 1e-8);
}

#[test]
fn sweep_writes_rate_fidelity_in_input_order_and_deterministically() {
    let (b, a_star) = margin_one_chain_well();
    // Harmonic-side ramp: cheap, adiabatic, fidelity near 1.
    let cfg = config(
        "sweep",
        json!({
            "well": { "a": -a_star, "b": b },
            "a_end": -2.0 * a_star,
            "durations": [3.0e-5, 1.0e-5],
            "dt": 1.0e-7,
            "grid": { "n": 1024 },
        }),
    );
    let dir = tempfile::tempdir().unwrap();
    run(&cfg, dir.path(), Some(2)).unwrap();
    let csv = read(dir.path(), "sweep.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "rate_J_per_m2_s,duration_s,fidelity");
    assert_eq!(lines.len(), 3);
    let rows: Vec<Vec<f64>> = lines[1..]
        .iter()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    // Input order: the slower ramp (3e-5 s) first.
    assert!(rows[0][1] > rows[1][1]);
    for r in &rows {
        assert!(r[2] > 0.5 && r[2] <= 1.0 + 1e-12, "fidelity sane: {r:?}");
    }
    // Slower ramp is at least as faithful.
    assert!(rows[0][2] >= rows[1][2] - 1e-6);
    // plot.dat is sorted by rate (ascending), so the slow ramp comes first.
    let plot = read(dir.path(), "plot.dat");
    assert!(plot.starts_with("# rate [J/m^2/s]  fidelity"));
    let xs: Vec<f64> = plot
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert!(xs[0] < xs[1]);

    let dir2 = tempfile::tempdir().unwrap();
    run(&cfg, dir2.path(), Some(1)).unwrap();
    assert_eq!(csv, read(dir2.path(), "sweep.csv"));
}

#[test]
fn rabi_trajectory_has_unit_norm_and_defaults_to_resonance() {
    let (b, neg_a_star) = margin_one_chain_well();
    let cfg = config(
        "rabi",
        json!({
            "well": { "a": neg_a_star, "b": b },
            "amplitude": 1.0e-30,
            "duration": 4.0e-5,
            "dt": 1.0e-7,
            "grid": { "n": 1024 },
        }),
    );
    let dir = tempfile::tempdir().unwrap();
    run(&cfg, dir.path(), Some(1)).unwrap();
    let csv = read(dir.path(), "rabi.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t_s,p_left,p_right,x_mean_m,norm");
    assert!(lines.len() > 10);
    let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 0.0);
    assert!(first[1] > 0.99, "starts left-localized: {}", first[1]);
    for l in &lines[1..] {
        let norm: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        assert!((norm - 1.0).abs() < 1e-9, "unitary propagation: {l}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "manifest.json")).unwrap();
    let res = &manifest["results"];
    let resonance = res["resonance_omega_rad_s"].as_f64().unwrap();
    let drive = res["drive_omega_rad_s"].as_f64().unwrap();
    assert!((drive - resonance).abs() < 1e-9 * resonance.abs().max(1.0));
    // Doublet resonance of the margin-one well is a fraction of the well
    // frequency scale.
    let omega_star = ionsim::modes::margin_one_detuning(b, 6.6e-26);
    assert!(resonance > 0.0 && resonance < omega_star);
    let plot = read(dir.path(), "plot.dat");
    assert!(plot.starts_with("# t [s]  P_L  P_R"));
}

#[test]
fn rabi_rejects_oversized_dt_before_propagating() {
    let (b, neg_a_star) = margin_one_chain_well();
    let cfg = config(
        "rabi",
        json!({
            "well": { "a": neg_a_star, "b": b },
            "amplitude": 1.0e-30,
            "duration": 4.0e-5,
            "dt": 1.0e-5,
            "grid": { "n": 512 },
        }),
    );
    let dir = tempfile::tempdir().unwrap();
    let err = run(&cfg, dir.path(), Some(1)).unwrap_err();
    assert!(err.to_string().contains("too large"), "{err}");
    assert!(!dir.path().join("rabi.csv").exists(), "no partial outputs");
}

#[test]
fn thresholds_3d_orders_the_two_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("thresholds-3d", json!({}));
    run(&cfg, dir.path(), Some(1)).unwrap();
    let csv = read(dir.path(), "thresholds.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# n, lower [wr/wz], upper [wr/wz]");
    let cols: Vec<&str> = lines[1].split(", ").collect();
    assert_eq!(cols[0], "4");
    let lower: f64 = cols[1].parse().unwrap();
    let upper: f64 = cols[2].parse().unwrap();
    assert!(0.0 < lower && lower < upper, "{lower} < {upper}");
}

#[test]
fn modes_run_writes_mode_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("modes", json!({ "n": 3, "r_x": 2.0 }));
    run(&cfg, dir.path(), Some(1)).unwrap();
    let csv = read(dir.path(), "modes.csv");
    assert!(csv.starts_with("# mode, omega2 [wz^2]"), "{csv}");
    assert_eq!(csv.lines().count(), 4);
    let manifest: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "manifest.json")).unwrap();
    // Soft zigzag mode at r = 2: ω² = r² − 2.4.
    let w2 = manifest["results"]["soft_mode_omega_squared"].as_f64().unwrap();
    assert!((w2 - 1.6).abs() < 1e-6, "{w2}");
}

#[test]
fn cyclic_convention_scales_the_rabi_drive() {
    let (b, neg_a_star) = margin_one_chain_well();
    // The same drive stated in Hz under the cyclic convention must resolve
    // to 2π times the angular value.
    let omega_hz = 3.0e3;
    let cfg: RunConfig = serde_json::from_value(json!({
        "context": { "species": "Ca-40", "omega_z": 1.0e6 / (2.0 * std::f64::consts::PI),
                     "freq_convention": "cyclic" },
        "kind": "rabi",
        "params": {
            "well": { "a": neg_a_star, "b": b },
            "amplitude": 1.0e-30,
            "omega": omega_hz,
            "duration": 2.0e-5,
            "dt": 1.0e-7,
            "grid": { "n": 512 },
        },
    }))
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    run(&cfg, dir.path(), Some(1)).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "manifest.json")).unwrap();
    let drive = manifest["results"]["drive_omega_rad_s"].as_f64().unwrap();
    assert!((drive - 2.0 * std::f64::consts::PI * omega_hz).abs() < 1e-9 * drive);
}

#[test]
fn binary_runs_critical_and_reports_validation_failures() {
    let exe = env!("CARGO_BIN_EXE_ionsim");
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.json");
    fs::write(
        &cfg_path,
        serde_json::to_string(&config("critical", json!({ "n": 3 }))).unwrap(),
    )
    .unwrap();
    let out = dir.path().join("out");
    let ok = Command::new(exe)
        .args(["critical", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(ok.status.success(), "stderr: {}", String::from_utf8_lossy(&ok.stderr));
    assert!(out.join("critical.csv").exists());
    assert!(out.join("manifest.json").exists());
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("critical.csv"), "{stdout}");

    // Unknown key → exit 1 and the key named on stderr.
    fs::write(
        &cfg_path,
        r#"{ "context": { "species": "Ca-40", "omega_z": 1e6 }, "kind": "critical",
             "params": { "n": 3 }, "speling": 1 }"#,
    )
    .unwrap();
    let bad = Command::new(exe)
        .args(["critical", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&bad.stderr);
    assert!(stderr.contains("speling"), "{stderr}");

    // Environment override redirects the output directory.
    fs::write(
        &cfg_path,
        serde_json::to_string(&config("critical", json!({ "n": 2 }))).unwrap(),
    )
    .unwrap();
    let env_out = dir.path().join("env-out");
    let redirected = Command::new(exe)
        .args(["critical", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .env("IONSIM_OUT", &env_out)
        .output()
        .unwrap();
    assert!(redirected.status.success());
    assert!(env_out.join("critical.csv").exists());
}

#[test]
fn trajectory_time_step_resolves_the_doublet() {
    // The validator's bound must sit below the doublet period so recorded
    // dynamics are meaningful: max_dt ≤ ħ/(20(E₃−E₀)) ≪ 2πħ/ΔE₀₁.
    let (b, neg_a_star) = margin_one_chain_well();
    let ctx = ionsim::units::ContextSpec::matched().build().unwrap();
    let p = ionsim::doublewell::Potential1D::symmetric(neg_a_star, b, ctx.mass()).unwrap();
    let sol =
        ionsim::doublewell::eigenstates_1d(&p, ionsim::doublewell::GridSpec::default(), 4).unwrap();
    let doublet_period = 2.0 * std::f64::consts::PI * HBAR / (sol.energies[1] - sol.energies[0]);
    let dt_bound = HBAR / (20.0 * (sol.energies[3] - sol.energies[0]));
    assert!(dt_bound < doublet_period / 100.0);
}
