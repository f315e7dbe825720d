use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn homodyne(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homodyne"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Small vacuum suite: one band, three LO powers, optional dark.
fn vacuum_config(dir: &Path, extra_scenario: &str, extra_verify: &str) -> String {
    let path = dir.join("vacuum.toml");
    fs::write(
        &path,
        format!(
            r#"
seed = 4
[scenario]
sample_rate_hz = 8192.0
{extra_scenario}
[[plan.band]]
f_lo_hz = 10.0
f_hi_hz = 1000.0
rbw_hz = 4.0
n_averages = 400
[verify]
checks = ["linearity", "whiteness"]
{extra_verify}
"#
        ),
    )
    .unwrap();
    path.display().to_string()
}

fn squeezed_config(dir: &Path, name: &str, gain: f64, fs: f64) -> String {
    let path = dir.join(name);
    fs::write(
        &path,
        format!(
            r#"
[scenario]
sample_rate_hz = {fs}
[scenario.opo]
gain = {gain}
[[scenario.loss]]
name = "lumped"
efficiency = 0.85
[scenario.dark]
floor_rel_vacuum = 0.0316
knee_hz = 7.26
[[plan.band]]
f_lo_hz = 10.0
f_hi_hz = 1000.0
rbw_hz = 4.0
n_averages = 100
"#
        ),
    )
    .unwrap();
    path.display().to_string()
}

fn table_row_db(table: &str, f: &str) -> f64 {
    let row = table
        .lines()
        .find(|l| l.starts_with(&format!("{f},")))
        .unwrap_or_else(|| panic!("no row {f} in\n{table}"));
    row.split(',').nth(2).unwrap().parse().unwrap()
}

#[test]
fn spectrum_table_matches_closed_form() {
    let o = homodyne(&["spectrum", "--preset", "fig3"]);
    assert_eq!(code(&o), 0);
    assert!((table_row_db(&stdout(&o), "10") + 6.5594).abs() < 1e-3);

    let o = homodyne(&["spectrum", "--preset", "fig2"]);
    assert_eq!(table_row_db(&stdout(&o), "50"), 0.0);

    let dir = tempfile::tempdir().unwrap();
    let cfg = squeezed_config(dir.path(), "g40.toml", 40.0, 16384.0);
    let o = homodyne(&["spectrum", "--config", &cfg]);
    assert!((table_row_db(&stdout(&o), "50") + 7.6637).abs() < 1e-3);
}

#[test]
fn simulate_is_deterministic_and_refuses_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = vacuum_config(dir.path(), "", "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let oa = homodyne(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]);
    let ob = homodyne(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap()]);
    assert_eq!(code(&oa), 0, "{}", String::from_utf8_lossy(&oa.stderr));
    assert_eq!(stdout(&oa), stdout(&ob));
    assert_eq!(
        fs::read(a.join("vacuum_464uw.f64le")).unwrap(),
        fs::read(b.join("vacuum_464uw.f64le")).unwrap()
    );
    assert!(fs::read_to_string(a.join("vacuum_464uw.meta.toml"))
        .unwrap()
        .contains("sample_rate_hz = 8192.0"));

    let again = homodyne(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]);
    assert_eq!(code(&again), 3);
    let forced = homodyne(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        a.to_str().unwrap(),
        "--force",
    ]);
    assert_eq!(code(&forced), 0);

    let other = homodyne(&[
        "simulate",
        "--config",
        &cfg,
        "--seed",
        "99",
        "--out",
        b.to_str().unwrap(),
        "--force",
    ]);
    assert_ne!(stdout(&oa), stdout(&other));
}

#[test]
fn zero_duration_is_a_config_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = vacuum_config(dir.path(), "duration_s = 0.0", "");
    let out = dir.path().join("out");
    let o = homodyne(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn analyze_writes_spectrum_and_checks_sample_rates() {
    let dir = tempfile::tempdir().unwrap();
    let fast = squeezed_config(dir.path(), "fast.toml", 12.0, 8192.0);
    let slow = squeezed_config(dir.path(), "slow.toml", 12.0, 4096.0);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(
        code(&homodyne(&[
            "simulate",
            "--config",
            &fast,
            "--out",
            a.to_str().unwrap()
        ])),
        0
    );
    assert_eq!(
        code(&homodyne(&[
            "simulate",
            "--config",
            &slow,
            "--out",
            b.to_str().unwrap()
        ])),
        0
    );

    let input = a.join("squeezed.f64le");
    let o = homodyne(&[
        "analyze",
        "--config",
        &fast,
        "--input",
        input.to_str().unwrap(),
        "--dark",
        a.join("squeezed_dark.f64le").to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(a.join("squeezed.spectrum.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "frequency_hz,psd_rel_vacuum,db_rel_vacuum,segment_index,rbw_hz,n_averages"
    );
    let (sum, n) = lines.fold((0.0, 0usize), |(s, n), l| {
        (
            s + l.split(',').nth(1).unwrap().parse::<f64>().unwrap(),
            n + 1,
        )
    });
    let mid_db = 10.0 * (sum / n as f64).log10();
    assert!((mid_db + 6.56).abs() < 0.3, "{mid_db}");
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("squeezed.spectrum.json")).unwrap())
            .unwrap();
    assert_eq!(meta["dark_subtracted"], true);
    assert_eq!(meta["plan"][0]["n_averages"], 100);

    let mismatched = homodyne(&[
        "analyze",
        "--config",
        &fast,
        "--input",
        input.to_str().unwrap(),
        "--dark",
        b.join("squeezed_dark.f64le").to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
        "--force",
    ]);
    assert_eq!(code(&mismatched), 2);

    // The fig3 plan's lowest band needs far more data than this run holds.
    let short = homodyne(&[
        "analyze",
        "--config",
        &fast,
        "--plan",
        "fig3",
        "--input",
        input.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
        "--force",
    ]);
    assert_eq!(code(&short), 2);
    assert!(String::from_utf8_lossy(&short.stderr).contains("band 0"));

    let missing = homodyne(&["analyze", "--config", &fast, "--input", "/no/such.f64le"]);
    assert_eq!(code(&missing), 3);
}

#[test]
fn verify_round_trip_and_failure_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = vacuum_config(dir.path(), "", "");
    let runs = dir.path().join("runs");

    let missing = homodyne(&["verify", "--config", &cfg, "--runs", runs.to_str().unwrap()]);
    assert_eq!(code(&missing), 3);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("vacuum_232uw"));

    assert_eq!(
        code(&homodyne(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            runs.to_str().unwrap()
        ])),
        0
    );
    let o = homodyne(&[
        "verify",
        "--config",
        &cfg,
        "--runs",
        runs.to_str().unwrap(),
        "--out",
        runs.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let reports: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(runs.join("verify_report.json")).unwrap())
            .unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);
    assert_eq!(reports[0]["name"], "lo_power_linearity");

    let in_memory = homodyne(&["verify", "--config", &cfg]);
    assert_eq!(stdout(&in_memory), stdout(&o));

    let strict = homodyne(&["verify", "--config", &cfg, "--tolerance-db", "0"]);
    assert_eq!(code(&strict), 1);
}

#[test]
fn dark_left_in_breaks_linearity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = vacuum_config(
        dir.path(),
        "[scenario.dark]\nfloor_rel_vacuum = 0.1\nknee_hz = 0.0",
        "subtract_dark = false",
    );
    let o = homodyne(&["verify", "--config", &cfg]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("[FAIL] lo_power_linearity"));
}

#[test]
fn bad_configs_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[scenario]\nlo_power_w = 1.0\n").unwrap();
    assert_eq!(
        code(&homodyne(&["spectrum", "--config", path.to_str().unwrap()])),
        2
    );
    fs::write(&path, "[scenario]\n[plan]\npreset = \"fig9\"\n").unwrap();
    assert_eq!(
        code(&homodyne(&["verify", "--config", path.to_str().unwrap()])),
        2
    );
    assert_eq!(code(&homodyne(&["verify", "--preset", "fig9"])), 2);
}
