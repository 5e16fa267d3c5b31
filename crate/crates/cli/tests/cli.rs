use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use warmcloud::ScalarField;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_warmcloud"))
}

fn cell_cfg() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/cell.cfg")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().arg("--output-dir").arg(out).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_cfg(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("test.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

const ZERO_CFG: &str = r#"
[grid]
nx = 4
ny = 2
nz = 4
[boundary.T]
alpha_0 = 0.0
[boundary.qv]
alpha_0 = 0.0
[velocity]
kind = "none"
[time]
t_end = 0.5
[initial]
kind = "zero"
"#;

fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(2)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn missing_config_is_a_config_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["run", "/no/such/file.cfg"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/file.cfg"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "[time]\ndtt = 0.1\n");
    assert_eq!(code(&run(&["run", cfg.to_str().unwrap()], dir.path())), 2);
}

#[test]
fn zero_config_gives_all_zero_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), ZERO_CFG);
    let o = run(&["--seed", "5", "run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("timeseries.csv")).unwrap();
    assert!(text.starts_with("# seed=5\ntime,"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 6);
    for r in &rows {
        // every column except time and the Picard counters is zero
        assert!(r[1..15].iter().all(|&v| v == 0.0), "{r:?}");
        assert_eq!(r[16], 0.0);
    }
}

#[test]
fn shipped_config_matches_recorded_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["run", cell_cfg().to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("q_v_star") && stdout.contains("violations: 0"), "{stdout}");

    let got = std::fs::read_to_string(dir.path().join("timeseries.csv")).unwrap();
    let want = std::fs::read_to_string(fixture("cell_timeseries.csv")).unwrap();
    assert_eq!(got.lines().take(2).collect::<Vec<_>>(), want.lines().take(2).collect::<Vec<_>>());
    let (g, w) = (csv_rows(&got), csv_rows(&want));
    assert_eq!(g.len(), w.len());
    for (rg, rw) in g.iter().zip(&w) {
        for (a, b) in rg.iter().zip(rw) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-300), "{a} vs {b}");
        }
    }

    let snap = std::fs::read(dir.path().join("qv_50.fld")).unwrap();
    let field = ScalarField::read_snapshot(&snap[..]).unwrap();
    let recorded = ScalarField::read_snapshot(&std::fs::read(fixture("qv_50.fld")).unwrap()[..]).unwrap();
    assert_eq!(field.grid, recorded.grid);
    for (a, b) in field.values.iter().zip(&recorded.values) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-300));
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_eq!(code(&run(&["--seed", "3", "run", cell_cfg().to_str().unwrap()], d.path())), 0);
    }
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 4);
    for n in names {
        assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn kernel_selftest_passes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(&["--seed", "7", "kernel-selftest"], dir.path());
    let b = run(&["--seed", "7", "kernel-selftest"], dir.path());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8_lossy(&a.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 8);
}

#[test]
fn injected_fault_fails_the_selftest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["kernel-selftest", "--inject-fault"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL sign-structure"));
}

#[test]
fn degenerate_battery_grid_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "[battery]\ncert_grid = [1, 1, 1]\nmms_ladder = [1, 2]\n");
    for cmd in ["rothe-verify", "mms"] {
        assert_eq!(code(&run(&[cmd, cfg.to_str().unwrap()], dir.path())), 2, "{cmd}");
    }
}

#[test]
fn small_rothe_battery_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "[battery]\nproblems = 3\ncert_grid = [6, 5, 4]\ncert_steps = 8\n");
    let o = run(&["rothe-verify", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(dir.path().join("certificates.txt")).unwrap();
    assert_eq!(report.matches("l2_pass: true").count(), 3);
    assert_eq!(report.matches("energy_pass: true").count(), 3);
}

#[test]
fn small_mms_ladder_reports_orders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "[battery]\nmms_ladder = [4, 8, 16]\nmms_temporal_grid = 8\nmms_temporal_steps = [8, 16]\nmin_temporal_order = 0.5\n",
    );
    let o = run(&["mms", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let csv = std::fs::read_to_string(dir.path().join("mms.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn unreachable_order_is_an_assertion_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "[battery]\nmms_ladder = [4, 8]\nmms_temporal_grid = 4\nmms_temporal_steps = [4, 8]\nmin_spatial_order = 5.0\n");
    assert_eq!(code(&run(&["mms", cfg.to_str().unwrap()], dir.path())), 1);
}

const SMALL_RUN: &str = r#"
[grid]
nx = 8
ny = 2
nz = 8
[time]
t_end = 1.0
"#;

#[test]
fn two_run_single_eps_gives_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL_RUN);
    let o = run(&["two-run", cfg.to_str().unwrap(), "--eps", "1e-3"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("dependence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], "eps,amplification,t_of_max,final_ratio");
    let a: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
    assert!(a.is_finite() && a >= 1.0);
}

#[test]
fn two_run_rejects_zero_eps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL_RUN);
    assert_eq!(code(&run(&["two-run", cfg.to_str().unwrap(), "--eps", "1e-3,0"], dir.path())), 2);
    assert_eq!(code(&run(&["two-run", cfg.to_str().unwrap(), "--eps", "-1e-3"], dir.path())), 2);
}

#[test]
fn solver_failure_maps_to_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), &format!("{SMALL_RUN}picard_max = 1\npicard_tol = 1e-300\n"));
    assert_eq!(code(&run(&["run", cfg.to_str().unwrap()], dir.path())), 3);
}

#[test]
fn unwritable_output_dir_maps_to_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = bin().arg("--output-dir").arg(blocker.join("sub")).arg("kernel-selftest").output().unwrap();
    assert_eq!(code(&o), 4);
}

#[test]
fn thread_flag_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["--threads", "2", "kernel-selftest", "--samples", "100"], dir.path())), 0);
    assert_eq!(code(&run(&["--threads", "0", "kernel-selftest"], dir.path())), 2);
}
