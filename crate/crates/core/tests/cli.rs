use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbiot-noma"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cell.cfg");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&cli(&[])), 1);
    assert_eq!(code(&cli(&["frobnicate"])), 1);
    assert_eq!(code(&cli(&["sweep", "--var", "total_devices", "--out", "x.csv"])), 1);
    assert_eq!(code(&cli(&["--help"])), 0);
}

#[test]
fn bad_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "num_urllc = lots\n");
    let out = dir.path().join("o.csv");
    let o = cli(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
    assert!(!out.exists());
}

#[test]
fn unknown_sweep_variable_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.csv");
    let o = cli(&["sweep", "--var", "colour", "--values", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn unwritable_output_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("missing").join("o.csv");
    let o = cli(&[
        "sweep", "--var", "total_devices", "--values", "20", "--trials", "2", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn run_writes_sorted_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "# small cell\nnum_urllc = 3\nnum_mmtc = 9\nnum_clusters = 6\nmax_rank = 2\nrng_seed = 11\n",
    );
    let out = dir.path().join("o.csv");
    let o = cli(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--trials", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "seed,scheme,sweep_value,sum_rate_bps,fairness,satisfied_count,runtime_s");
    assert_eq!(lines.len(), 1 + 3 * 3);
    assert!(lines[1..4].iter().all(|l| l.split(',').nth(1) == Some("fast_ofdm")));
    assert!(stdout(&o).contains("noma"));

    let again = dir.path().join("p.csv");
    cli(&["run", "--config", &cfg, "--out", again.to_str().unwrap(), "--trials", "3", "--workers", "1"]);
    assert_eq!(std::fs::read_to_string(&again).unwrap(), text);
}

#[test]
fn validate_passes() {
    let o = cli(&["validate", "--instances", "20"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_eq!(stdout(&o).matches("[PASS]").count(), 6);
}

#[test]
fn solve_power_reports_oracle_gap() {
    let o = cli(&["solve-power", "--lambdas", "1,2", "--thresholds", "0,0", "--pmax", "3", "--bandwidth", "1"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("powers_w:"));
    assert!(text.contains("oracle_relative_gap:"));
}

#[test]
fn infeasible_power_problem_exits_2() {
    let o = cli(&["solve-power", "--lambdas", "1,2", "--thresholds", "5,5", "--pmax", "1", "--bandwidth", "1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
}
