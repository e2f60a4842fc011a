use std::process::Command;

fn gradflow(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gradflow")).args(args).output().expect("binary runs")
}

fn stdout(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn verify_builtin_reports_order_and_threshold() {
    let o = gradflow(&["verify", "be", "--machine"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("order=1"), "{s}");
    let t: f64 = s.lines().find_map(|l| l.strip_prefix("threshold=")).unwrap().parse().unwrap();
    assert!((t - 1.0).abs() < 1e-9, "{s}");
    assert!(s.contains("ok=true"));
}

#[test]
fn verify_polishes_on_request() {
    let o = gradflow(&["verify", "fi2", "--polish", "2", "--machine"]);
    let s = stdout(&o);
    assert!(o.status.success(), "{s}");
    let residual: f64 = s
        .lines()
        .find_map(|l| l.strip_prefix("polish_residual="))
        .expect("polish line")
        .parse()
        .unwrap();
    assert!(residual <= 1e-13);
}

#[test]
fn verify_loads_tableau_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("euler.tab");
    std::fs::write(&path, "M 1\ntheta present\n1.0\n1.0\n").unwrap();
    let o = gradflow(&["verify", path.to_str().unwrap(), "--machine"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("label=euler"));
}

#[test]
fn verify_rejects_unknown_target() {
    let o = gradflow(&["verify", "no_such_scheme"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("neither a builtin"));
}

#[test]
fn run_writes_csv_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("res");
    let o = gradflow(&[
        "run", "--problem", "pme_wass", "--scheme", "step2_fi", "--steps", "2^3..2^4", "--grid", "129",
        "--polish", "--out", out.to_str().unwrap(),
    ]);
    let s = stdout(&o);
    assert!(o.status.success(), "{s}{}", String::from_utf8_lossy(&o.stderr));
    assert!(s.contains("pme_wass / step2_fi (polished)"));
    let csv = std::fs::read_to_string(out.join("pme_wass_step2_fi.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "steps,k,l2_error,observed_order,energy_violations,wallclock_s");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("8,"));
}

#[test]
fn run_reads_config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "problem = heat_wass\nscheme = step2\nsteps = 4, 8\ngrid = 65\n").unwrap();
    let o = gradflow(&["run", "--config", cfg.to_str().unwrap(), "--steps", "8,16", "--no-monitor"]);
    let s = stdout(&o);
    assert!(o.status.success(), "{s}{}", String::from_utf8_lossy(&o.stderr));
    assert!(s.contains("2^3") && s.contains("2^4") && !s.contains("2^2"), "{s}");
}

#[test]
fn run_rejects_bad_arguments() {
    let o = gradflow(&["run", "--problem", "ac1d_tw", "--scheme", "fi2", "--steps", "4,8", "--grid", "33"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot run"));
    let o = gradflow(&["run", "--problem", "heat_wass", "--scheme", "si2", "--steps", "8"]);
    assert_eq!(o.status.code(), Some(2));
    let o = gradflow(&["run", "--problem", "heat_wass", "--scheme", "rk4", "--steps", "4,8"]);
    assert!(!o.status.success());
    let o = gradflow(&["run", "--scheme", "si2"]);
    assert_eq!(o.status.code(), Some(2));
}
