use gradflow::harness::{
    build_stepper, converge, emit_csv, emit_table, experiment_for, ConvergenceReport, HarnessError,
    OracleChoice, Row, RunConfig, SchemeName, CSV_HEADER,
};
use gradflow::metric::SchemeSet;
use gradflow::tableau::{builtin, Tableau, BUILTIN_NAMES};

fn row(steps: usize, err: f64) -> Row {
    Row {
        steps,
        k: 0.1 / steps as f64,
        l2_error: err,
        observed_order: None,
        energy_violations: 0,
        wallclock_s: 0.01,
        failure: None,
    }
}

#[test]
fn empty_report_is_header_only() {
    let r = ConvergenceReport::default();
    assert_eq!(r.to_csv(), format!("{CSV_HEADER}\n"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    emit_csv(&r, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
}

#[test]
fn second_order_table_shape() {
    let errs = [1.62e-4, 4.22e-5, 1.08e-5, 2.72e-6, 6.84e-7];
    let mut r = ConvergenceReport {
        problem: "heat_wass".into(),
        scheme: "step2".into(),
        rows: errs.iter().enumerate().map(|(i, &e)| row(8 << i, e)).collect(),
        ..Default::default()
    };
    r.fill_orders();
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 6);
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields.len(), 6);
    assert_eq!(fields[0], "8");
    assert_eq!(fields[3], "");
    for l in &lines[2..] {
        let q: f64 = l.split(',').nth(3).unwrap().parse().unwrap();
        assert!((q - 1.95).abs() < 0.05, "{l}");
    }
    let table = emit_table(&r);
    assert!(table.contains("2^3") && table.contains("2^7"));
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn failed_rows_use_nan_sentinel() {
    let mut bad = row(16, f64::NAN);
    bad.failure = Some("Newton failed".into());
    let mut r = ConvergenceReport { rows: vec![row(8, 1e-3), bad, row(32, 6e-5)], ..Default::default() };
    r.fill_orders();
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[2].split(',').nth(2), Some("nan"));
    assert_eq!(lines[2].split(',').nth(3), Some("nan"));
    assert_eq!(lines[3].split(',').nth(3), Some(""));
}

#[test]
fn tableau_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for name in BUILTIN_NAMES {
        let t = builtin(name).unwrap();
        let path = dir.path().join(format!("{name}.tab"));
        t.save(&path).unwrap();
        let back = Tableau::load(&path).unwrap();
        assert_eq!(back.gamma, t.gamma, "{name}");
        assert_eq!(back.theta, t.theta, "{name}");
        assert_eq!(back.label, name);
    }
    assert!(Tableau::load(&dir.path().join("missing.tab")).is_err());
}

#[test]
fn zero_final_time_gives_zero_error() {
    let mut cfg = RunConfig::new("heat_wass", SchemeName::Step2, vec![4, 8]);
    cfg.grid = Some(65);
    cfg.final_time = Some(0.0);
    let r = converge(&cfg).unwrap();
    assert!(r.rows.iter().all(|row| row.l2_error == 0.0));
    assert_eq!(r.total_violations(), 0);
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new("heat_wass", SchemeName::Step2, vec![8, 16]);
    cfg.grid = Some(129);
    cfg.polish = true;
    cfg.out = Some(dir.path().to_path_buf());
    let r = converge(&cfg).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert!(r.rows.iter().all(|row| row.failure.is_none() && row.l2_error > 0.0));
    for f in ["heat_wass_step2.csv", "heat_wass_step2_table.txt", "heat_wass_initial.csv", "heat_wass_oracle.csv", "heat_wass_step2_final_16.csv", "heat_wass_step2_energy_8.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("heat_wass_step2.csv")).unwrap();
    assert_eq!(csv, r.to_csv());
}

#[test]
fn exact_oracle_requires_closed_form() {
    let mut cfg = RunConfig::new("pme_wass", SchemeName::Step2Fi, vec![4, 8]);
    cfg.grid = Some(65);
    cfg.oracle = OracleChoice::Exact;
    assert!(matches!(converge(&cfg), Err(HarnessError::NoExact(_))));
}

#[test]
fn incompatible_schemes_are_rejected() {
    let set = std::sync::Arc::new(SchemeSet::printed());
    let mut cfg = RunConfig::new("ac1d_tw", SchemeName::Fi2, vec![4, 8]);
    cfg.grid = Some(65);
    let exp = experiment_for(&cfg).unwrap();
    assert!(matches!(build_stepper(&exp, SchemeName::Fi2, &set), Err(HarnessError::Incompatible { .. })));
    assert!(matches!(build_stepper(&exp, SchemeName::Step3Fi, &set), Err(HarnessError::Incompatible { .. })));
    assert!(build_stepper(&exp, SchemeName::Si3, &set).is_ok());
    cfg.problem = "heat_wass".into();
    let exp = experiment_for(&cfg).unwrap();
    assert!(matches!(build_stepper(&exp, SchemeName::Be, &set), Err(HarnessError::Incompatible { .. })));
}

#[test]
fn single_step_count_is_rejected() {
    let cfg = RunConfig::new("heat_wass", SchemeName::Step2, vec![8]);
    assert!(converge(&cfg).is_err());
}
