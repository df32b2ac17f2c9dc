use std::f64::consts::PI;
use std::process::{Command, Output};

fn casimir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_casimir")).args(args).env("CASIMIR_THREADS", "1").output().unwrap()
}

fn json_rows(out: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn num(row: &serde_json::Value, key: &str) -> f64 {
    row[key].as_f64().unwrap_or_else(|| panic!("{key} missing in {row}"))
}

#[test]
fn flat_plates_as_json() {
    let out = casimir(&["energy", "--a", "0", "--d", "1", "--converge", "--output", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = json_rows(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["schema_version"], 1);
    let e = num(&rows[0], "E_total");
    assert!((e + PI * PI / 720.0).abs() < 1e-4 * PI * PI / 720.0, "{e}");
    assert_eq!(rows[0]["converged"], true);
    assert!((num(&rows[0], "E_over_PFA") - 1.0).abs() < 1e-4);
}

#[test]
fn lengths_are_rescaled_by_the_period() {
    let q = ["--M", "3", "--n-kappa", "24", "--n-kx", "12", "--output", "json"];
    let unit = json_rows(&casimir(&[&["energy", "--a", "0.1", "--d", "0.5"][..], &q].concat()));
    let twice = json_rows(&casimir(&[&["energy", "--a", "0.2", "--d", "1", "--Lx", "2"][..], &q].concat()));
    let (x, y) = (num(&unit[0], "E_total"), num(&twice[0], "E_total"));
    assert!((x - y).abs() < 1e-12 * x.abs(), "{x} vs {y}");
}

#[test]
fn config_file_supplies_defaults() {
    let dir = std::env::temp_dir().join(format!("casimir-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "# flat plates\na = 0\nd = 3\nconverge = true\noutput = json\n").unwrap();
    let out = casimir(&["energy", "--config", cfg.to_str().unwrap(), "--d", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let e = num(&json_rows(&out)[0], "E_total");
    assert!((e + PI * PI / 720.0 / 8.0).abs() < 1e-4 * PI * PI / 5760.0, "flag should win over file: {e}");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn contact_is_a_domain_error() {
    let out = casimir(&["energy", "--a", "0.5", "--d", "0.4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert_eq!(casimir(&["energy", "--a", "0.1"]).status.code(), Some(2));
}

#[test]
fn strict_flags_unconverged_sweeps() {
    let args = ["converge", "--a", "0.1", "--d", "0.3", "--M", "1", "--M-max", "6", "--n-kappa", "24", "--n-kx", "12"];
    let loose = casimir(&args);
    assert_eq!(loose.status.code(), Some(0));
    let strict = casimir(&[&args[..], &["--strict"]].concat());
    assert_eq!(strict.status.code(), Some(3));
    let csv = String::from_utf8_lossy(&strict.stdout).to_string();
    assert!(csv.starts_with("M,value,rel_change,converged"), "{csv}");
    assert_eq!(csv.lines().count(), 3, "M = 1 and 6: {csv}");
}

#[test]
fn eigen_table_lists_every_mode() {
    let out = casimir(&["eig", "--a", "0.1", "--kappa", "1", "--kx", "1", "--M", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8_lossy(&out.stdout).to_string();
    assert_eq!(csv.lines().count(), 22, "{csv}");
}

#[test]
fn force_sweep_is_odd_about_half_period() {
    let out = casimir(&["force", "--a", "0.05", "--d", "0.5", "--b-sweep", "4", "--M", "3", "--n-kappa", "24", "--n-kx", "12", "--output", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = json_rows(&out);
    assert_eq!(rows.len(), 4);
    let f: Vec<f64> = rows.iter().map(|r| num(r, "F_lat")).collect();
    assert!(f[1].abs() > 0.0);
    assert!(f[0].abs() < 1e-10 * f[1].abs() && f[2].abs() < 1e-10 * f[1].abs(), "{f:?}");
    assert!((f[1] + f[3]).abs() < 1e-10 * f[1].abs(), "{f:?}");
    assert!(rows.iter().all(|r| num(r, "F_normal") < 0.0));
}

#[test]
fn compare_sweeps_ratios() {
    let out = casimir(&["compare", "--d", "1", "--a-over-d", "0.1,0.2", "--M", "3", "--n-kappa", "24", "--n-kx", "12", "--output", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = json_rows(&out);
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(num(r, "dev_pert_TM").abs() < 0.1, "{r}");
    }
}
