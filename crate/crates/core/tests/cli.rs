use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ivx_core::TestReport;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ivx"));
    for (k, _) in std::env::vars() {
        if k.starts_with("IVX_") {
            c.env_remove(k);
        }
    }
    c
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn golden_factors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f.csv");
    let o = run(&[
        "factors",
        "--prices",
        fixture("bond_prices.csv").to_str().unwrap(),
        "--macro",
        fixture("bond_macro.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let got = std::fs::read_to_string(&out).unwrap();
    let golden = std::fs::read_to_string(fixture("bond_factors.golden.csv")).unwrap();
    assert_eq!(got, golden);
}

#[test]
fn golden_columns_match_price_arithmetic() {
    let prices = std::fs::read_to_string(fixture("bond_prices.csv")).unwrap();
    let golden = std::fs::read_to_string(fixture("bond_factors.golden.csv")).unwrap();
    let p: Vec<Vec<f64>> = prices
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    for (t, line) in golden.lines().skip(1).enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        let f: Vec<f64> = cells[1..6].iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(f[0], -p[t][0]);
        for n in 1..5 {
            assert!((f[n] - (p[t][n - 1] - p[t][n])).abs() < 1e-15);
        }
        for n in 2..=5 {
            let cell = cells[4 + n];
            if t < 12 {
                assert!(cell.is_empty());
            } else {
                let s = t - 12;
                let rx = p[t][n - 2] - p[s][n - 1] + p[s][0];
                assert!((cell.parse::<f64>().unwrap() - rx).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn factors_without_macro_omit_ln_columns() {
    let o = run(&["factors", "--prices", fixture("bond_prices.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().next().unwrap(), "date,F1,F2,F3,F4,F5,rx2,rx3,rx4,rx5,CP");
}

#[test]
fn two_maturity_toy_panel() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.csv");
    let mut csv = String::from("date,p1,p2\n");
    for m in 0..18 {
        let (p1, p2) = (-0.05 - 0.001 * m as f64, -0.11 - 0.0015 * (m * m % 7) as f64);
        csv.push_str(&format!("{}-{:02},{p1},{p2}\n", 2010 + m / 12, m % 12 + 1));
    }
    std::fs::write(&path, &csv).unwrap();
    let o = run(&["factors", "--prices", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[0], "2010-01");
    assert!((first[1].parse::<f64>().unwrap() - 0.05).abs() < 1e-15);
    assert!((first[2].parse::<f64>().unwrap() - 0.06).abs() < 1e-15);
}

#[test]
fn non_contiguous_dates_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gap.csv");
    std::fs::write(&path, "date,p1,p2\n2000-01,-0.05,-0.1\n2000-03,-0.05,-0.1\n").unwrap();
    let o = run(&["factors", "--prices", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("contiguous"));
}

fn test_args(out: &Path) -> Vec<String> {
    vec![
        "test".into(),
        "--data".into(),
        fixture("predictive_k2.csv").to_str().unwrap().into(),
        "--y".into(),
        "ret".into(),
        "--x".into(),
        "dp,tms".into(),
        "--joint".into(),
        "--out".into(),
        out.to_str().unwrap().into(),
    ]
}

#[test]
fn golden_test_report() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    assert_eq!(bin().args(test_args(&a)).output().unwrap().status.code(), Some(0));
    assert_eq!(bin().args(test_args(&b)).output().unwrap().status.code(), Some(0));
    let ja = std::fs::read(&a).unwrap();
    assert_eq!(ja, std::fs::read(&b).unwrap());
    assert_eq!(ja, std::fs::read(fixture("predictive_k2.golden.json")).unwrap());
}

#[test]
fn json_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    bin().args(test_args(&a)).output().unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    let report: TestReport = serde_json::from_str(&text).unwrap();
    let again = serde_json::to_string_pretty(&report).unwrap() + "\n";
    assert_eq!(text, again);
    let raw: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(raw["q_m"].as_f64().unwrap().to_bits(), report.q_m.to_bits());
}

#[test]
fn table_output_has_stars_legend() {
    let o = run(&[
        "test",
        "--data",
        fixture("predictive_k2.csv").to_str().unwrap(),
        "--y",
        "ret",
        "--x",
        "dp,tms",
        "--marginal",
        "dp",
        "--side",
        "left",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("Q_m^t"));
    assert!(text.contains("*** p < 0.01"));
}

#[test]
fn environment_variables_set_flags() {
    let o = bin()
        .args(["test", "--x", "dp,tms", "--json"])
        .env("IVX_DATA", fixture("predictive_k2.csv"))
        .env("IVX_Y", "ret")
        .env("IVX_CZ", "-3")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: TestReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report.config.c_z, -3.0);
}

#[test]
fn missing_column_exits_two() {
    let o = run(&[
        "test",
        "--data",
        fixture("predictive_k2.csv").to_str().unwrap(),
        "--y",
        "ret",
        "--x",
        "dp,nope",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("column not found"));
}

#[test]
fn invalid_config_exits_two() {
    let o = run(&[
        "test",
        "--data",
        fixture("predictive_k2.csv").to_str().unwrap(),
        "--y",
        "ret",
        "--x",
        "dp",
        "--cz",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn noiseless_null_gives_unit_p_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.csv");
    let mut csv = String::from("y,a,b\n");
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for i in 0..80 {
        a = 0.97 * a + ((i * 7 % 11) as f64 - 5.0) * 0.1;
        b = 0.9 * b + ((i * 5 % 13) as f64 - 6.0) * 0.1;
        csv.push_str(&format!("2.5,{a},{b}\n"));
    }
    std::fs::write(&path, csv).unwrap();
    let o = run(&["test", "--data", path.to_str().unwrap(), "--y", "y", "--x", "a,b", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: TestReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(r.degenerate_fit);
    assert_eq!((r.p_values.q_ivx, r.p_values.q_l, r.p_values.q_m), (1.0, 1.0, 1.0));
}

#[test]
fn degenerate_predictor_exits_with_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("const.csv");
    let mut csv = String::from("y,a\n");
    for i in 0..40 {
        csv.push_str(&format!("{},1.0\n", (i as f64 * 0.7).sin()));
    }
    std::fs::write(&path, csv).unwrap();
    let o = run(&["test", "--data", path.to_str().unwrap(), "--y", "y", "--x", "a"]);
    assert_eq!(o.status.code(), Some(2));
}

const SMOKE: &str = r#"
[smoke]
T = 80
alpha = 1
rho = [0.996, 0.993]
gamma = [-3.0, 2.0]
test = "joint"
statistics = ["Q_m"]
"#;

#[test]
fn simulate_smoke_gives_one_row_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("smoke.toml");
    std::fs::write(&sc, SMOKE).unwrap();
    let go = |name: &str| {
        let out = dir.path().join(name);
        let o = run(&[
            "simulate",
            "--scenario",
            sc.to_str().unwrap(),
            "--reps",
            "1",
            "--seed",
            "4",
            "--out",
            out.to_str().unwrap(),
            "--threads",
            "2",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
        std::fs::read_to_string(out).unwrap()
    };
    let a = go("a.csv");
    assert_eq!(a.lines().count(), 2);
    assert!(a.lines().nth(1).unwrap().starts_with("smoke,Q_m,80,2,,1,0,0.05,"));
    assert_eq!(a, go("b.csv"));
}

#[test]
fn bad_scenario_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("bad.toml");
    std::fs::write(&sc, "[x]\nT = 80\n").unwrap();
    let o = run(&["simulate", "--scenario", sc.to_str().unwrap(), "--reps", "1", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn committed_scenarios_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let sc = ivx_core::scenario::load_scenarios(&path).unwrap();
        assert!(!sc.is_empty(), "{}", path.display());
    }
}
