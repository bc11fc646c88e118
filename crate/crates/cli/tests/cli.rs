use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Map, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_overdet"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin().args(args).arg("--config").arg(config).arg("--out").arg(out).arg("--quiet").output().unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Key structure and value types of a JSON document; arrays are described
/// by their first element.
fn schema(v: &Value) -> Value {
    match v {
        Value::Null => json!("null"),
        Value::Bool(_) => json!("bool"),
        Value::Number(_) => json!("number"),
        Value::String(_) => json!("string"),
        Value::Array(a) => Value::Array(a.first().map(schema).into_iter().collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, v)| (k.clone(), schema(v))).collect::<Map<_, _>>()),
    }
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn classical_serrin_solve_report_matches_golden_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["solve"], &configs().join("serrin.toml"), tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rep = report(tmp.path());
    let res = &rep["result"];
    for h in res["shape"].as_array().unwrap() {
        assert!(h["value"].as_f64().unwrap().abs() < 1e-13, "{h}");
    }
    for y in res["y_over_eps"].as_array().unwrap() {
        assert!(y.as_f64().unwrap().abs() < 1e-12);
    }
    assert!(res["report"]["relative_defect"].as_f64().unwrap() < 1e-9);
    assert_eq!(rep["schema"], "overdet-report/1");
    assert_eq!(rep["content_hash"].as_str().unwrap().len(), 64);

    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/solve_report.schema.json");
    let got = schema(&rep);
    if std::env::var_os("OVERDET_BLESS").is_some() {
        std::fs::create_dir_all(golden_path.parent().unwrap()).unwrap();
        std::fs::write(&golden_path, serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
    }
    let golden: Value = serde_json::from_str(&std::fs::read_to_string(&golden_path).unwrap()).unwrap();
    assert_eq!(got, golden, "report schema changed; rerun with OVERDET_BLESS=1 if intended");
}

#[test]
fn identical_configs_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = configs().join("liouville.toml");
    for d in [&a, &b] {
        let o = run(&["find-point"], &cfg, d.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["report.json", "domain.json", "shape.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn malformed_expression_exits_2_with_position() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "[problem]\nn = 2\nF = \"exp(u) +* 2\"\nf0 = \"1\"\nf1 = \"1\"\n[run]\nlambda_bar = 0.5\n");
    let o = run(&["profile"], &cfg, tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("column 9"), "{}", stderr(&o));
}

#[test]
fn supercritical_lambda_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "sup.toml", "[problem]\nn = 2\nF = \"exp(u)\"\nf0 = \"0\"\nf1 = \"1\"\n[run]\nlambda_bar = 50\neps = 0.02\n");
    for mode in ["profile", "solve"] {
        let o = run(&[mode], &cfg, tmp.path());
        assert_eq!(o.status.code(), Some(3), "{mode}");
        assert!(stderr(&o).contains("NoConvergence in radial.solve_phi"), "{}", stderr(&o));
    }
}

#[test]
fn validation_failures_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    assert_eq!(run(&["profile"], &missing, tmp.path()).status.code(), Some(2));
    let no_eps = write(tmp.path(), "a.toml", "[problem]\nn = 2\nF = \"1\"\nf0 = \"0\"\nf1 = \"1\"\n[run]\nlambda_bar = 0.5\n");
    let o = run(&["find-point"], &no_eps, tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run.eps"));
    let not_spd = write(
        tmp.path(),
        "b.toml",
        "[problem]\nn = 2\nF = \"1\"\nf0 = \"0\"\nf1 = \"1\"\nA = [[1.0, 0.0], [0.0, -1.0]]\n[run]\nlambda_bar = 0.5\n",
    );
    assert_eq!(run(&["profile"], &not_spd, tmp.path()).status.code(), Some(2));
    let negative = write(tmp.path(), "c.toml", "[problem]\nn = 2\nF = \"1\"\nf0 = \"0\"\nf1 = \"x1\"\n[run]\nlambda_bar = 0.5\n");
    assert_eq!(run(&["profile"], &negative, tmp.path()).status.code(), Some(2));
}

#[test]
fn linear_spectrum_and_profile_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "lin.toml", "[problem]\nn = 2\nF = \"1\"\nf0 = \"1\"\nf1 = \"1\"\n[run]\nlambda_bar = 0.5\ndegree = 12\n");
    let o = run(&["hp-spectrum"], &cfg, tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rd = csv::Reader::from_path(tmp.path().join("hp_spectrum.csv")).unwrap();
    let mut count = 0;
    for rec in rd.records() {
        let rec = rec.unwrap();
        let l: f64 = rec[0].parse().unwrap();
        let m: f64 = rec[1].parse().unwrap();
        assert!((m - 0.25 * (l - 1.0)).abs() < 1e-9, "l = {l}: {m}");
        count += 1;
    }
    assert_eq!(count, 13);

    let o = run(&["profile"], &cfg, tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rd = csv::Reader::from_path(tmp.path().join("profile.csv")).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), ["r", "phi", "dphi", "ddphi", "W1", "W2"]);
    for rec in rd.records() {
        let rec = rec.unwrap();
        let r: f64 = rec[0].parse().unwrap();
        let phi: f64 = rec[1].parse().unwrap();
        assert!((phi - 0.125 * (1.0 - r * r)).abs() < 1e-10);
    }
    let rep = report(tmp.path());
    assert!((rep["result"]["c_bar"].as_f64().unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn verify_recertifies_and_checks_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("solved");
    let o = run(&["find-point"], &configs().join("liouville.toml"), &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(configs().join("liouville.toml")).unwrap();

    let cfg = write(tmp.path(), "v.toml", &text.replace("mode = \"find-point\"", "mode = \"verify\"\nsolution = \"solved/domain.json\""));
    let o = run(&[], &cfg, &tmp.path().join("v"));
    assert!(o.status.success(), "{}", stderr(&o));
    let rep = report(&tmp.path().join("v"));
    assert_eq!(rep["mode"], "verify");
    assert_eq!(rep["result"]["passed"], true);
    assert!(rep["result"]["relative_defect"].as_f64().unwrap() < 1e-6);

    // the full report is accepted as well
    let cfg = write(tmp.path(), "w.toml", &text.replace("mode = \"find-point\"", "solution = \"solved/report.json\""));
    assert!(run(&["verify"], &cfg, &tmp.path().join("w")).status.success());

    let other = write(tmp.path(), "x.toml", &text.replace("0.3*x1", "0.2*x1").replace("mode = \"find-point\"", "solution = \"solved/domain.json\""));
    let o = run(&["verify"], &other, &tmp.path().join("x"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("different problem"));
}

#[test]
fn torsion_scan_brackets_the_critical_point() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["scan"], &configs().join("torsion.toml"), tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rep = report(tmp.path());
    let cands = rep["result"]["candidates"].as_array().unwrap();
    // f0 + kappa log f1 = x1 - |x|^2/4 is critical at (2, 0); cells are 0.25 wide
    assert!(cands.iter().any(|c| {
        let x = c[0].as_f64().unwrap();
        let y = c[1].as_f64().unwrap();
        (x - 2.0).abs() <= 0.25 && y.abs() <= 0.25
    }));
    let lines = std::fs::read_to_string(tmp.path().join("scan.csv")).unwrap().lines().count();
    assert_eq!(lines, 1 + 25 * 25);
}

#[test]
fn sweep_writes_order_table() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["sweep"], &configs().join("liouville.toml"), tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rd = csv::Reader::from_path(tmp.path().join("sweep_orders.csv")).unwrap();
    let mut seen = false;
    for rec in rd.records() {
        let rec = rec.unwrap();
        if &rec[0] == "neumann_expansion" && !rec[3].is_empty() {
            assert!(rec[3].parse::<f64>().unwrap() >= 1.9);
            seen = true;
        }
    }
    assert!(seen);
    let mut rd = csv::Reader::from_path(tmp.path().join("sweep_solutions.csv")).unwrap();
    assert_eq!(rd.records().filter(|r| &r.as_ref().unwrap()[1] == "ok").count(), 3);
}
