//! End-to-end runs of the `lmp` binary.

use std::path::Path;
use std::process::{Command, Output};

use lmp_cli::commands::solve::SolveOutput;

fn lmp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmp"))
        .args(args)
        .current_dir(dir)
        .env_remove("LMP_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

#[test]
fn solve_prints_the_pooled_loss() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases = [
        ("[3, 1]", "2", "1", "2.23606798"),
        ("[3, 1]", "1", "1", "3.00000000"),
        ("[1, 2, 3, 4, 5]", "1", "2", "4.50000000"),
        ("[2, 2, 2, 2]", "1.7", "100%", "2.00000000"),
        ("[0, 0, 0]", "2", "1", "0.00000000"),
    ];
    for (losses, p, m, expected) in cases {
        let f = write(d, "l.json", losses);
        let o = lmp(d, &["solve", "--losses", &f, "--p", p, "--m", m, "--output", "o.json"]);
        assert!(o.status.success(), "{losses} p={p} m={m}: {:?}", o);
        assert_eq!(stdout(&o).trim(), expected, "{losses} p={p} m={m}");
    }
}

#[test]
fn solve_json_is_self_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = write(d, "l.csv", "loss\n0.3\n2.5\n1.25\n0.75\n4\n");
    let o = lmp(d, &["solve", "--losses", &f, "--p", "1.5", "--m", "40%"]);
    assert!(o.status.success(), "{o:?}");
    let out: SolveOutput = serde_json::from_str(&std::fs::read_to_string(d.join("solve.json")).unwrap()).unwrap();
    let losses = [0.3, 2.5, 1.25, 0.75, 4.0];
    let value: f64 = out.weights.iter().zip(losses).map(|(w, l)| w * l).sum();
    assert!((value - out.pooled_loss).abs() <= 1e-9 * out.pooled_loss);
    assert_eq!(out.n, 5);
    assert_eq!(out.m, 2.0);
    assert_eq!(out.q, 3.0);
}

#[test]
fn solve_reads_a_config_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = write(d, "l.json", "[3, 1]");
    let c = write(d, "c.json", r#"{"p": "inf", "m": 1, "output": "from_config.json"}"#);
    let o = lmp(d, &["solve", "--losses", &f, "--config", &c]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o).trim(), "2.00000000");
    assert!(d.join("from_config.json").exists());
    let o = lmp(d, &["solve", "--losses", &f, "--config", &c, "--p", "1"]);
    assert_eq!(stdout(&o).trim(), "3.00000000");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let good = write(d, "good.json", "[3, 1]");
    let negative = write(d, "neg.json", "[1, -1, 2]");
    let garbage = write(d, "garbage.json", "[1, 2");
    let code = |args: &[&str]| lmp(d, args).status.code();
    assert_eq!(code(&["solve", "--losses", &negative, "--p", "2", "--m", "1"]), Some(2));
    assert_eq!(code(&["solve", "--losses", &garbage, "--p", "2", "--m", "1"]), Some(2));
    assert_eq!(code(&["solve", "--losses", "missing.json", "--p", "2", "--m", "1"]), Some(2));
    assert_eq!(code(&["solve", "--losses", &good, "--p", "0.5", "--m", "1"]), Some(3));
    assert_eq!(code(&["solve", "--losses", &good, "--p", "2", "--m", "7"]), Some(3));
    assert_eq!(code(&["solve", "--losses", &good, "--p", "2"]), Some(3));
    assert_eq!(code(&["solve", "--losses", &good, "--p", "2", "--m", "1", "--output", "no/such/dir/o.json"]), Some(3));
    assert_eq!(code(&["no-such-command"]), Some(3));
    assert_eq!(code(&["--help"]), Some(0));
    let bad_key = write(d, "bad.json", r#"{"p": 2, "m": 1, "budget": 3}"#);
    let o = lmp(d, &["solve", "--losses", &good, "--config", &bad_key]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("budget"));
}

#[test]
fn weight_curves_writes_one_column_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = lmp(d, &["weight-curves", "--n", "30", "--p", "1,2,inf", "--m", "n/3,100%", "--output", "wc.csv"]);
    assert!(o.status.success(), "{o:?}");
    let mut reader = csv::Reader::from_path(d.join("wc.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header.len(), 2 + 6);
    assert_eq!(header[0], "pixel_rank");
    assert!(header.contains(&"w_p=inf_m=33.3333%".to_string()));
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 30);
    let full = header.iter().position(|h| h == "w_p=2_m=100%").unwrap();
    for r in &rows {
        let w: f64 = r[full].parse().unwrap();
        assert!((w - 1.0 / 30.0).abs() < 1e-15);
    }
}

#[test]
fn audit_passes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = lmp(d, &["oracle-audit", "--instances", "40", "--seed", "3", "--report", "a.json"]);
    let b = lmp(d, &["oracle-audit", "--instances", "40", "--seed", "3", "--report", "b.json", "--sequential"]);
    assert!(a.status.success() && b.status.success(), "{a:?}");
    assert_eq!(std::fs::read(d.join("a.json")).unwrap(), std::fs::read(d.join("b.json")).unwrap());
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn audit_with_zero_tolerance_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = lmp(dir.path(), &["oracle-audit", "--instances", "20", "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn train_demo_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let c = write(d, "c.json", r#"{"train": {"iterations": 5, "learning_rate": 0.1}}"#);
    let o = lmp(d, &["train-demo", "--config", &c]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
    let o = lmp(d, &["train-demo", "--modes", "uniform,focal"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn train_demo_writes_reports_models_and_table_to_the_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    std::fs::create_dir(&out).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lmp"))
        .args(["train-demo", "--seeds", "7", "--iterations", "10", "--modes", "uniform,lmp,imf"])
        .current_dir(dir.path())
        .env("LMP_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{o:?}");
    for mode in ["uniform", "lmp", "inverse_median_freq"] {
        assert!(out.join(format!("report_{mode}_seed7.json")).exists());
        let (model, header) = lmp_core::train::LinearModel::load(&out.join(format!("model_{mode}_seed7.bin"))).unwrap();
        assert_eq!(header.seed, 7);
        assert_eq!(model.classes(), 3);
    }
    let table = std::fs::read_to_string(out.join("iou_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.starts_with("seed,mode,iou_class0,iou_class1,iou_class2,mean_iou"));
}
