use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const MODEL: &str = r#"{"window": 7, "layers": [
 {"kind": "ann", "weights": [[0.5, -0.2, 0.3], [0.1, 0.4, -0.3], [0.2, 0.2, 0.2], [-0.1, 0.3, 0.5]],
  "bias": [0.0, 0.1, 0.0, -0.05]},
 {"kind": "ssf", "weights": [[0.6, -0.2, 0.3, 0.1], [-0.3, 0.5, 0.2, 0.4]],
  "bias": [0.0, 0.05], "threshold": 0.5}
]}"#;

const CALIB: &str = "a,b,c\n0.5,0,1\n0.25,0.75,1\n0.9,0.1,0.3\n";

fn sparrow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparrow"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn workdir() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("model.json"), MODEL).unwrap();
    fs::write(dir.path().join("calib.csv"), CALIB).unwrap();
    dir
}

#[test]
fn encode_counts() {
    let dir = workdir();
    fs::write(dir.path().join("x.csv"), "0.5,0,1\n").unwrap();
    let o = sparrow(dir.path(), &["encode", "x.csv", "-T", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().last(), Some("2,0,4"));
}

#[test]
fn empty_csv_reports_line_and_exits_2() {
    let dir = workdir();
    fs::write(dir.path().join("empty.csv"), "").unwrap();
    let o = sparrow(dir.path(), &["encode", "empty.csv", "-T", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn bad_value_reports_its_line() {
    let dir = workdir();
    fs::write(dir.path().join("x.csv"), "a,b\n0.1,0.2\n0.3,zz\n").unwrap();
    let o = sparrow(dir.path(), &["encode", "x.csv", "-T", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn missing_file_exits_2() {
    let dir = workdir();
    let o = sparrow(dir.path(), &["encode", "nope.csv", "-T", "4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn out_of_range_window_exits_1() {
    let dir = workdir();
    let o = sparrow(dir.path(), &["encode", "calib.csv", "-T", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn quantize_then_simulate_and_price() {
    let dir = workdir();
    let p = dir.path();
    let q = sparrow(
        p,
        &[
            "quantize",
            "model.json",
            "--calib",
            "calib.csv",
            "-o",
            "m.sprw",
            "--config",
            "m.cfg",
        ],
    );
    assert!(q.status.success(), "{}", stderr(&q));
    assert!(stdout(&q).contains("SSF"));
    assert!(fs::read(p.join("m.sprw")).unwrap().len() > 26);

    let e = sparrow(
        p,
        &[
            "encode",
            "calib.csv",
            "-T",
            "7",
            "--target",
            "level",
            "-o",
            "x.enc",
        ],
    );
    assert!(e.status.success(), "{}", stderr(&e));

    let s = sparrow(p, &["simulate", "m.sprw", "x.enc", "--trace", "run.trace"]);
    assert!(s.status.success(), "{}", stderr(&s));
    let rows: Vec<String> = stdout(&s).lines().skip(1).map(str::to_string).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        let cols: Vec<&str> = r.split_whitespace().collect();
        assert_eq!(cols.len(), 5);
        assert_eq!(cols[3].split('.').nth(1).map(str::len), Some(6), "{r}");
    }

    // the JSON config runs the same network
    let j = sparrow(p, &["simulate", "m.cfg", "x.enc"]);
    assert_eq!(stdout(&j), stdout(&s));

    let t = sparrow(p, &["energy", "--trace", "run.trace"]);
    assert!(t.status.success(), "{}", stderr(&t));
    assert!(stdout(&t).contains("total"));

    let d = sparrow(p, &["energy", "--model", "m.sprw", "--sparsity", "0.5"]);
    assert!(d.status.success(), "{}", stderr(&d));
    assert!(stdout(&d).contains("break-even"));
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = workdir();
    let p = dir.path();
    sparrow(
        p,
        &[
            "quantize",
            "model.json",
            "--calib",
            "calib.csv",
            "-o",
            "m.sprw",
        ],
    );
    sparrow(
        p,
        &[
            "encode",
            "calib.csv",
            "-T",
            "7",
            "--target",
            "level",
            "-o",
            "x.enc",
        ],
    );
    let a = sparrow(
        p,
        &[
            "simulate", "m.sprw", "x.enc", "--trace", "a.trace", "--json",
        ],
    );
    let b = sparrow(
        p,
        &[
            "simulate", "m.sprw", "x.enc", "--trace", "b.trace", "--json",
        ],
    );
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(
        fs::read(p.join("a.trace")).unwrap(),
        fs::read(p.join("b.trace")).unwrap()
    );
}

#[test]
fn threshold_underflow_names_the_layer() {
    let dir = workdir();
    let tiny = MODEL.replace("\"threshold\": 0.5", "\"threshold\": 0.0000001");
    fs::write(dir.path().join("tiny.json"), tiny).unwrap();
    let o = sparrow(
        dir.path(),
        &[
            "quantize",
            "tiny.json",
            "--calib",
            "calib.csv",
            "-o",
            "t.sprw",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("layer 1"), "{}", stderr(&o));
    assert!(!dir.path().join("t.sprw").exists());
}

#[test]
fn corrupted_blob_exits_2() {
    let dir = workdir();
    let p = dir.path();
    sparrow(
        p,
        &[
            "quantize",
            "model.json",
            "--calib",
            "calib.csv",
            "-o",
            "m.sprw",
        ],
    );
    sparrow(
        p,
        &[
            "encode",
            "calib.csv",
            "-T",
            "7",
            "--target",
            "level",
            "-o",
            "x.enc",
        ],
    );
    let mut bytes = fs::read(p.join("m.sprw")).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0x40;
    fs::write(p.join("m.sprw"), bytes).unwrap();
    let o = sparrow(p, &["simulate", "m.sprw", "x.enc"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn window_mismatch_exits_1() {
    let dir = workdir();
    let p = dir.path();
    sparrow(
        p,
        &[
            "quantize",
            "model.json",
            "--calib",
            "calib.csv",
            "-o",
            "m.sprw",
        ],
    );
    sparrow(
        p,
        &[
            "encode",
            "calib.csv",
            "-T",
            "9",
            "--target",
            "level",
            "-o",
            "x.enc",
        ],
    );
    let o = sparrow(p, &["simulate", "m.sprw", "x.enc"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_passes() {
    let dir = workdir();
    let o = sparrow(dir.path(), &["verify"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("39060 instances"));
    assert!(out.contains("13/5") && out.contains("136/79"));
    assert!(out.contains("5440 enumerated"));
}

#[test]
fn perturbed_mac_energy_moves_the_crossover() {
    let dir = workdir();
    fs::write(dir.path().join("c.json"), r#"{"e_mac": 0.26}"#).unwrap();
    let o = sparrow(
        dir.path(),
        &["--coeffs", "c.json", "verify", "--mode", "crossover"],
    );
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("compute-only 5.200000"));
}

#[test]
fn malformed_coefficients_exit_2() {
    let dir = workdir();
    fs::write(dir.path().join("c.json"), "{ not json").unwrap();
    let o = sparrow(dir.path(), &["--coeffs", "c.json", "energy"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn restricted_space_counts_64() {
    let dir = workdir();
    let o = sparrow(dir.path(), &["verify", "--mode", "space", "--depths", "3"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("64 enumerated"));
}

#[test]
fn search_is_seeded_and_counts_evaluations() {
    let dir = workdir();
    let p = dir.path();
    let mut csv = String::from("a,b,label\n");
    for i in 0..40 {
        let c = i % 2;
        csv.push_str(&format!(
            "{:.3},{:.3},{c}\n",
            c as f64 * 0.8 + (i % 5) as f64 * 0.03,
            0.5,
        ));
    }
    fs::write(p.join("d.csv"), csv).unwrap();
    let args = [
        "--seed",
        "5",
        "search",
        "d.csv",
        "--evaluator",
        "params",
        "--history",
        "h.jsonl",
    ];
    let a = sparrow(p, &args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(stdout(&a).contains("evaluations  2000"));
    assert!(stdout(&a).contains("[16,16,16]"));
    let h1 = fs::read(p.join("h.jsonl")).unwrap();
    let b = sparrow(p, &args);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(h1, fs::read(p.join("h.jsonl")).unwrap());
    assert_eq!(String::from_utf8(h1).unwrap().lines().count(), 2000);
}

#[test]
fn invalid_search_config_exits_1() {
    let dir = workdir();
    fs::write(dir.path().join("d.csv"), "a,label\n0.1,0\n0.9,1\n").unwrap();
    fs::write(dir.path().join("nas.json"), r#"{"k_best": 0}"#).unwrap();
    let o = sparrow(dir.path(), &["search", "d.csv", "--config", "nas.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    let dir = workdir();
    assert_eq!(sparrow(dir.path(), &["encode"]).status.code(), Some(2));
    assert_eq!(sparrow(dir.path(), &["bogus"]).status.code(), Some(2));
}
