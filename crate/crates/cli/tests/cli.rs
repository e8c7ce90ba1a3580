use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn tce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tce"))
        .args(args)
        .output()
        .expect("spawn tce")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

/// Low-discrepancy pseudo data so the files are reproducible without an RNG.
fn frac(i: usize, a: f64) -> f64 {
    (i as f64 * a).fract()
}

fn normalish(i: usize) -> f64 {
    // sum of three uniforms, centred and scaled to unit variance
    (frac(i, 0.618_033_988_7) + frac(i, 0.414_213_562_4) + frac(i, 0.732_050_807_6) - 1.5) * 2.0
}

fn write_xy(dir: &Path, n: usize) -> String {
    let mut s = String::from("x,y\n");
    for i in 0..n {
        let x = 2.0 * frac(i, 0.754_877_666_2) - 1.0;
        writeln!(s, "{x},{}", x + normalish(i)).unwrap();
    }
    let p = dir.join("xy.csv");
    fs::write(&p, s).unwrap();
    p.to_str().unwrap().to_string()
}

fn write_lee(dir: &Path, n: usize) -> String {
    let mut s = String::from("x,y,d,s\n");
    for i in 0..n {
        let x = frac(i, 0.754_877_666_2);
        let d = frac(i, 0.569_840_290_9) < 0.5;
        let u = frac(i, 0.839_286_755_2);
        let sel = u < 0.8 || (d && u < 0.9);
        let y = if sel {
            format!("{}", if d { 1.0 } else { 0.0 } + normalish(i))
        } else {
            String::new()
        };
        writeln!(s, "{x},{y},{},{}", d as u8, sel as u8).unwrap();
    }
    let p = dir.join("lee.csv");
    fs::write(&p, s).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn estimate_json_envelope() {
    let dir = TempDir::new().unwrap();
    let input = write_xy(dir.path(), 800);
    let o = tce(&[
        "estimate",
        "--input",
        &input,
        "--x0",
        "0",
        "--eta",
        "0.8",
        "--smoothness",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["command"], "estimate");
    assert_eq!(v["status"], "ok");
    let est = &v["result"]["estimate"];
    assert!(est["value"].as_f64().unwrap().is_finite());
    assert!(v["result"]["bandwidth"]["h"].as_f64().unwrap() > 0.0);
    assert_eq!(v["config"]["eta"], 0.8);
}

#[test]
fn repeat_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let input = write_xy(dir.path(), 600);
    let args = [
        "estimate",
        "--input",
        &input,
        "--x0",
        "0.2",
        "--eta",
        "0.5",
        "--tail",
        "upper",
        "--bandwidth",
        "0.5",
    ];
    let a = tce(&args);
    let b = tce(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn simulate_csv_has_one_row_per_cell() {
    let o = tce(&[
        "simulate",
        "--table",
        "1",
        "--reps",
        "4",
        "--n",
        "200",
        "--format",
        "csv",
        "--threads",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 18);
    let width = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == width));
}

#[test]
fn simulate_ignores_thread_count() {
    let run = |t: &str| {
        tce(&[
            "simulate",
            "--table",
            "2",
            "--reps",
            "3",
            "--n",
            "150",
            "--format",
            "csv",
            "--threads",
            t,
        ])
        .stdout
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn missing_cutoff_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let input = write_xy(dir.path(), 100);
    let o = tce(&["bounds-rd", "--input", &input, "--bandwidth", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    let v = json(&o);
    assert_eq!(v["status"], "error");
    assert_eq!(v["error"]["exit_code"], 2);
}

#[test]
fn bounds_rd_with_sensitivity() {
    let dir = TempDir::new().unwrap();
    let input = write_xy(dir.path(), 2000);
    let o = tce(&[
        "bounds-rd",
        "--input",
        &input,
        "--cutoff",
        "0",
        "--bandwidth",
        "0.6",
        "--tau-grid",
        "0,0.05",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    let sens = v["result"]["sensitivity"].as_array().unwrap();
    assert_eq!(sens.len(), 2);
    let width = |b: &Value| b["upper"]["value"].as_f64().unwrap() - b["lower"]["value"].as_f64().unwrap();
    assert!(width(&sens[0]["bounds"]).abs() < 1e-12);
    assert!(width(&sens[1]["bounds"]) > 0.0);
}

#[test]
fn bounds_lee_accepts_blank_outcomes() {
    let dir = TempDir::new().unwrap();
    let input = write_lee(dir.path(), 3000);
    assert!(fs::read_to_string(&input).unwrap().contains(",,"));
    let o = tce(&[
        "bounds-lee",
        "--input",
        &input,
        "--grid",
        "0.3,0.5,0.7",
        "--bandwidth",
        "0.3",
        "--format",
        "csv",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().next().unwrap().starts_with("x0,p_hat"));
}

#[test]
fn parse_error_exits_three() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.csv");
    fs::write(&p, "x,y\n0.1,1\n0.2,oops\n").unwrap();
    let o = tce(&["estimate", "--input", p.to_str().unwrap(), "--x0", "0", "--eta", "0.5"]);
    assert_eq!(o.status.code(), Some(3));
    let msg = json(&o)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("row 2") && msg.contains("`y`"), "{msg}");
}

#[test]
fn missing_file_exits_three() {
    let o = tce(&[
        "estimate",
        "--input",
        "/nonexistent/none.csv",
        "--x0",
        "0",
        "--eta",
        "0.5",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_file_then_flags() {
    let dir = TempDir::new().unwrap();
    let input = write_xy(dir.path(), 800);
    let cfg = dir.path().join("tce.toml");
    fs::write(
        &cfg,
        format!("alpha = 0.1\n\n[estimate]\ninput = \"{input}\"\nx0 = 0.0\neta = 0.8\nbandwidth = 0.4\n"),
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let o = tce(&["--config", cfg, "estimate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["config"]["alpha"], 0.1);
    assert_eq!(v["config"]["eta"], 0.8);
    assert_eq!(v["result"]["bandwidth"]["h"], 0.4);
    let o = tce(&["--config", cfg, "estimate", "--eta", "0.6", "--alpha", "0.05"]);
    let v = json(&o);
    assert_eq!(v["config"]["eta"], 0.6);
    assert_eq!(v["config"]["alpha"], 0.05);
}

#[test]
fn out_flag_writes_file() {
    let dir = TempDir::new().unwrap();
    let input = write_xy(dir.path(), 400);
    let out = dir.path().join("r.json");
    let o = tce(&[
        "estimate",
        "--input",
        &input,
        "--x0",
        "0",
        "--eta",
        "0.5",
        "--bandwidth",
        "0.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let v: Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["status"], "ok");
}

#[test]
fn help_exits_zero() {
    assert_eq!(tce(&["--help"]).status.code(), Some(0));
    assert_eq!(tce(&["frobnicate"]).status.code(), Some(2));
}
