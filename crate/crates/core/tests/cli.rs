use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn datalaw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_datalaw")).args(args).output().expect("spawn datalaw")
}

fn ok(args: &[&str]) -> String {
    let out = datalaw(args);
    assert!(
        out.status.success(),
        "datalaw {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const GRID: &str = "1,2,4,8,16,32,64,128,256,512";

fn simulate(dir: &TempDir, name: &str, law: &str, condition: &str, noise: &str) -> PathBuf {
    let file = path(dir, name);
    ok(&[
        "simulate", "--law", law, "--d", GRID, "--noise-frac", noise, "--seed", "3", "--condition", condition,
        "-o", s(&file),
    ]);
    file
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

#[test]
fn simulate_then_fit_recovers_the_law() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "curve.csv", "1.969,0.064,0.296", "no_noise", "0");
    let report = json(&ok(&["fit", s(&data), "--seed", "0"]));
    assert_eq!(report["command"], "fit");
    let law = &report["laws"]["no_noise"];
    assert!((law["alpha"].as_f64().unwrap() / 1.969 - 1.0).abs() < 1e-4);
    assert!((law["c"].as_f64().unwrap() / 0.064 - 1.0).abs() < 1e-4);
    assert!((law["p"].as_f64().unwrap() / 0.296 - 1.0).abs() < 1e-4);
    assert_eq!(report["diagnostics"]["converged"], true);
    assert_eq!(report["points"].as_array().unwrap().len(), 10);
    assert!((report["analysis"]["no_noise"]["asymptote"].as_f64().unwrap() - 1.969 * 0.064f64.powf(0.296)).abs() < 1e-6);
}

#[test]
fn fit_output_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "curve.csv", "1.969,0.057,0.285", "base", "0.02");
    let a = ok(&["fit", s(&data), "--seed", "11"]);
    let b = ok(&["fit", s(&data), "--seed", "11"]);
    assert_eq!(a, b);
    let again = simulate(&dir, "again.csv", "1.969,0.057,0.285", "base", "0.02");
    assert_eq!(fs::read(&data).unwrap(), fs::read(&again).unwrap());
}

fn filtering_data(dir: &TempDir) -> PathBuf {
    let a = simulate(dir, "a.csv", "2.501,0.034,0.278", "no_filter", "0");
    let b = simulate(dir, "b.csv", "2.130,0.064,0.278", "bicleaner", "0");
    let both = path(dir, "filtering.csv");
    let tail: String = fs::read_to_string(&b).unwrap().lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(&both, fs::read_to_string(&a).unwrap() + &tail).unwrap();
    both
}

#[test]
fn fit_shared_reports_one_exponent_for_every_condition() {
    let dir = TempDir::new().unwrap();
    let data = filtering_data(&dir);
    let rep = path(&dir, "shared.json");
    ok(&["fit-shared", s(&data), "--seed", "1", "-o", s(&rep)]);
    let report = json(&fs::read_to_string(&rep).unwrap());
    let laws = report["laws"].as_object().unwrap();
    assert_eq!(laws.len(), 2);
    for law in laws.values() {
        assert!((law["p"].as_f64().unwrap() - 0.278).abs() < 1e-6);
    }

    let spec1 = format!("{}#no_filter", rep.display());
    let spec2 = format!("{}#bicleaner", rep.display());
    let analysis = json(&ok(&["analyze", "--equivalence", &spec1, &spec2]));
    let k = analysis["equivalence_factor"].as_f64().unwrap();
    assert!((k - 1.7817306223371006).abs() < 1e-4, "factor {k}");
}

#[test]
fn analyze_a_law_given_inline() {
    let out = json(&ok(&["analyze", "--law", "1.969,0.057,0.285", "--at", "1"]));
    let a = &out["analysis"];
    assert!((a["asymptote"].as_f64().unwrap() - 0.8703021371692619).abs() < 1e-12);
    assert!((a["transition"].as_f64().unwrap() - 17.54385964912281).abs() < 1e-9);
    assert!((a["marginal_value"][0]["value"].as_f64().unwrap() - 0.5393577956482192).abs() < 1e-12);
}

#[test]
fn mc_reports_a_plausible_exponent_spread() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "curve.csv", "1.969,0.057,0.285", "base", "0");
    let args = ["mc", s(&data), "--seed", "7", "--n-reps", "200"];
    let text = ok(&args);
    assert_eq!(text, ok(&args));
    let summary = &json(&text)["summary"];
    let std_p = summary["std_p"].as_f64().unwrap();
    assert!((0.01..=0.04).contains(&std_p), "std_p {std_p}");
    assert_eq!(summary["n_reps"], 200);
}

#[test]
fn raw_counts_are_converted_to_millions() {
    let dir = TempDir::new().unwrap();
    let millions = simulate(&dir, "m.csv", "1.969,0.057,0.285", "base", "0");
    let text = fs::read_to_string(&millions).unwrap();
    let mut raw = String::from("condition,d,loss\n");
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let count = (f[1].parse::<f64>().unwrap() * 1e6).round() as u64;
        raw.push_str(&format!("{},{},{}\n", f[0], count, f[2]));
    }
    let counts = path(&dir, "counts.csv");
    fs::write(&counts, raw).unwrap();

    let a = json(&ok(&["fit", s(&millions), "--seed", "0"]));
    let b = json(&ok(&["fit", s(&counts), "--seed", "0", "--raw-counts"]));
    assert_eq!(a["laws"], b["laws"]);

    // Raw counts without the flag must not be silently read as millions.
    let out = datalaw(&["fit", s(&counts), "--seed", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let bad = path(&dir, "bad.csv");
    fs::write(&bad, "condition,d_millions,loss\na,1,2.0\na,2,-1.0\na,4,1.5\na,8,1.4\n").unwrap();
    let out = datalaw(&["fit", s(&bad), "--seed", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let few = path(&dir, "few.csv");
    fs::write(&few, "condition,d_millions,loss\na,1,2.0\na,2,1.8\na,4,1.6\n").unwrap();
    assert_eq!(datalaw(&["fit", s(&few), "--seed", "0"]).status.code(), Some(2));

    assert_eq!(datalaw(&["fit", "--seed", "0"]).status.code(), Some(2));
    assert_eq!(datalaw(&["analyze", "--law", "1,0.1,2.5"]).status.code(), Some(2));
}

#[test]
fn non_convergence_still_writes_the_report_and_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "noisy.csv", "1.969,0.057,0.285", "base", "0.05");
    let rep = path(&dir, "rep.json");
    let out = datalaw(&["fit", s(&data), "--seed", "0", "--max-iters", "1", "--restarts", "0", "-o", s(&rep)]);
    assert_eq!(out.status.code(), Some(3));
    let report = json(&fs::read_to_string(&rep).unwrap());
    assert_eq!(report["diagnostics"]["converged"], false);
}

#[test]
fn report_renders_a_residual_table() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "curve.csv", "1.969,0.057,0.285", "base", "0.01");
    let rep = path(&dir, "rep.json");
    ok(&["fit", s(&data), "--seed", "0", "-o", s(&rep)]);
    let table = ok(&["report", s(&rep)]);
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("condition,d,observed,predicted,residual"));
    assert_eq!(lines.count(), 10);
}

#[test]
fn fit_linear_reads_named_columns() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "bleu.csv");
    fs::write(&data, "loss,bleu\n1.0,40\n1.5,30\n2.0,20\n").unwrap();
    let out = json(&ok(&["fit-linear", s(&data), "--x", "loss", "--y", "bleu"]));
    assert!((out["slope"].as_f64().unwrap() + 20.0).abs() < 1e-12);
    assert!((out["intercept"].as_f64().unwrap() - 60.0).abs() < 1e-12);
}

fn corpus_file(dir: &TempDir, n: usize) -> PathBuf {
    let file = path(dir, "corpus.tsv");
    let text: String = (0..n)
        .map(|i| format!("source sentence number {i}\tZielsatz Nummer {i}\t{}\n", (i * 37 % 101) as f64 / 100.0))
        .collect();
    fs::write(&file, text).unwrap();
    file
}

#[test]
fn corpus_commands_round_trip_tab_files() {
    let dir = TempDir::new().unwrap();
    let input = corpus_file(&dir, 1000);
    let original = fs::read_to_string(&input).unwrap();

    let shuffled = ok(&["corpus", "corrupt", "-i", s(&input), "--kind", "pair-shuffle", "--seed", "5"]);
    assert_eq!(shuffled, ok(&["corpus", "corrupt", "-i", s(&input), "--kind", "pair-shuffle", "--seed", "5"]));
    let targets = |t: &str| {
        let mut v: Vec<String> = t.lines().map(|l| l.split('\t').nth(1).unwrap().to_string()).collect();
        v.sort();
        v
    };
    assert_eq!(targets(&shuffled), targets(&original));
    assert_ne!(shuffled, original);

    let out = path(&dir, "deleted.tsv");
    ok(&["corpus", "corrupt", "-i", s(&input), "-o", s(&out), "--kind", "word-delete", "--side", "source", "--seed", "1"]);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 1000);

    let top = ok(&["corpus", "filter", "-i", s(&input), "--fraction", "0.25"]);
    assert_eq!(top.lines().count(), 250);
    let kept = ok(&["corpus", "filter", "-i", s(&input), "--threshold", "0.5"]);
    assert!(kept.lines().all(|l| l.rsplit('\t').next().unwrap().parse::<f64>().unwrap() >= 0.5));

    let sample = ok(&["corpus", "sample", "-i", s(&input), "--size", "100", "--seed", "9"]);
    let lines: Vec<&str> = sample.lines().collect();
    assert_eq!(lines.len(), 100);
    let positions: Vec<usize> = lines.iter().map(|l| original.lines().position(|o| o == *l).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn corpus_reads_stdin_when_no_input_is_given() {
    use std::io::Write;
    use std::process::Stdio;
    let mut child = Command::new(env!("CARGO_BIN_EXE_datalaw"))
        .args(["corpus", "sample", "--size", "2", "--seed", "0"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"a\tb\nc\td\ne\tf\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);
}
