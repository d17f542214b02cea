use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rforecast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rforecast"))
        .args(args)
        .env("RFORECAST_THREADS", "2")
        .output()
        .expect("spawn rforecast")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn quarters(from_year: i32, to_year: i32) -> impl Iterator<Item = (i32, u8)> {
    (from_year..=to_year).flat_map(|y| (1..=4u8).map(move |q| (y, q)))
}

fn series_csv(f: impl Fn(usize) -> f64) -> String {
    let mut s = String::from("period,value\n");
    for (i, (y, q)) in quarters(1960, 2017).enumerate() {
        writeln!(s, "{y}Q{q},{:.4}", f(i)).unwrap();
    }
    s
}

/// Synthetic quarterly snapshot: growth responds to the lagged spread.
fn write_fixture(dir: &Path) -> PathBuf {
    let spread = |i: usize| ((i as f64) * 0.37).sin() * 2.0 + ((i * 7 % 11) as f64 - 5.0) * 0.1;
    fs::write(dir.join("rate.csv"), series_csv(|i| 5.0 + ((i as f64) * 0.11).cos())).unwrap();
    fs::write(dir.join("spread.csv"), series_csv(spread)).unwrap();
    fs::write(
        dir.join("growth.csv"),
        series_csv(|i| if i < 3 { 2.0 } else if spread(i - 3) < -1.0 { -1.5 } else { 3.0 } + ((i * 13 % 7) as f64 - 3.0) * 0.2),
    )
    .unwrap();
    fs::write(dir.join("survey.csv"), series_csv(|i| 2.5 + ((i * 5 % 9) as f64) * 0.1)).unwrap();
    fs::write(
        dir.join("manifest.toml"),
        r#"country = "US"

[[series]]
id = "rate"
file = "rate.csv"
frequency = "quarterly"

[[series]]
id = "spread"
file = "spread.csv"
frequency = "quarterly"

[[series]]
id = "growth"
file = "growth.csv"
frequency = "quarterly"

[[series]]
id = "survey_h1"
file = "survey.csv"
frequency = "quarterly"
"#,
    )
    .unwrap();
    let runspec = dir.join("run.toml");
    fs::write(
        &runspec,
        r#"manifest = "manifest.toml"

[backtest]
train_start = "1970Q1"
first_predict = "2000Q1"
last_predict = "2010Q4"
model = "rf"
horizon = 3
target = "growth"
features = ["rate", "spread"]

[forest]
n_trees = 40
seed = 7

[spf]
h1 = "survey_h1"
window = "1980Q1:2010Q4"

[output]
predictions = "out/predictions.csv"
"#,
    )
    .unwrap();
    runspec
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn records_csv(rows: &[(&str, f64, f64)]) -> String {
    let mut s = String::from("quarter,predicted,actual,train_window_end\n");
    for (q, p, a) in rows {
        writeln!(s, "{q},{p:.6},{a:.6},1999Q1").unwrap();
    }
    s
}

#[test]
fn help_lists_every_subcommand_and_flag() {
    let o = rforecast(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for cmd in ["backtest", "evaluate", "spf-bench", "plot", "report"] {
        assert!(text.contains(cmd), "{cmd} missing from:\n{text}");
    }
    let o = rforecast(&["report", "--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for flag in ["--runspec", "--seeds", "--model", "--horizon", "--window", "--out"] {
        assert!(text.contains(flag), "{flag} missing from:\n{text}");
    }
    let text = stdout(&rforecast(&["backtest", "--help"]));
    assert!(text.contains("--seed "), "{text}");
}

#[test]
fn backtest_writes_predictions_and_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let runspec = write_fixture(dir.path());
    let o = rforecast(&["backtest", "--runspec", s(&runspec)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("n=44") && out.contains("horizon=3") && out.contains("model=rf"), "{out}");
    assert!(out.contains("elapsed="), "{out}");

    let first = fs::read(dir.path().join("out/predictions.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 45);

    // Different worker count, same bytes.
    let o = Command::new(env!("CARGO_BIN_EXE_rforecast"))
        .args(["backtest", "--runspec", s(&runspec)])
        .env("RFORECAST_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read(dir.path().join("out/predictions.csv")).unwrap(), first);

    let alt = dir.path().join("seed8.csv");
    assert!(rforecast(&["backtest", "--runspec", s(&runspec), "--seed", "8", "--out", s(&alt)]).status.success());
    assert_ne!(fs::read(&alt).unwrap(), first);
}

#[test]
fn model_and_horizon_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let runspec = write_fixture(dir.path());
    let out = dir.path().join("ols.csv");
    let o = rforecast(&[
        "backtest", "--runspec", s(&runspec), "--model", "ols", "--horizon", "6", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("model=ols") && stdout(&o).contains("horizon=6"));

    let o = rforecast(&["backtest", "--runspec", s(&runspec), "--horizon", "4"]);
    assert!(!o.status.success());
    let o = rforecast(&["backtest", "--runspec", s(&runspec), "--model", "svm"]);
    assert!(!o.status.success());
}

#[test]
fn missing_data_file_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let runspec = write_fixture(dir.path());
    fs::remove_file(dir.path().join("spread.csv")).unwrap();
    let o = rforecast(&["backtest", "--runspec", s(&runspec)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("spread"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_runspec_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let runspec = write_fixture(dir.path());
    let text = fs::read_to_string(&runspec).unwrap().replace("n_trees = 40", "n_tres = 40");
    fs::write(&runspec, text).unwrap();
    let o = rforecast(&["backtest", "--runspec", s(&runspec)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("n_tres"), "{}", stderr(&o));
}

#[test]
fn evaluate_perfect_forecast() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("p.csv");
    let rows: Vec<(String, f64)> = quarters(2000, 2004)
        .map(|(y, q)| (format!("{y}Q{q}"), ((y as f64) * 1.3 + q as f64).sin() * 3.0))
        .collect();
    let rows: Vec<(&str, f64, f64)> = rows.iter().map(|(q, v)| (q.as_str(), *v, *v)).collect();
    fs::write(&csv, records_csv(&rows)).unwrap();
    let o = rforecast(&["evaluate", s(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("1.000"), "{text}");
    let kv = fs::read_to_string(dir.path().join("p.csv.eval.txt")).unwrap();
    assert!(kv.contains("slope=1.000000"), "{kv}");
    assert!(kv.contains("adj_r2=1.000000"), "{kv}");
    assert!(kv.contains("n=20"), "{kv}");
}

#[test]
fn evaluate_constant_predictions_is_singular() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("c.csv");
    let rows = [("2000Q1", 2.0, 1.0), ("2000Q2", 2.0, 3.0), ("2000Q3", 2.0, -1.0), ("2000Q4", 2.0, 2.5)];
    fs::write(&csv, records_csv(&rows)).unwrap();
    let o = rforecast(&["evaluate", s(&csv)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("singular"), "{}", stderr(&o));
    assert!(!dir.path().join("c.csv.eval.txt").exists());
}

#[test]
fn evaluate_malformed_csv_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let mut text = records_csv(&[("2000Q1", 1.0, 1.0), ("2000Q2", 2.0, 2.0)]);
    text.push_str("2000Q3,abc,1.0,1999Q1\n");
    fs::write(&csv, text).unwrap();
    let o = rforecast(&["evaluate", s(&csv)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn plot_single_row_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.csv");
    fs::write(&one, records_csv(&[("2009Q1", -1.0, -5.5)])).unwrap();
    let svg = dir.path().join("fig/one.svg");
    let o = rforecast(&["plot", s(&one), "--out", s(&svg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg") || fs::read_to_string(&svg).unwrap().starts_with("<?xml"));
    assert!(dir.path().join("fig/one.csv").exists());

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, records_csv(&[])).unwrap();
    let svg = dir.path().join("empty.svg");
    let o = rforecast(&["plot", s(&empty), "--out", s(&svg)]);
    assert!(!o.status.success());
    assert!(!svg.exists());
    assert!(!dir.path().join("empty.csv.svg").exists());
}

#[test]
fn spf_bench_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let runspec = write_fixture(dir.path());
    let o = rforecast(&["spf-bench", "--runspec", s(&runspec), "--horizon", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("Observations") && text.contains("124"), "{text}");
    assert!(text.contains("Adjusted R2"), "{text}");

    // No h3 series configured.
    let o = rforecast(&["spf-bench", "--runspec", s(&runspec), "--horizon", "3"]);
    assert!(!o.status.success());
}

#[test]
fn report_over_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let runspec = write_fixture(dir.path());
    let out = dir.path().join("report.md");
    let args = ["report", "--runspec", s(&runspec), "--seeds", "1..3", "--window", "2008Q1:2009Q4", "--out", s(&out)];
    let o = rforecast(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("mean") && text.contains("| 3 |"), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("| 2008") || l.starts_with("| 2009")).count(), 8);
    let first = fs::read(&out).unwrap();
    assert!(rforecast(&args).status.success());
    assert_eq!(fs::read(&out).unwrap(), first);

    let o = rforecast(&["report", "--runspec", s(&runspec), "--seeds", "4"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("| Quarter | Actual | Prediction |"));
}

#[test]
fn empty_seed_list_is_an_argument_error() {
    let dir = tempfile::tempdir().unwrap();
    let runspec = write_fixture(dir.path());
    for seeds in ["", ","] {
        let o = rforecast(&["report", "--runspec", s(&runspec), "--seeds", seeds]);
        assert!(!o.status.success());
        assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
    }
}

#[test]
fn shipped_runspecs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/runspecs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let out = tempfile::tempdir().unwrap();
        let o = rforecast(&["backtest", "--runspec", s(&path), "--out", s(&out.path().join("p.csv"))]);
        let err = stderr(&o);
        // Either the snapshot is present and the run succeeds, or the only
        // complaint is a missing data file.
        assert!(o.status.success() || err.contains("does not exist"), "{}: {err}", path.display());
        n += 1;
    }
    assert_eq!(n, 5);
}
