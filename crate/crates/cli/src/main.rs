//! `rforecast`: expanding-window GDP growth backtests with random forests.
//!
//! Worker threads come from `RFORECAST_THREADS` (default: available
//! parallelism). Every tree and every backtest window draws from its own
//! seeded stream, so the thread count never changes any output byte.

mod output;
mod runspec;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rforecast_core::backtest::{
    self, records_from_csv, records_to_csv, run_backtest_with, spf_benchmark, spf_negative_growth_count,
    BacktestError, Dataset, ModelKind, PredictionRecord, RunOptions,
};
use rforecast_core::data::{assemble_dataset, DataError};
use rforecast_core::plot::{self, PlotError};
use rforecast_core::Quarter;
use thiserror::Error;

use output::write_atomic;
use runspec::{parse_window, RunSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("runspec {path}: {msg}")]
    RunSpec { path: PathBuf, msg: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("writing {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

#[derive(Parser)]
#[command(name = "rforecast", version, about = "Random-forest GDP growth backtests and forecast evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an expanding-window backtest and write the predictions CSV.
    Backtest {
        #[command(flatten)]
        run: RunArgs,
        /// Master seed; overrides [forest] seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Predictions CSV; overrides [output] predictions.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regress outcomes on predictions and print the evaluation table.
    Evaluate {
        /// Predictions CSV written by `backtest`.
        predictions: PathBuf,
        /// key=value copy of the evaluation [default: <predictions>.eval.txt].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the survey mean forecast against outturns.
    SpfBench {
        /// Runspec with an [spf] table naming the survey series.
        #[arg(long)]
        runspec: PathBuf,
        /// Survey horizon.
        #[arg(long, default_value_t = 1, value_parser = parse_spf_horizon)]
        horizon: u32,
        /// Evaluation window; overrides [spf] window.
        #[arg(long, value_parser = parse_window)]
        window: Option<(Quarter, Quarter)>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw actual vs predicted growth as SVG, plus the plotted points as CSV.
    Plot {
        /// Predictions CSV written by `backtest`.
        predictions: PathBuf,
        /// SVG path; the tidy CSV goes next to it with a .csv extension.
        #[arg(long)]
        out: PathBuf,
        /// Figure title [default: the predictions file name].
        #[arg(long)]
        title: Option<String>,
    },
    /// Run one backtest per seed and print a markdown seed-spread report.
    Report {
        #[command(flatten)]
        run: RunArgs,
        /// Seeds as `1..10` (inclusive) or `1,2,3`; overrides [report] seeds.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Option<Seeds>,
        /// Quarter range listed in the excerpt table [default: 2008Q1:2009Q4].
        #[arg(long, value_parser = parse_window)]
        window: Option<(Quarter, Quarter)>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Runspec TOML binding the data manifest, backtest and outputs.
    #[arg(long)]
    runspec: PathBuf,
    /// Model override.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Forecast horizon override; lags follow the country preset.
    #[arg(long, value_parser = parse_horizon)]
    horizon: Option<u32>,
    /// Forest cache directory; overrides [output] cache_dir.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

fn parse_one_of(s: &str, allowed: &[u32]) -> Result<u32, String> {
    s.parse::<u32>()
        .ok()
        .filter(|h| allowed.contains(h))
        .ok_or_else(|| format!("`{s}` is not one of {allowed:?}"))
}

fn parse_horizon(s: &str) -> Result<u32, String> {
    parse_one_of(s, &[1, 3, 6])
}

fn parse_spf_horizon(s: &str) -> Result<u32, String> {
    parse_one_of(s, &[1, 3])
}

#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let s = s.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("`{t}`: {e}"));
        let (a, b) = (num(a)?, num(b.trim_start_matches('=')).map_err(|e| e.to_string())?);
        (a..=b).collect()
    } else {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse::<u64>().map_err(|e| format!("`{t}`: {e}")))
            .collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err("seed list is empty".into());
    }
    Ok(Seeds(seeds))
}

struct Loaded {
    spec: RunSpec,
    dataset: Dataset,
    options: RunOptions,
}

fn load_run(run: &RunArgs) -> Result<Loaded, CliError> {
    let mut spec = RunSpec::load(&run.runspec)?;
    if let Some(m) = run.model {
        spec.backtest.model = m;
    }
    if let Some(h) = run.horizon {
        spec.set_horizon(h)?;
    }
    let dataset = assemble_dataset(&spec.manifest)?;
    let options = RunOptions {
        cache_dir: run.cache_dir.clone().or_else(|| spec.cache_dir.clone()),
    };
    Ok(Loaded { spec, dataset, options })
}

fn read_records(path: &Path) -> Result<Vec<PredictionRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(records_from_csv(&text)?)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_backtest(run: RunArgs, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut l = load_run(&run)?;
    if let Some(s) = seed {
        l.spec.backtest.forest.seed = s;
    }
    let out = out
        .or_else(|| l.spec.predictions.clone())
        .ok_or_else(|| CliError::Usage("no output path: pass --out or set [output] predictions".into()))?;
    let cfg = &l.spec.backtest;
    let started = Instant::now();
    let (records, audit) = run_backtest_with(cfg, &l.dataset, &l.options)?;
    let elapsed = started.elapsed();
    // Build every artifact first so a failure leaves no partial set.
    let mut files = vec![(out.clone(), records_to_csv(&records).into_bytes())];
    if let Some(path) = &l.spec.evaluation {
        let report = backtest::evaluate(&records)?;
        files.push((path.clone(), output::key_values(&report).into_bytes()));
    }
    if let Some(path) = &l.spec.figure {
        let title = format!("{} h={} predictions", cfg.model.label(), cfg.horizon.horizon());
        files.push((path.clone(), plot::render_svg(&records, &title)?.into_bytes()));
        files.push((path.with_extension("csv"), plot::tidy_csv(&records).into_bytes()));
    }
    for (path, bytes) in &files {
        write_atomic(path, bytes)?;
    }
    if !audit.violations.is_empty() {
        eprintln!("warning: {} feature reads looked past the information set", audit.violations.len());
    }
    println!("n={}", records.len());
    println!("horizon={}", cfg.horizon.horizon());
    println!("model={}", cfg.model.label());
    if cfg.model == ModelKind::RandomForest {
        println!("seed={}", cfg.forest.seed);
    }
    println!("elapsed={:.3}s", elapsed.as_secs_f64());
    println!("predictions={}", out.display());
    Ok(())
}

fn cmd_evaluate(predictions: PathBuf, out: Option<PathBuf>) -> Result<(), CliError> {
    let records = read_records(&predictions)?;
    let report = backtest::evaluate(&records)?;
    let title = format!("Evaluation of {}", predictions.display());
    let mut text = output::regression_table(&title, "Prediction", &report);
    text.push('\n');
    text.push_str(&output::bias_and_flags(&report));
    let out = out.unwrap_or_else(|| with_suffix(&predictions, ".eval.txt"));
    write_atomic(&out, output::key_values(&report).as_bytes())?;
    print!("{text}");
    Ok(())
}

fn cmd_spf_bench(
    runspec: PathBuf,
    horizon: u32,
    window: Option<(Quarter, Quarter)>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let spec = RunSpec::load(&runspec)?;
    let bad = |msg: String| CliError::RunSpec {
        path: runspec.clone(),
        msg,
    };
    let spf = spec.spf.clone().ok_or_else(|| bad("no [spf] table".into()))?;
    let id = match horizon {
        1 => spf.h1,
        _ => spf.h3,
    }
    .ok_or_else(|| bad(format!("[spf] names no h{horizon} series")))?;
    let (first, last) = match window {
        Some(w) => w,
        None => match spf.window.as_deref() {
            Some(w) => parse_window(w).map_err(bad)?,
            None => (spec.backtest.first_predict, spec.backtest.last_predict),
        },
    };
    let dataset = assemble_dataset(&spec.manifest)?;
    let get = |id: &str| {
        dataset
            .get(id)
            .ok_or_else(|| CliError::Backtest(BacktestError::MissingSeries(id.to_string())))
    };
    let survey = get(&id)?;
    let actual = get(&spec.backtest.target)?;
    let report = spf_benchmark(survey, actual, first, last)?;

    let title = format!("Survey mean forecast, h={horizon}, {first}-{last}");
    let mut text = output::regression_table(&title, "Survey prediction", &report);
    if horizon == 3 {
        let neg = spf_negative_growth_count(survey, first, last)?;
        let _ = writeln!(text, "Quarters with a negative survey forecast: {neg}");
    }
    if let Some(out) = out {
        write_atomic(&out, text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_plot(predictions: PathBuf, out: PathBuf, title: Option<String>) -> Result<(), CliError> {
    let records = read_records(&predictions)?;
    let title = title.unwrap_or_else(|| {
        predictions
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    // Render both before writing either, so an error leaves no files.
    let svg = plot::render_svg(&records, &title)?;
    let tidy = plot::tidy_csv(&records);
    let csv_path = out.with_extension("csv");
    if csv_path == out {
        return Err(CliError::Usage(format!("{}: figure path must not end in .csv", out.display())));
    }
    write_atomic(&out, svg.as_bytes())?;
    write_atomic(&csv_path, tidy.as_bytes())?;
    println!("figure={}", out.display());
    println!("points={}", csv_path.display());
    Ok(())
}

fn cmd_report(
    run: RunArgs,
    seeds: Option<Seeds>,
    window: Option<(Quarter, Quarter)>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let l = load_run(&run)?;
    let seeds = seeds
        .map(|s| s.0)
        .or_else(|| l.spec.seeds.clone())
        .unwrap_or_else(|| vec![l.spec.backtest.forest.seed]);
    let (ex_first, ex_last) = window
        .or(l.spec.excerpt)
        .unwrap_or_else(|| parse_window("2008Q1:2009Q4").expect("valid default"));

    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let mut cfg = l.spec.backtest.clone();
        cfg.forest.seed = seed;
        let started = Instant::now();
        let (records, _) = run_backtest_with(&cfg, &l.dataset, &l.options)?;
        let eval = backtest::evaluate(&records)?;
        eprintln!("seed {seed}: {} windows in {:.1}s", records.len(), started.elapsed().as_secs_f64());
        runs.push((seed, records, eval));
    }

    let cfg = &l.spec.backtest;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# Backtest report: {}, h={}, {}-{}\n",
        cfg.model.label(),
        cfg.horizon.horizon(),
        cfg.first_predict,
        cfg.last_predict
    );
    let _ = writeln!(s, "| Seed | n | Slope | Slope p | Adjusted R2 | Residual SE |");
    let _ = writeln!(s, "|---:|---:|---:|---:|---:|---:|");
    for (seed, _, e) in &runs {
        let _ = writeln!(
            s,
            "| {seed} | {} | {:.3} | {:.4} | {:.3} | {:.3} |",
            e.n,
            e.slope(),
            e.slope_p,
            e.fit.adj_r2,
            e.fit.residual_se
        );
    }
    let adj: Vec<f64> = runs.iter().map(|(_, _, e)| e.fit.adj_r2).collect();
    let mean = adj.iter().sum::<f64>() / adj.len() as f64;
    let min = adj.iter().copied().fold(f64::INFINITY, f64::min);
    let max = adj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let _ = writeln!(
        s,
        "\nAdjusted R2 across {} seed(s): mean {mean:.3}, min {min:.3}, max {max:.3}\n",
        runs.len()
    );

    // Excerpt: actual once, prediction averaged over seeds.
    let mut rows: BTreeMap<Quarter, (f64, Vec<f64>)> = BTreeMap::new();
    for (_, records, _) in &runs {
        for r in records.iter().filter(|r| r.quarter >= ex_first && r.quarter <= ex_last) {
            rows.entry(r.quarter).or_insert((r.actual, Vec::new())).1.push(r.predicted);
        }
    }
    let _ = writeln!(s, "## {ex_first}-{ex_last}\n");
    if runs.len() == 1 {
        let _ = writeln!(s, "| Quarter | Actual | Prediction |");
        let _ = writeln!(s, "|---|---:|---:|");
        for (q, (actual, preds)) in &rows {
            let _ = writeln!(s, "| {q} | {actual:.2} | {:.2} |", preds[0]);
        }
    } else {
        let _ = writeln!(s, "| Quarter | Actual | Prediction (mean) | Min | Max |");
        let _ = writeln!(s, "|---|---:|---:|---:|---:|");
        for (q, (actual, preds)) in &rows {
            let m = preds.iter().sum::<f64>() / preds.len() as f64;
            let lo = preds.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = preds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(s, "| {q} | {actual:.2} | {m:.2} | {lo:.2} | {hi:.2} |");
        }
    }
    if rows.is_empty() {
        let _ = writeln!(s, "(no predicted quarters in this range)");
    }

    if let Some(out) = out {
        write_atomic(&out, s.as_bytes())?;
    }
    print!("{s}");
    Ok(())
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("RFORECAST_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("RFORECAST_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Backtest { run, seed, out } => cmd_backtest(run, seed, out),
        Command::Evaluate { predictions, out } => cmd_evaluate(predictions, out),
        Command::SpfBench {
            runspec,
            horizon,
            window,
            out,
        } => cmd_spf_bench(runspec, horizon, window, out),
        Command::Plot { predictions, out, title } => cmd_plot(predictions, out, title),
        Command::Report { run, seeds, window, out } => cmd_report(run, seeds, window, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}
