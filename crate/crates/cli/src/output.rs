use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rforecast_core::backtest::EvaluationReport;
use rforecast_core::distributions::student_t_two_sided_p;

use crate::CliError;

/// Writes `contents` to a sibling temporary file and renames it into place,
/// so readers never see a partial file and failures leave nothing behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(io)?;
    let name = path.file_name().ok_or_else(|| {
        io(std::io::Error::new(std::io::ErrorKind::InvalidInput, "not a file path"))
    })?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io)
}

fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// Regression table: outcome regressed on the prediction, standard errors
/// in parentheses under each coefficient.
pub fn regression_table(title: &str, predictor: &str, r: &EvaluationReport) -> String {
    let mut s = String::new();
    let rule = "-".repeat(44);
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "{rule}");
    let _ = writeln!(s, "{:<24}{:>20}", "", "Actual growth");
    let _ = writeln!(s, "{rule}");
    let slope = format!("{:.3}{}", r.slope(), stars(r.slope_p));
    let _ = writeln!(s, "{predictor:<24}{slope:>20}");
    let _ = writeln!(s, "{:<24}{:>20}", "", format!("({:.3})", r.slope_se()));
    let icpt = format!("{:.3}{}", r.intercept(), stars(intercept_p(r)));
    let _ = writeln!(s, "{:<24}{icpt:>20}", "Constant");
    let _ = writeln!(s, "{:<24}{:>20}", "", format!("({:.3})", r.intercept_se()));
    let _ = writeln!(s, "{rule}");
    let df = r.fit.df_resid();
    let _ = writeln!(s, "{:<24}{:>20}", "Observations", r.n);
    let _ = writeln!(s, "{:<24}{:>20.3}", "R2", r.fit.r2);
    let _ = writeln!(s, "{:<24}{:>20.3}", "Adjusted R2", r.fit.adj_r2);
    let _ = writeln!(
        s,
        "{:<24}{:>20}",
        "Residual Std. Error",
        format!("{:.3} (df = {df})", r.fit.residual_se)
    );
    let _ = writeln!(s, "{rule}");
    let _ = writeln!(s, "Note: *p<0.1; **p<0.05; ***p<0.01");
    s
}

/// Two-sided p-value of the intercept against zero.
fn intercept_p(r: &EvaluationReport) -> f64 {
    student_t_two_sided_p(r.intercept() / r.intercept_se(), r.fit.df_resid() as f64)
}

/// Unbiasedness tests and recession flags, printed under the table.
pub fn bias_and_flags(r: &EvaluationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Unbiasedness (H0: slope = 1, intercept = 0; df = {})", r.bias.df);
    let _ = writeln!(s, "  slope      t = {:>7.3}  p = {:.4}", r.bias.t_slope, r.bias.p_slope);
    let _ = writeln!(s, "  intercept  t = {:>7.3}  p = {:.4}", r.bias.t_intercept, r.bias.p_intercept);
    let _ = writeln!(s, "Slope significance (H0: slope = 0): p = {:.4}", r.slope_p);
    if r.recession_flags.is_empty() {
        let _ = writeln!(s, "Predicted negative growth: none");
    } else {
        let _ = writeln!(s, "Predicted negative growth:");
        for f in &r.recession_flags {
            let _ = writeln!(s, "  {}  predicted {:>7.2}  actual {:>7.2}", f.quarter, f.predicted, f.actual);
        }
    }
    s
}

/// Machine-readable `key=value` copy of an evaluation.
pub fn key_values(r: &EvaluationReport) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("n", r.n.to_string());
    kv("slope", format!("{:.6}", r.slope()));
    kv("slope_se", format!("{:.6}", r.slope_se()));
    kv("intercept", format!("{:.6}", r.intercept()));
    kv("intercept_se", format!("{:.6}", r.intercept_se()));
    kv("r2", format!("{:.6}", r.fit.r2));
    kv("adj_r2", format!("{:.6}", r.fit.adj_r2));
    kv("residual_se", format!("{:.6}", r.fit.residual_se));
    kv("slope_p", format!("{:.6}", r.slope_p));
    kv("bias_df", r.bias.df.to_string());
    kv("bias_t_slope", format!("{:.6}", r.bias.t_slope));
    kv("bias_p_slope", format!("{:.6}", r.bias.p_slope));
    kv("bias_t_intercept", format!("{:.6}", r.bias.t_intercept));
    kv("bias_p_intercept", format!("{:.6}", r.bias.p_intercept));
    let flags: Vec<String> = r.recession_flags.iter().map(|f| f.quarter.to_string()).collect();
    kv("recession_flags", flags.join(","));
    s
}
