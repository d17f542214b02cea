//! Ordinary least squares with an intercept, classical standard errors and
//! the unbiasedness tests used to evaluate forecasts (slope = 1, intercept = 0).
//!
//! The fit uses a Householder QR factorization of `[1 | X]`; the normal
//! equations are never formed.

use thiserror::Error;

use crate::distributions::student_t_two_sided_p;
use crate::matrix::Matrix;

/// Relative size below which a diagonal entry of R counts as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OlsError {
    #[error("need at least {needed} observations for {p} regressors, got {n}")]
    SampleSize { n: usize, p: usize, needed: usize },
    #[error("design matrix is rank deficient (column {column} is collinear with earlier columns, intercept is column 0)")]
    Singular { column: usize },
    #[error("dependent variable is constant")]
    ConstantResponse,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("adjusted R² needs n > p + 1 (n = {n}, p = {p})")]
    DegreesOfFreedom { n: usize, p: usize },
    #[error("bias test needs a single-regressor fit, got p = {0}")]
    UnsupportedShape(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Intercept first, then one per coefficient.
    pub std_errors: Vec<f64>,
    pub r2: f64,
    pub adj_r2: f64,
    pub residual_se: f64,
    pub n: usize,
    pub p: usize,
    pub residuals: Vec<f64>,
}

impl OlsFit {
    /// `intercept + coefficients · x`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }

    pub fn df_resid(&self) -> usize {
        self.n - self.p - 1
    }

    /// t statistics for H0: beta = 0, intercept first.
    pub fn t_stats(&self) -> Vec<f64> {
        std::iter::once(self.intercept)
            .chain(self.coefficients.iter().copied())
            .zip(&self.std_errors)
            .map(|(b, se)| b / se)
            .collect()
    }
}

pub fn adjusted_r2(r2: f64, n: usize, p: usize) -> Result<f64, OlsError> {
    if n <= p + 1 {
        return Err(OlsError::DegreesOfFreedom { n, p });
    }
    Ok(1.0 - (1.0 - r2) * (n - 1) as f64 / (n - p - 1) as f64)
}

pub fn fit_ols(x: &Matrix, y: &[f64]) -> Result<OlsFit, OlsError> {
    let n = y.len();
    let p = x.cols();
    if x.rows() != n {
        return Err(OlsError::Dimension(format!(
            "{} design rows vs {n} observations",
            x.rows()
        )));
    }
    if n < p + 2 {
        return Err(OlsError::SampleSize {
            n,
            p,
            needed: p + 2,
        });
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(OlsError::NonFinite("regressors"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(OlsError::NonFinite("dependent variable"));
    }
    let k = p + 1;

    // Column-major copy of [1 | X] for the factorization.
    let mut a: Vec<Vec<f64>> = Vec::with_capacity(k);
    a.push(vec![1.0; n]);
    for c in 0..p {
        a.push(x.column(c));
    }
    let col_norms: Vec<f64> = a.iter().map(|c| norm(c)).collect();
    let mut qty = y.to_vec();
    let mut r = vec![vec![0.0; k]; k];

    for j in 0..k {
        let alpha = {
            let s = norm(&a[j][j..]);
            if a[j][j] > 0.0 {
                -s
            } else {
                s
            }
        };
        if alpha.abs() <= RANK_TOL * col_norms[j].max(f64::MIN_POSITIVE) {
            return Err(OlsError::Singular { column: j });
        }
        let mut v: Vec<f64> = a[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        for col in a.iter_mut().skip(j) {
            reflect(&v, vnorm2, &mut col[j..]);
        }
        reflect(&v, vnorm2, &mut qty[j..]);
        for (c, col) in a.iter().enumerate().skip(j) {
            r[j][c] = col[j];
        }
    }

    // Back substitution for R b = Qᵀ y.
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|c| r[i][c] * beta[c]).sum();
        beta[i] = (qty[i] - s) / r[i][i];
    }

    let fitted: Vec<f64> = (0..n)
        .map(|i| beta[0] + (0..p).map(|c| beta[c + 1] * x.get(i, c)).sum::<f64>())
        .collect();
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let sse: f64 = residuals.iter().map(|e| e * e).sum();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    if sst == 0.0 {
        return Err(OlsError::ConstantResponse);
    }
    let r2 = 1.0 - sse / sst;
    let df = (n - k) as f64;
    let sigma2 = sse / df;

    // diag((RᵀR)⁻¹) = row norms² of R⁻¹.
    let rinv = upper_triangular_inverse(&r);
    let std_errors = rinv
        .iter()
        .map(|row| (sigma2 * row.iter().map(|v| v * v).sum::<f64>()).sqrt())
        .collect();

    Ok(OlsFit {
        coefficients: beta[1..].to_vec(),
        intercept: beta[0],
        std_errors,
        r2,
        adj_r2: adjusted_r2(r2, n, p)?,
        residual_se: sigma2.sqrt(),
        n,
        p,
        residuals,
    })
}

/// Single-regressor convenience: regress `y` on `x`.
pub fn fit_simple(x: &[f64], y: &[f64]) -> Result<OlsFit, OlsError> {
    fit_ols(&Matrix::column_vector(x), y)
}

fn norm(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * v.iter().map(|t| (t / scale).powi(2)).sum::<f64>().sqrt()
}

fn reflect(v: &[f64], vnorm2: f64, target: &mut [f64]) {
    let dot: f64 = v.iter().zip(target.iter()).map(|(a, b)| a * b).sum();
    let f = 2.0 * dot / vnorm2;
    for (t, vi) in target.iter_mut().zip(v) {
        *t -= f * vi;
    }
}

fn upper_triangular_inverse(r: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = r.len();
    let mut inv = vec![vec![0.0; k]; k];
    for c in 0..k {
        inv[c][c] = 1.0 / r[c][c];
        for i in (0..c).rev() {
            let s: f64 = (i + 1..=c).map(|m| r[i][m] * inv[m][c]).sum();
            inv[i][c] = -s / r[i][i];
        }
    }
    inv
}

/// Unbiasedness tests for a forecast-evaluation regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasTest {
    /// `(slope - 1) / se(slope)`.
    pub t_slope: f64,
    /// `intercept / se(intercept)`.
    pub t_intercept: f64,
    pub p_slope: f64,
    pub p_intercept: f64,
    pub df: usize,
}

impl BiasTest {
    pub fn from_estimates(
        slope: f64,
        se_slope: f64,
        intercept: f64,
        se_intercept: f64,
        n: usize,
    ) -> Self {
        let df = n.saturating_sub(2);
        let t_slope = (slope - 1.0) / se_slope;
        let t_intercept = intercept / se_intercept;
        Self {
            t_slope,
            t_intercept,
            p_slope: student_t_two_sided_p(t_slope, df as f64),
            p_intercept: student_t_two_sided_p(t_intercept, df as f64),
            df,
        }
    }
}

pub fn bias_test(fit: &OlsFit) -> Result<BiasTest, OlsError> {
    if fit.p != 1 {
        return Err(OlsError::UnsupportedShape(fit.p));
    }
    Ok(BiasTest::from_estimates(
        fit.coefficients[0],
        fit.std_errors[1],
        fit.intercept,
        fit.std_errors[0],
        fit.n,
    ))
}

/// Two-sided p-value for H0: slope = 0 on a single-regressor fit.
pub fn slope_p_value(fit: &OlsFit) -> Result<f64, OlsError> {
    if fit.p != 1 {
        return Err(OlsError::UnsupportedShape(fit.p));
    }
    Ok(slope_p_value_from_t(
        fit.coefficients[0] / fit.std_errors[1],
        fit.n,
    ))
}

pub fn slope_p_value_from_t(t: f64, n: usize) -> f64 {
    student_t_two_sided_p(t, n.saturating_sub(2) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let f = fit_simple(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((f.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(f.residual_se < 1e-12);
    }

    #[test]
    fn identity_regression() {
        let x = [0.3, -1.2, 2.5, 4.0, 1.1, -0.7];
        let f = fit_simple(&x, &x).unwrap();
        assert!((f.coefficients[0] - 1.0).abs() < 1e-12);
        assert!(f.intercept.abs() < 1e-12);
        assert!((f.adj_r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adjusted_r2_examples() {
        assert_eq!(adjusted_r2(1.0, 105, 1).unwrap(), 1.0);
        assert!((adjusted_r2(0.0, 105, 1).unwrap() - (1.0 - 104.0 / 103.0)).abs() < 1e-15);
        assert!((adjusted_r2(0.0, 105, 1).unwrap() + 0.0097).abs() < 1e-4);
        assert!((adjusted_r2(0.157, 105, 1).unwrap() - 0.149).abs() < 5e-4);
        assert!(matches!(adjusted_r2(0.5, 3, 2), Err(OlsError::DegreesOfFreedom { .. })));
    }

    #[test]
    fn bias_test_examples() {
        let b = BiasTest::from_estimates(1.0, 0.2, 0.0, 1.0, 105);
        assert_eq!(b.t_slope, 0.0);
        assert_eq!(b.p_slope, 1.0);

        let b = BiasTest::from_estimates(0.548, 0.162, 1.105, 0.466, 105);
        assert!((b.t_slope + 2.79).abs() < 0.01);
        assert!(b.p_slope < 0.05);
        assert!((b.t_intercept - 2.37).abs() < 0.01);
        assert!(b.p_intercept < 0.05);
        assert_eq!(b.df, 103);
    }

    #[test]
    fn slope_p_value_examples() {
        assert!((slope_p_value_from_t(1.91, 105) - 0.059).abs() < 5e-4);
        assert!((slope_p_value_from_t(3.38, 105) - 0.001).abs() < 5e-4);
        assert_eq!(slope_p_value_from_t(0.0, 105), 1.0);
    }

    #[test]
    fn shape_and_rank_errors() {
        assert!(matches!(
            fit_simple(&[1.0, 2.0], &[1.0, 2.0]),
            Err(OlsError::SampleSize { .. })
        ));
        assert!(matches!(
            fit_simple(&[2.0; 5], &[1.0, 2.0, 3.0, 4.0, 6.0]),
            Err(OlsError::Singular { column: 1 })
        ));
        let x = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.1], [5.0, 10.0]]);
        assert!(fit_ols(&x, &[1.0, 2.0, 3.0, 4.0, 5.0]).is_ok());
        let x = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0], [5.0, 10.0]]);
        assert!(matches!(
            fit_ols(&x, &[1.0, 2.0, 3.0, 4.0, 6.0]),
            Err(OlsError::Singular { column: 2 })
        ));
        assert!(matches!(
            fit_simple(&[1.0, 2.0, 3.0, 4.0], &[5.0; 4]),
            Err(OlsError::ConstantResponse)
        ));
        let two = fit_ols(&Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 1.0], [0.5, 3.0]]), &[1.0, 2.0, 2.5, 4.0, 3.0]).unwrap();
        assert!(matches!(bias_test(&two), Err(OlsError::UnsupportedShape(2))));
        assert!(matches!(slope_p_value(&two), Err(OlsError::UnsupportedShape(2))));
    }
}
