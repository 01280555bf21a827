//! Diagnostic battery: descriptive statistics, Jarque-Bera normality,
//! augmented Dickey-Fuller stationarity and the ARCH-LM heteroskedasticity test.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

/// 5% cut-off for the Jarque-Bera statistic (chi-square, 2 d.o.f.).
pub const JB_CRITICAL_5PCT: f64 = 5.99;
/// 5% critical value for the constant-only ADF regression.
pub const ADF_CRITICAL_5PCT: f64 = -2.86;
pub const ARCH_LM_DEFAULT_LAGS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptiveStats {
    pub mean: f64,
    pub maximum: f64,
    pub minimum: f64,
    /// Sample standard deviation (divisor n - 1).
    pub std_dev: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatTestResult {
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub critical_value: Option<f64>,
    pub reject_at_5pct: bool,
}

pub fn descriptive(series: &[f64]) -> Result<DescriptiveStats> {
    let n = series.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "descriptive statistics need at least 2 values, got {n}"
        )));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let ss: f64 = series.iter().map(|x| (x - mean).powi(2)).sum();
    let (minimum, maximum) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    Ok(DescriptiveStats {
        mean,
        maximum,
        minimum,
        std_dev: (ss / (n - 1) as f64).sqrt(),
        n,
    })
}

/// Central moments m2, m3, m4 (divisor n).
fn central_moments(series: &[f64]) -> (f64, f64, f64, f64) {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in series {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (mean, m2 / n, m3 / n, m4 / n)
}

fn is_degenerate(series: &[f64], variance: f64) -> bool {
    let scale = series.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    variance <= (64.0 * f64::EPSILON * scale).powi(2)
}

/// Jarque-Bera statistic from sample size, skewness and kurtosis.
pub fn jarque_bera_statistic(n: usize, skewness: f64, kurtosis: f64) -> f64 {
    n as f64 / 6.0 * (skewness * skewness + (kurtosis - 3.0).powi(2) / 4.0)
}

pub fn jarque_bera(series: &[f64]) -> Result<StatTestResult> {
    if series.len() < 8 {
        return Err(Error::InsufficientData(format!(
            "Jarque-Bera needs at least 8 values, got {}",
            series.len()
        )));
    }
    let (_, m2, m3, m4) = central_moments(series);
    if is_degenerate(series, m2) {
        return Err(Error::Degenerate(
            "Jarque-Bera on a zero-variance series".into(),
        ));
    }
    let statistic = jarque_bera_statistic(series.len(), m3 / m2.powf(1.5), m4 / (m2 * m2));
    Ok(StatTestResult {
        statistic,
        p_value: None,
        critical_value: Some(JB_CRITICAL_5PCT),
        reject_at_5pct: statistic > JB_CRITICAL_5PCT,
    })
}

pub(crate) struct OlsFit {
    pub beta: DVector<f64>,
    pub rss: f64,
    pub xtx_inv: DMatrix<f64>,
    pub nobs: usize,
}

pub(crate) fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<OlsFit> {
    let xtx = x.transpose() * x;
    let chol = xtx.cholesky()?;
    let beta = chol.solve(&(x.transpose() * y));
    let resid = y - x * &beta;
    Some(OlsFit {
        rss: resid.norm_squared(),
        xtx_inv: chol.inverse(),
        beta,
        nobs: x.nrows(),
    })
}

/// Default ADF lag cap, floor(12 * (n/100)^(1/4)).
pub fn default_adf_max_lag(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

/// Design matrix `[1, y_{t}, dy_{t-1}, .., dy_{t-lags}]` and response `dy_t`
/// for rows `first..dy.len()`.
fn adf_design(
    series: &[f64],
    dy: &[f64],
    lags: usize,
    first: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let rows = dy.len() - first;
    let cols = 2 + lags;
    let x = DMatrix::from_fn(rows, cols, |r, c| {
        let t = first + r;
        match c {
            0 => 1.0,
            1 => series[t],
            _ => dy[t - (c - 1)],
        }
    });
    let y = DVector::from_iterator(rows, dy[first..].iter().copied());
    (x, y)
}

/// Augmented Dickey-Fuller test with a constant and no trend. The lag order
/// is chosen by AIC over `0..=max_lag` on a common sample, then the chosen
/// regression is re-estimated on all available rows.
pub fn adf_test(series: &[f64], max_lag: usize) -> Result<StatTestResult> {
    let n = series.len();
    // Smallest regression at max_lag must keep some residual degrees of freedom.
    if n <= 2 * max_lag + 4 {
        return Err(Error::InsufficientData(format!(
            "ADF with max_lag {max_lag} needs more than {} values, got {n}",
            2 * max_lag + 4
        )));
    }
    let dy: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let (_, m2, _, _) = central_moments(&dy);
    if is_degenerate(&dy, m2) {
        return Err(Error::Degenerate(
            "ADF on a series with constant increments".into(),
        ));
    }

    let mut best = (f64::INFINITY, 0usize);
    for lags in 0..=max_lag {
        let (x, y) = adf_design(series, &dy, lags, max_lag);
        let Some(fit) = ols(&x, &y) else { continue };
        let nobs = fit.nobs as f64;
        let aic = nobs * (fit.rss / nobs).ln() + 2.0 * x.ncols() as f64;
        if aic < best.0 {
            best = (aic, lags);
        }
    }
    let lags = best.1;
    let (x, y) = adf_design(series, &dy, lags, lags);
    let fit = ols(&x, &y).ok_or_else(|| Error::Degenerate("ADF regression is singular".into()))?;
    let dof = (fit.nobs - x.ncols()) as f64;
    let se = (fit.rss / dof * fit.xtx_inv[(1, 1)]).sqrt();
    let statistic = fit.beta[1] / se;
    Ok(StatTestResult {
        statistic,
        p_value: None,
        critical_value: Some(ADF_CRITICAL_5PCT),
        reject_at_5pct: statistic < ADF_CRITICAL_5PCT,
    })
}

/// Upper-tail chi-square probability.
pub fn chi_square_sf(statistic: f64, dof: usize) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    gamma_ur(dof as f64 / 2.0, statistic / 2.0)
}

/// Engle's ARCH-LM test on the demeaned series: n·R² from regressing squared
/// residuals on `lags` of their own lags, referred to chi-square(`lags`).
pub fn arch_lm(series: &[f64], lags: usize) -> Result<StatTestResult> {
    let n = series.len();
    if lags == 0 || n <= 2 * lags {
        return Err(Error::InsufficientData(format!(
            "ARCH-LM with {lags} lags needs more than {} values, got {n}",
            2 * lags
        )));
    }
    let (mean, m2, _, _) = central_moments(series);
    if is_degenerate(series, m2) {
        return Err(Error::Degenerate(
            "ARCH-LM on a zero-variance series".into(),
        ));
    }
    let sq: Vec<f64> = series.iter().map(|x| (x - mean).powi(2)).collect();
    let rows = n - lags;
    let x = DMatrix::from_fn(
        rows,
        lags + 1,
        |r, c| if c == 0 { 1.0 } else { sq[lags + r - c] },
    );
    let y = DVector::from_iterator(rows, sq[lags..].iter().copied());
    let fit = ols(&x, &y)
        .ok_or_else(|| Error::Degenerate("ARCH-LM auxiliary regression is singular".into()))?;
    let y_mean = y.mean();
    let tss: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    if tss <= 0.0 {
        return Err(Error::Degenerate("squared residuals are constant".into()));
    }
    let r2 = (1.0 - fit.rss / tss).max(0.0);
    let statistic = rows as f64 * r2;
    let p = chi_square_sf(statistic, lags);
    Ok(StatTestResult {
        statistic,
        p_value: Some(p),
        critical_value: None,
        reject_at_5pct: p < 0.05,
    })
}
