//! GARCH(p, q) with an ARMA(R, M) conditional mean, Gaussian innovations.
//!
//! ```text
//! r_t = c + Σ φ_i r_{t-i} + Σ θ_j ε_{t-j} + ε_t
//! ε_t = u_t √h_t,  u_t ~ N(0, 1)
//! h_t = k + Σ G_i h_{t-i} + Σ A_i ε²_{t-i}
//! ```
//!
//! Estimation is by maximum likelihood with a Nelder-Mead search over an
//! unconstrained reparameterisation: `k = exp(a)` and the ARCH/GARCH weights
//! are the first `p + q` components of a softmax over `(b_1, .., b_{p+q}, 0)`,
//! which keeps every weight positive and their sum below one.
//!
//! Recursions start from the unconditional variance of the candidate
//! parameters: presample `h` and presample `ε²` both equal it, presample `ε`
//! (for MA terms) is zero and presample returns (for AR terms) equal the
//! sample mean.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::log_returns;
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
pub const MIN_FIT_LENGTH: usize = 50;
pub const DEFAULT_ROLLING_WINDOW: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GarchSpec {
    /// Number of ARCH (squared residual) terms, `p`.
    pub arch_order: usize,
    /// Number of GARCH (lagged variance) terms, `q`.
    pub garch_order: usize,
    pub ar_order: usize,
    pub ma_order: usize,
}

impl Default for GarchSpec {
    fn default() -> Self {
        Self::new(1, 1)
    }
}

impl GarchSpec {
    pub fn new(arch_order: usize, garch_order: usize) -> Self {
        Self {
            arch_order,
            garch_order,
            ar_order: 0,
            ma_order: 0,
        }
    }

    pub fn with_mean(mut self, ar_order: usize, ma_order: usize) -> Self {
        self.ar_order = ar_order;
        self.ma_order = ma_order;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.arch_order == 0 {
            return Err(Error::InvalidArgument(
                "GARCH needs at least one ARCH term".into(),
            ));
        }
        Ok(())
    }

    fn max_lag(&self) -> usize {
        self.arch_order
            .max(self.garch_order)
            .max(self.ar_order)
            .max(self.ma_order)
    }

    fn n_params(&self) -> usize {
        1 + self.ar_order + self.ma_order + 1 + self.arch_order + self.garch_order
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GarchParams {
    pub mean_const: f64,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    /// Variance intercept `k`.
    pub variance_const: f64,
    /// ARCH coefficients `A_i`.
    pub arch: Vec<f64>,
    /// GARCH coefficients `G_i`.
    pub garch: Vec<f64>,
}

impl GarchParams {
    /// GARCH(1,1) with a constant mean.
    pub fn garch11(mean_const: f64, variance_const: f64, arch: f64, garch: f64) -> Self {
        Self {
            mean_const,
            ar: Vec::new(),
            ma: Vec::new(),
            variance_const,
            arch: vec![arch],
            garch: vec![garch],
        }
    }

    pub fn spec(&self) -> GarchSpec {
        GarchSpec {
            arch_order: self.arch.len(),
            garch_order: self.garch.len(),
            ar_order: self.ar.len(),
            ma_order: self.ma.len(),
        }
    }

    pub fn persistence(&self) -> f64 {
        self.arch.iter().sum::<f64>() + self.garch.iter().sum::<f64>()
    }

    pub fn validate(&self, spec: &GarchSpec) -> Result<()> {
        if self.spec() != *spec {
            return Err(Error::Shape(format!(
                "parameters have orders {:?}, spec wants {:?}",
                self.spec(),
                spec
            )));
        }
        let all = std::iter::once(self.mean_const)
            .chain(self.ar.iter().copied())
            .chain(self.ma.iter().copied())
            .chain(std::iter::once(self.variance_const))
            .chain(self.arch.iter().copied())
            .chain(self.garch.iter().copied());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite GARCH parameter".into()));
        }
        if self.variance_const <= 0.0 {
            return Err(Error::Domain(format!(
                "variance constant must be positive, got {}",
                self.variance_const
            )));
        }
        if self.arch.iter().chain(&self.garch).any(|v| *v < 0.0) {
            return Err(Error::Domain(
                "ARCH/GARCH coefficients must be non-negative".into(),
            ));
        }
        if self.persistence() >= 1.0 {
            return Err(Error::NonStationary(self.persistence()));
        }
        Ok(())
    }
}

pub fn unconditional_variance(params: &GarchParams) -> Result<f64> {
    let persistence = params.persistence();
    if persistence >= 1.0 {
        return Err(Error::NonStationary(persistence));
    }
    Ok(params.variance_const / (1.0 - persistence))
}

struct Filtered {
    residuals: Vec<f64>,
    variances: Vec<f64>,
    nll: f64,
    initial_variance: f64,
    presample_return: f64,
}

fn filter(params: &GarchParams, returns: &[f64]) -> Filtered {
    let n = returns.len();
    let h0 = params.variance_const / (1.0 - params.persistence());
    let rbar = returns.iter().sum::<f64>() / n.max(1) as f64;
    let mut residuals = Vec::with_capacity(n);
    let mut variances = Vec::with_capacity(n);
    let mut nll = 0.0;
    for t in 0..n {
        let (mean, h) = step(params, returns, &residuals, &variances, t, h0, rbar);
        let e = returns[t] - mean;
        nll += 0.5 * (LN_2PI + h.ln() + e * e / h);
        residuals.push(e);
        variances.push(h);
    }
    Filtered {
        residuals,
        variances,
        nll,
        initial_variance: h0,
        presample_return: rbar,
    }
}

/// Conditional mean and variance for time `t` given everything before it.
fn step(
    params: &GarchParams,
    returns: &[f64],
    residuals: &[f64],
    variances: &[f64],
    t: usize,
    h0: f64,
    rbar: f64,
) -> (f64, f64) {
    let mut mean = params.mean_const;
    for (i, phi) in params.ar.iter().enumerate() {
        mean += phi * t.checked_sub(i + 1).map_or(rbar, |s| returns[s]);
    }
    for (j, theta) in params.ma.iter().enumerate() {
        mean += theta * t.checked_sub(j + 1).map_or(0.0, |s| residuals[s]);
    }
    let mut h = params.variance_const;
    for (i, g) in params.garch.iter().enumerate() {
        h += g * t.checked_sub(i + 1).map_or(h0, |s| variances[s]);
    }
    for (i, a) in params.arch.iter().enumerate() {
        h += a * t
            .checked_sub(i + 1)
            .map_or(h0, |s| residuals[s] * residuals[s]);
    }
    (mean, h)
}

/// Gaussian negative log-likelihood `½ Σ [ln 2π + ln h_t + ε_t²/h_t]`.
pub fn negative_log_likelihood(
    params: &GarchParams,
    returns: &[f64],
    spec: &GarchSpec,
) -> Result<f64> {
    params.validate(spec)?;
    if returns.is_empty() {
        return Err(Error::InsufficientData(
            "likelihood of an empty series".into(),
        ));
    }
    Ok(filter(params, returns).nll)
}

#[derive(Debug, Clone)]
pub struct GarchFit {
    pub spec: GarchSpec,
    pub params: GarchParams,
    /// Conditional variance path `h_t`, one entry per return.
    pub variances: Vec<f64>,
    pub residuals: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

struct Transform {
    spec: GarchSpec,
}

impl Transform {
    fn to_params(&self, theta: &[f64]) -> GarchParams {
        let s = &self.spec;
        let (mean_const, rest) = theta.split_first().unwrap();
        let (ar, rest) = rest.split_at(s.ar_order);
        let (ma, rest) = rest.split_at(s.ma_order);
        let (log_k, logits) = rest.split_first().unwrap();
        let top = logits.iter().copied().fold(0.0f64, f64::max);
        let exps: Vec<f64> = logits.iter().map(|b| (b - top).exp()).collect();
        let denom = (-top).exp() + exps.iter().sum::<f64>();
        let weights: Vec<f64> = exps.iter().map(|e| e / denom).collect();
        GarchParams {
            mean_const: *mean_const,
            ar: ar.to_vec(),
            ma: ma.to_vec(),
            variance_const: log_k.exp(),
            arch: weights[..s.arch_order].to_vec(),
            garch: weights[s.arch_order..].to_vec(),
        }
    }

    fn to_theta(&self, params: &GarchParams) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.spec.n_params());
        theta.push(params.mean_const);
        theta.extend(&params.ar);
        theta.extend(&params.ma);
        theta.push(params.variance_const.ln());
        let slack = (1.0 - params.persistence()).max(1e-12);
        theta.extend(
            params
                .arch
                .iter()
                .chain(&params.garch)
                .map(|w| (w.max(1e-8) / slack).ln()),
        );
        theta
    }
}

/// Starting (ΣA, ΣG) pairs; each start spreads the totals evenly over lags.
const STARTS: [(f64, f64); 3] = [(0.05, 0.90), (0.10, 0.80), (0.20, 0.50)];

/// Maximum-likelihood fit. Returns a fit with `converged == false` rather
/// than an error when the simplex search runs out of iterations.
pub fn fit_garch(returns: &[f64], spec: &GarchSpec) -> Result<GarchFit> {
    fit_garch_with(returns, spec, NelderMeadOptions::default())
}

pub fn fit_garch_with(
    returns: &[f64],
    spec: &GarchSpec,
    options: NelderMeadOptions,
) -> Result<GarchFit> {
    spec.validate()?;
    let n = returns.len();
    if n < MIN_FIT_LENGTH || n <= spec.max_lag() + 1 {
        return Err(Error::InsufficientData(format!(
            "GARCH fit needs at least {MIN_FIT_LENGTH} returns, got {n}"
        )));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::Domain("non-finite return".into()));
    }
    let mean = returns.iter().sum::<f64>() / n as f64;
    let variance = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let scale = returns.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    if variance <= (64.0 * f64::EPSILON * scale).powi(2) || variance == 0.0 {
        return Err(Error::Degenerate(
            "GARCH fit on a zero-variance series".into(),
        ));
    }

    let transform = Transform { spec: *spec };
    let sd = variance.sqrt();
    let mut steps = Vec::with_capacity(spec.n_params());
    steps.push(0.1 * sd);
    steps.extend(std::iter::repeat_n(0.1, spec.ar_order + spec.ma_order));
    steps.push(0.5);
    steps.extend(std::iter::repeat_n(0.5, spec.arch_order + spec.garch_order));

    let objective = |theta: &[f64]| filter(&transform.to_params(theta), returns).nll;
    let mut best: Option<crate::optim::Minimum> = None;
    for (arch_total, garch_total) in STARTS {
        let garch_total = if spec.garch_order == 0 {
            0.0
        } else {
            garch_total
        };
        let start = GarchParams {
            mean_const: mean,
            ar: vec![0.0; spec.ar_order],
            ma: vec![0.0; spec.ma_order],
            variance_const: variance * (1.0 - arch_total - garch_total),
            arch: vec![arch_total / spec.arch_order as f64; spec.arch_order],
            garch: vec![garch_total / spec.garch_order.max(1) as f64; spec.garch_order],
        };
        let m = nelder_mead(objective, &transform.to_theta(&start), &steps, options);
        if best.as_ref().is_none_or(|b| m.value < b.value) {
            best = Some(m);
        }
    }
    let best = best.expect("at least one start");
    let params = transform.to_params(&best.x);
    let filtered = filter(&params, returns);
    Ok(GarchFit {
        spec: *spec,
        params,
        variances: filtered.variances,
        residuals: filtered.residuals,
        loglik: -filtered.nll,
        converged: best.converged,
        iterations: best.iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneStepForecast {
    pub mean: f64,
    pub variance: f64,
}

/// Next-period conditional mean and variance after filtering `returns` (the
/// fitted series or an extension of it) with the fitted parameters.
pub fn forecast_one_step(fit: &GarchFit, returns: &[f64]) -> Result<OneStepForecast> {
    if returns.len() < fit.residuals.len() {
        return Err(Error::Shape(format!(
            "forecast needs at least the {} fitted returns, got {}",
            fit.residuals.len(),
            returns.len()
        )));
    }
    let filtered = filter(&fit.params, returns);
    let (mean, variance) = step(
        &fit.params,
        returns,
        &filtered.residuals,
        &filtered.variances,
        returns.len(),
        filtered.initial_variance,
        filtered.presample_return,
    );
    Ok(OneStepForecast { mean, variance })
}

/// Rolling one-step price forecasts. Element `i` is the forecast for day
/// `i + window`, built from `prices[i..i + window]` only, so the output has
/// `prices.len() - window` entries.
pub fn rolling_garch_price_forecast(
    prices: &[f64],
    window: usize,
    spec: &GarchSpec,
) -> Result<Vec<f64>> {
    rolling_forecasts(prices, window, spec, false)
}

/// Like [`rolling_garch_price_forecast`] but also emits the out-of-sample
/// forecast for the day after the last price (length `len - window + 1`).
pub fn rolling_garch_price_forecast_through_end(
    prices: &[f64],
    window: usize,
    spec: &GarchSpec,
) -> Result<Vec<f64>> {
    rolling_forecasts(prices, window, spec, true)
}

fn rolling_forecasts(
    prices: &[f64],
    window: usize,
    spec: &GarchSpec,
    through_end: bool,
) -> Result<Vec<f64>> {
    if window < 2 || prices.len() <= window {
        return Err(Error::InsufficientData(format!(
            "rolling GARCH with window {window} needs more than {window} prices, got {}",
            prices.len()
        )));
    }
    if let Some(i) = prices.iter().position(|p| p.is_nan() || *p <= 0.0) {
        return Err(Error::Domain(format!(
            "price at index {i} is not positive: {}",
            prices[i]
        )));
    }
    let count = prices.len() - window + usize::from(through_end);
    (0..count)
        .into_par_iter()
        .map(|i| {
            let slice = &prices[i..i + window];
            let returns = log_returns(slice)?;
            let next_return = match fit_garch(&returns, spec) {
                Ok(fit) => {
                    if !fit.converged {
                        log::debug!(
                            "GARCH window {i} stopped after {} iterations",
                            fit.iterations
                        );
                    }
                    forecast_one_step(&fit, &returns)?.mean
                }
                Err(Error::Degenerate(_)) => 0.0,
                Err(e) => return Err(e),
            };
            Ok(slice[window - 1] * next_return.exp())
        })
        .collect()
}

/// Simulate `n` returns from the model, discarding a burn-in of `burn_in`
/// draws that start from the unconditional variance.
pub fn simulate_garch<R: Rng + ?Sized>(
    params: &GarchParams,
    n: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    params.validate(&params.spec())?;
    let h0 = unconditional_variance(params)?;
    let total = n + burn_in;
    let mut returns = Vec::with_capacity(total);
    let mut residuals: Vec<f64> = Vec::with_capacity(total);
    let mut variances: Vec<f64> = Vec::with_capacity(total);
    let rbar = params.mean_const / (1.0 - params.ar.iter().sum::<f64>()).max(1e-6);
    for t in 0..total {
        let (mean, h) = step(params, &returns, &residuals, &variances, t, h0, rbar);
        let u: f64 = rng.sample(StandardNormal);
        let e = u * h.sqrt();
        returns.push(mean + e);
        residuals.push(e);
        variances.push(h);
    }
    Ok(returns.split_off(burn_in))
}
