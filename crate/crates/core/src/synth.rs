//! Seeded synthetic market panels with the full 23-variable schema.
//!
//! SHEA follows a GARCH(1,1) return process. The regional quotas move with
//! SHEA shocks, the carbon futures column carries a noisy hint of the next
//! SHEA return, and the remaining variables are independent log random walks
//! or positive noise.

use std::collections::BTreeMap;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{ObservationPanel, VariableCode};
use crate::error::{Error, Result};
use crate::garch::{simulate_garch, GarchParams};
use crate::rng::child_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub days: usize,
    pub seed: u64,
    pub start: NaiveDate,
    pub shea_start: f64,
    pub garch: GarchParams,
    /// Probability that any non-SHEA cell is blanked out.
    pub missing_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 605,
            seed: 0,
            start: NaiveDate::from_ymd_opt(2016, 11, 28).expect("valid date"),
            shea_start: 35.0,
            garch: GarchParams::garch11(0.0, 2e-5, 0.10, 0.85),
            missing_fraction: 0.0,
        }
    }
}

/// `count` consecutive weekdays starting at `start` (moved forward if it is a weekend).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

fn normals(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    let mut rng = child_rng(seed, stream, 0);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn log_walk(start: f64, vol: f64, shocks: &[f64]) -> Vec<f64> {
    let mut level = start.ln();
    shocks
        .iter()
        .map(|z| {
            level += vol * z;
            level.exp()
        })
        .collect()
}

pub fn synthetic_panel(config: &SynthConfig) -> Result<ObservationPanel> {
    let n = config.days;
    if n < 2 {
        return Err(Error::InvalidArgument(
            "synthetic panel needs at least 2 days".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.missing_fraction) {
        return Err(Error::InvalidArgument(
            "missing fraction must be in [0, 1)".into(),
        ));
    }
    let seed = config.seed;
    let mut rng = child_rng(seed, 0, 0);
    let returns = simulate_garch(&config.garch, n, 500, &mut rng)?;
    let mut shea = Vec::with_capacity(n);
    let mut price = config.shea_start;
    for (t, r) in returns.iter().enumerate() {
        if t > 0 {
            price *= r.exp();
        }
        shea.push(price);
    }
    let next_return = |t: usize| if t + 1 < n { returns[t + 1] } else { 0.0 };

    let mut columns: BTreeMap<VariableCode, Vec<f64>> = BTreeMap::new();
    use VariableCode::*;
    columns.insert(Shea, shea.clone());

    // Regional quotas: share SHEA shocks plus their own noise.
    for (stream, code, start, beta) in [(1, Sza, 30.0, 0.6), (2, Gdea, 15.0, 0.4)] {
        let own = normals(seed, stream, n);
        let mut level = f64::ln(start);
        let col = (0..n)
            .map(|t| {
                if t > 0 {
                    level += beta * returns[t] + 0.015 * own[t];
                }
                level.exp()
            })
            .collect();
        columns.insert(code, col);
    }

    // Carbon futures: today's SHEA nudged by half of tomorrow's return.
    let noise = normals(seed, 3, n);
    columns.insert(
        Tpfqh,
        (0..n)
            .map(|t| shea[t] * (0.5 * next_return(t) + 0.005 * noise[t]).exp())
            .collect(),
    );

    let walks: [(u64, VariableCode, f64, f64); 18] = [
        (4, Hs300, 3500.0, 0.012),
        (5, Bp500, 2200.0, 0.008),
        (6, Oy, 7.4, 0.004),
        (7, My, 6.9, 0.002),
        (8, Cci500, 560.0, 0.006),
        (9, Yhq, 3900.0, 0.01),
        (10, Qy, 7800.0, 0.006),
        (11, Fob, 55.0, 0.018),
        (12, Wired, 1500.0, 0.011),
        (13, Trqqh, 3.1, 0.02),
        (14, Cer, 0.3, 0.03),
        (15, Eua, 6.0, 0.025),
        (16, Szny, 2100.0, 0.013),
        (17, Szgy, 2600.0, 0.011),
        (18, Szzr, 1900.0, 0.012),
        (19, Cky, 2300.0, 0.014),
        (20, Sszny, 1700.0, 0.013),
        (21, Zzy, 6200.0, 0.01),
    ];
    for (stream, code, start, vol) in walks {
        columns.insert(code, log_walk(start, vol, &normals(seed, stream, n)));
    }
    // Daily mean PM2.5: positive, mean-reverting, unrelated to prices.
    let z = normals(seed, 22, n);
    let mut x = 0.0;
    columns.insert(
        Pm,
        z.iter()
            .map(|e| {
                x = 0.7 * x + 0.4 * e;
                50.0 * x.exp()
            })
            .collect(),
    );

    if config.missing_fraction > 0.0 {
        let mut rng = child_rng(seed, 99, 0);
        for (code, values) in columns.iter_mut() {
            if *code == Shea {
                continue;
            }
            for v in values.iter_mut() {
                if rng.random::<f64>() < config.missing_fraction {
                    *v = f64::NAN;
                }
            }
        }
    }

    debug_assert_eq!(columns.len(), 23);
    ObservationPanel::new(business_days(config.start, n), columns)
}
