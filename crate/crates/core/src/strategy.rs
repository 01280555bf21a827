//! Forecast-driven purchase timing and the iceberg-order cost backtest.

use std::io::Write;
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::data::{format_value, DATE_FORMAT};
use crate::error::{Error, Result};
use crate::harness::ForecastRecord;
use crate::rng::child_rng;

pub const DEFAULT_THRESHOLD: f64 = 0.02;
pub const DEFAULT_SHORTFALL: u64 = 20_000;
pub const DEFAULT_LOT: u64 = 1_000;
pub const DEFAULT_TRIALS: usize = 1_000;

const BASELINE_STREAM: u64 = 0xba5e;

/// Price that the next-day forecast is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Denominator {
    /// Today's forecast.
    #[default]
    Forecast,
    /// Today's realized close.
    Realized,
}

impl FromStr for Denominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "forecast" => Ok(Denominator::Forecast),
            "realized" | "realised" => Ok(Denominator::Realized),
            other => Err(Error::InvalidArgument(format!(
                "unknown signal denominator `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Signal {
    pub date: NaiveDate,
    /// Relative change from the denominator to tomorrow's forecast.
    pub delta: f64,
    pub buy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    pub threshold: f64,
    pub denominator: Denominator,
    pub signals: Vec<Signal>,
}

/// Buy today when tomorrow's forecast is at least `threshold` above the
/// denominator. The last forecast date has no successor and emits nothing.
pub fn generate_signals(
    records: &[ForecastRecord],
    threshold: f64,
    denominator: Denominator,
) -> Result<SignalSeries> {
    if !threshold.is_finite() {
        return Err(Error::InvalidArgument(
            "signal threshold must be finite".into(),
        ));
    }
    for w in records.windows(2) {
        if w[1].date <= w[0].date {
            return Err(Error::Ordering(format!(
                "forecast dated {} follows {}",
                w[1].date, w[0].date
            )));
        }
        if (w[1].model, w[1].window) != (w[0].model, w[0].window) {
            return Err(Error::InvalidArgument(
                "signals need forecasts from a single model and window".into(),
            ));
        }
    }
    let signals = records
        .windows(2)
        .map(|w| {
            let denom = match denominator {
                Denominator::Forecast => w[0].pv,
                Denominator::Realized => w[0].rv,
            };
            if denom.is_nan() || denom <= 0.0 {
                return Err(Error::Domain(format!(
                    "signal denominator {denom} on {} is not positive",
                    w[0].date
                )));
            }
            let delta = w[1].pv / denom - 1.0;
            Ok(Signal {
                date: w[0].date,
                delta,
                buy: delta >= threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SignalSeries {
        threshold,
        denominator,
        signals,
    })
}

impl SignalSeries {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["date", "delta", "signal"])?;
        for s in &self.signals {
            csv.write_record([
                s.date.format(DATE_FORMAT).to_string(),
                format_value(s.delta),
                u8::from(s.buy).to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Dated closing prices in increasing date order.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    dates: Vec<NaiveDate>,
    prices: Vec<f64>,
}

impl PriceSeries {
    pub fn new(dates: Vec<NaiveDate>, prices: Vec<f64>) -> Result<Self> {
        if dates.len() != prices.len() {
            return Err(Error::Shape(format!(
                "{} dates for {} prices",
                dates.len(),
                prices.len()
            )));
        }
        if dates.is_empty() {
            return Err(Error::InsufficientData("price series is empty".into()));
        }
        if let Some(w) = dates.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Ordering(format!(
                "price dated {} follows {}",
                w[1], w[0]
            )));
        }
        if let Some(i) = prices.iter().position(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::Domain(format!(
                "price {} on {} is not positive",
                prices[i], dates[i]
            )));
        }
        Ok(Self { dates, prices })
    }

    /// Realized prices of a forecast run.
    pub fn from_records(records: &[ForecastRecord]) -> Result<Self> {
        Self::new(
            records.iter().map(|r| r.date).collect(),
            records.iter().map(|r| r.rv).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn price_on(&self, date: NaiveDate) -> Option<f64> {
        self.dates.binary_search(&date).ok().map(|i| self.prices[i])
    }

    /// The prices dated within `[from, to]`.
    pub fn between(&self, from: NaiveDate, to: NaiveDate) -> Result<Self> {
        let lo = self.dates.partition_point(|d| *d < from);
        let hi = self.dates.partition_point(|d| *d <= to);
        Self::new(self.dates[lo..hi].to_vec(), self.prices[lo..hi].to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Buy {
    pub date: NaiveDate,
    pub lots: u64,
    pub price: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeLedger {
    pub buys: Vec<Buy>,
    pub lot_size: u64,
    pub shortfall: u64,
    pub total_cost: f64,
    /// Lots bought at the final close because signals ran out.
    pub forced_completion: bool,
    pub signal_days: usize,
    /// Signal days after the order was already filled.
    pub unexecuted_signals: usize,
}

impl TradeLedger {
    pub fn lots_bought(&self) -> u64 {
        self.buys.iter().map(|b| b.lots).sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["date", "lots", "price", "cost"])?;
        for b in &self.buys {
            csv.write_record([
                b.date.format(DATE_FORMAT).to_string(),
                b.lots.to_string(),
                format_value(b.price),
                format_value(b.cost),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

fn lots_needed(shortfall: u64, lot: u64) -> Result<u64> {
    if lot == 0 || shortfall == 0 || !shortfall.is_multiple_of(lot) {
        return Err(Error::InvalidArgument(format!(
            "shortfall {shortfall} must be a positive multiple of the lot size {lot}"
        )));
    }
    Ok(shortfall / lot)
}

/// Buy one lot at the close of each signal day until the shortfall is
/// covered; anything left is bought at the close of the last price date.
pub fn iceberg_backtest(
    signals: &SignalSeries,
    prices: &PriceSeries,
    shortfall: u64,
    lot: u64,
) -> Result<TradeLedger> {
    let needed = lots_needed(shortfall, lot)?;
    let mut buys = Vec::new();
    let mut bought = 0;
    let mut signal_days = 0;
    let mut unexecuted = 0;
    for s in signals.signals.iter().filter(|s| s.buy) {
        signal_days += 1;
        if bought == needed {
            unexecuted += 1;
            continue;
        }
        let price = prices
            .price_on(s.date)
            .ok_or_else(|| Error::DataGap(format!("no closing price on signal day {}", s.date)))?;
        buys.push(Buy {
            date: s.date,
            lots: 1,
            price,
            cost: (lot as f64) * price,
        });
        bought += 1;
    }
    let forced_completion = bought < needed;
    if forced_completion {
        let last = prices.len() - 1;
        let (date, price) = (prices.dates[last], prices.prices[last]);
        let lots = needed - bought;
        buys.push(Buy {
            date,
            lots,
            price,
            cost: (lots * lot) as f64 * price,
        });
    }
    let total_cost = buys.iter().map(|b| b.cost).sum();
    Ok(TradeLedger {
        buys,
        lot_size: lot,
        shortfall,
        total_cost,
        forced_completion,
        signal_days,
        unexecuted_signals: unexecuted,
    })
}

/// Cost of each trial, where a trial buys one lot on each of
/// `shortfall / lot` distinct days drawn uniformly at random.
pub fn random_baseline(
    prices: &PriceSeries,
    trials: usize,
    shortfall: u64,
    lot: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    let needed = lots_needed(shortfall, lot)? as usize;
    if prices.len() < needed {
        return Err(Error::InsufficientData(format!(
            "{needed} purchase days needed, only {} trading days available",
            prices.len()
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument(
            "at least one baseline trial is required".into(),
        ));
    }
    Ok((0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = child_rng(seed, BASELINE_STREAM, t as u64);
            let mut days = rand::seq::index::sample(&mut rng, prices.len(), needed).into_vec();
            days.sort_unstable();
            days.iter().map(|&d| prices.prices[d]).sum::<f64>() * lot as f64
        })
        .collect())
}

/// Cost of buying on the cheapest `shortfall / lot` days.
pub fn perfect_foresight(prices: &PriceSeries, shortfall: u64, lot: u64) -> Result<f64> {
    let needed = lots_needed(shortfall, lot)? as usize;
    if prices.len() < needed {
        return Err(Error::InsufficientData(format!(
            "{needed} purchase days needed, only {} trading days available",
            prices.len()
        )));
    }
    let mut sorted = prices.prices.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[..needed].iter().sum::<f64>() * lot as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyEvaluation {
    pub total_cost: f64,
    pub baseline_mean_cost: f64,
    pub reduction_ratio: f64,
    pub relative_quantile: f64,
    pub trials: usize,
    pub seed: u64,
}

pub fn reduction_ratio(cost: f64, baseline_mean: f64) -> f64 {
    1.0 - cost / baseline_mean
}

/// Share of baseline trials strictly cheaper than `cost`.
pub fn relative_quantile(cost: f64, baseline: &[f64]) -> f64 {
    baseline.iter().filter(|c| **c < cost).count() as f64 / baseline.len() as f64
}

pub fn evaluate_strategy(
    total_cost: f64,
    baseline: &[f64],
    seed: u64,
) -> Result<StrategyEvaluation> {
    if baseline.is_empty() {
        return Err(Error::InvalidArgument("baseline has no trials".into()));
    }
    let mean = baseline.iter().sum::<f64>() / baseline.len() as f64;
    Ok(StrategyEvaluation {
        total_cost,
        baseline_mean_cost: mean,
        reduction_ratio: reduction_ratio(total_cost, mean),
        relative_quantile: relative_quantile(total_cost, baseline),
        trials: baseline.len(),
        seed,
    })
}

/// One strategy row of the cost summary.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRow {
    pub strategy: String,
    pub evaluation: StrategyEvaluation,
    pub forced_completion: bool,
}

/// Cost summary: one row per strategy, then the random baseline mean.
pub fn write_strategy_summary<W: Write>(rows: &[StrategyRow], writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record([
        "strategy",
        "total_cost",
        "baseline_mean_cost",
        "reduction_ratio_pct",
        "relative_quantile",
        "forced_completion",
        "trials",
    ])?;
    for r in rows {
        let e = &r.evaluation;
        csv.write_record([
            r.strategy.clone(),
            format!("{:.0}", e.total_cost),
            format!("{:.0}", e.baseline_mean_cost),
            format!("{:.2}", 100.0 * e.reduction_ratio),
            format!("{:.3}", e.relative_quantile),
            r.forced_completion.to_string(),
            e.trials.to_string(),
        ])?;
    }
    if let Some(first) = rows.first() {
        let e = &first.evaluation;
        csv.write_record([
            "Random".to_string(),
            format!("{:.0}", e.baseline_mean_cost),
            format!("{:.0}", e.baseline_mean_cost),
            format!("{:.2}", 0.0),
            String::new(),
            String::new(),
            e.trials.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_baseline_costs<W: Write>(costs: &[f64], writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["trial", "cost"])?;
    for (i, c) in costs.iter().enumerate() {
        csv.write_record([i.to_string(), format_value(*c)])?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::harness::{ModelFamily, Segment};
    use crate::synth::business_days;

    fn day0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2018, 1, 2).unwrap()
    }

    fn records(pv: &[f64], rv: &[f64]) -> Vec<ForecastRecord> {
        business_days(day0(), pv.len())
            .into_iter()
            .zip(pv.iter().zip(rv))
            .map(|(date, (p, r))| ForecastRecord {
                model: ModelFamily::GarchGru,
                window: 5,
                date,
                pv: *p,
                rv: *r,
                segment: Segment::Implementation,
            })
            .collect()
    }

    fn prices(values: &[f64]) -> PriceSeries {
        PriceSeries::new(business_days(day0(), values.len()), values.to_vec()).unwrap()
    }

    fn series(buy: &[bool]) -> SignalSeries {
        SignalSeries {
            threshold: DEFAULT_THRESHOLD,
            denominator: Denominator::Forecast,
            signals: business_days(day0(), buy.len())
                .into_iter()
                .zip(buy)
                .map(|(date, b)| Signal {
                    date,
                    delta: 0.0,
                    buy: *b,
                })
                .collect(),
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        let s = generate_signals(
            &records(&[100.0, 102.0, 101.9, 90.0], &[1.0; 4]),
            0.02,
            Denominator::Forecast,
        )
        .unwrap();
        assert_eq!(s.signals.len(), 3);
        assert!((s.signals[0].delta - 0.02).abs() < 1e-15);
        assert!(s.signals[0].buy);
        assert!(!s.signals[1].buy && s.signals[1].delta < 0.0);
        assert!(!s.signals[2].buy);
        let s = generate_signals(
            &records(&[100.0, 101.9], &[1.0; 2]),
            0.02,
            Denominator::Forecast,
        )
        .unwrap();
        assert!((s.signals[0].delta - 0.019).abs() < 1e-12 && !s.signals[0].buy);
    }

    #[test]
    fn realized_denominator_and_errors() {
        let s = generate_signals(
            &records(&[1.0, 110.0], &[100.0, 1.0]),
            0.02,
            Denominator::Realized,
        )
        .unwrap();
        assert!((s.signals[0].delta - 0.1).abs() < 1e-12);
        assert!(matches!(
            generate_signals(
                &records(&[0.0, 1.0], &[1.0; 2]),
                0.02,
                Denominator::Forecast
            ),
            Err(Error::Domain(_))
        ));
        let mut recs = records(&[1.0, 2.0], &[1.0; 2]);
        recs.swap(0, 1);
        assert!(matches!(
            generate_signals(&recs, 0.02, Denominator::Forecast),
            Err(Error::Ordering(_))
        ));
        assert!(generate_signals(&[], 0.02, Denominator::Forecast)
            .unwrap()
            .signals
            .is_empty());
    }

    #[test]
    fn constant_price_backtest() {
        let p = prices(&[40.0; 250]);
        let mut buy = vec![false; 250];
        for i in (0..250).step_by(5) {
            buy[i] = true;
        }
        let ledger = iceberg_backtest(&series(&buy), &p, 20_000, 1_000).unwrap();
        assert_eq!(ledger.total_cost, 800_000.0);
        assert!(!ledger.forced_completion);
        assert_eq!(ledger.lots_bought(), 20);
        assert_eq!(ledger.signal_days, 50);
        assert_eq!(ledger.unexecuted_signals, 30);

        let none = iceberg_backtest(&series(&[false; 250]), &p, 20_000, 1_000).unwrap();
        assert_eq!(none.total_cost, 800_000.0);
        assert!(none.forced_completion);
        assert_eq!(none.buys.len(), 1);
        assert_eq!(none.buys[0].lots, 20);
        assert_eq!(none.buys[0].date, *p.dates().last().unwrap());
    }

    #[test]
    fn partial_signals_force_the_remainder() {
        let p = prices(&[10.0, 20.0, 30.0, 40.0]);
        let ledger =
            iceberg_backtest(&series(&[true, false, true, false]), &p, 4_000, 1_000).unwrap();
        assert_eq!(ledger.total_cost, 1000.0 * (10.0 + 30.0 + 2.0 * 40.0));
        assert!(ledger.forced_completion);
        let total: f64 = ledger
            .buys
            .iter()
            .map(|b| b.lots as f64 * 1000.0 * b.price)
            .sum();
        assert_eq!(total, ledger.total_cost);
    }

    #[test]
    fn missing_price_is_a_gap() {
        let p = prices(&[10.0, 20.0]);
        let err = iceberg_backtest(&series(&[false, false, true]), &p, 2_000, 1_000).unwrap_err();
        assert!(matches!(err, Error::DataGap(_)));
        assert!(iceberg_backtest(&series(&[true]), &p, 2_500, 1_000).is_err());
    }

    #[test]
    fn baseline_properties() {
        let p = prices(&[37.5; 100]);
        let costs = random_baseline(&p, 50, 20_000, 1_000, 9).unwrap();
        assert!(costs.iter().all(|c| *c == 750_000.0));
        let walk: Vec<f64> = (0..100)
            .map(|i| 30.0 + (i as f64 * 0.37).sin() * 5.0)
            .collect();
        let p = prices(&walk);
        let a = random_baseline(&p, 200, 20_000, 1_000, 1).unwrap();
        let b = random_baseline(&p, 200, 20_000, 1_000, 1).unwrap();
        let c = random_baseline(&p, 200, 20_000, 1_000, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!(perfect_foresight(&p, 20_000, 1_000).unwrap() <= mean);
        assert!(matches!(
            random_baseline(&prices(&[1.0; 19]), 10, 20_000, 1_000, 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn published_cost_arithmetic() {
        let r = reduction_ratio(789_710.0, 820_396.0);
        assert_eq!(format!("{:.2}%", 100.0 * r), "3.74%");
        let mut baseline = vec![900_000.0; 993];
        baseline.extend([700_000.0; 7]);
        assert_eq!(relative_quantile(789_710.0, &baseline), 0.007);
        let e = evaluate_strategy(800_000.0, &[800_000.0; 10], 3).unwrap();
        assert_eq!((e.reduction_ratio, e.relative_quantile), (0.0, 0.0));
        assert!(evaluate_strategy(1.0, &[], 0).is_err());
    }

    proptest! {
        #[test]
        fn foresight_never_beats_min_and_never_loses_to_mean(values in prop::collection::vec(1.0f64..100.0, 20..60), seed in 0u64..1000) {
            let p = prices(&values);
            let costs = random_baseline(&p, 30, 20_000, 1_000, seed).unwrap();
            let pf = perfect_foresight(&p, 20_000, 1_000).unwrap();
            let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(pf <= min * (1.0 + 1e-12));
        }

        #[test]
        fn ledger_is_complete(buy in prop::collection::vec(any::<bool>(), 1..60)) {
            let values: Vec<f64> = (0..buy.len()).map(|i| 20.0 + i as f64).collect();
            let ledger = iceberg_backtest(&series(&buy), &prices(&values), 5_000, 1_000).unwrap();
            prop_assert_eq!(ledger.lots_bought(), 5);
            let executed = buy.iter().filter(|b| **b).count().min(5);
            prop_assert_eq!(ledger.forced_completion, executed < 5);
            let sum: f64 = ledger.buys.iter().map(|b| b.cost).sum();
            prop_assert_eq!(sum, ledger.total_cost);
        }
    }
}
