//! Forecast error metrics, model comparison tables and leave-one-out
//! variable importance.

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::VariableCode;
use crate::error::{Error, Result};
use crate::harness::{
    rolling_run_prepared, FeatureSet, ForecastRecord, ModelFamily, PreparedPanel, RollConfig,
    RollScope, Segment, TrainParams,
};

pub const METRIC_NAMES: [&str; 5] = ["MAE", "MSE", "MAPE", "MSPE", "LL"];

/// Error summary of one model at one window.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub model: ModelFamily,
    pub window: usize,
    pub n: usize,
    pub mae: f64,
    pub mse: f64,
    /// Percent.
    pub mape: f64,
    pub mspe: f64,
    /// Absent when any forecast is non-positive.
    pub ll: Option<f64>,
}

impl MetricsReport {
    /// The five metrics in table order; an absent LL reads as `+inf`.
    pub fn values(&self) -> [f64; 5] {
        [
            self.mae,
            self.mse,
            self.mape,
            self.mspe,
            self.ll.unwrap_or(f64::INFINITY),
        ]
    }
}

/// Which records count towards a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricScope {
    #[default]
    Implementation,
    All,
}

impl FromStr for MetricScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "implementation" => Ok(MetricScope::Implementation),
            "all" => Ok(MetricScope::All),
            other => Err(Error::InvalidArgument(format!(
                "unknown metric scope `{other}`"
            ))),
        }
    }
}

pub fn select_scope(records: &[ForecastRecord], scope: MetricScope) -> Vec<ForecastRecord> {
    records
        .iter()
        .filter(|r| scope == MetricScope::All || r.segment == Segment::Implementation)
        .cloned()
        .collect()
}

/// Metrics over a set of records that share one model and window.
pub fn compute_metrics(records: &[ForecastRecord]) -> Result<MetricsReport> {
    let first = records
        .first()
        .ok_or_else(|| Error::InsufficientData("metrics need at least one forecast".into()))?;
    if let Some(r) = records
        .iter()
        .find(|r| r.model != first.model || r.window != first.window)
    {
        return Err(Error::InvalidArgument(format!(
            "records mix {} window {} with {} window {}",
            first.model, first.window, r.model, r.window
        )));
    }
    if let Some(r) = records.iter().find(|r| r.rv.is_nan() || r.rv <= 0.0) {
        return Err(Error::Domain(format!(
            "realized price {} on {} is not positive",
            r.rv, r.date
        )));
    }
    let n = records.len() as f64;
    let (mut mae, mut mse, mut mape, mut mspe, mut ll) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut ll_defined = true;
    for r in records {
        let e = r.pv - r.rv;
        let rel = 1.0 - r.pv / r.rv;
        mae += e.abs();
        mse += e * e;
        mape += rel.abs();
        mspe += rel * rel;
        if r.pv > 0.0 {
            ll += (r.pv.ln() - r.rv.ln()).powi(2);
        } else {
            ll_defined = false;
        }
    }
    if !ll_defined {
        log::warn!(
            "{} window {}: non-positive forecast, LL not reported",
            first.model,
            first.window
        );
    }
    Ok(MetricsReport {
        model: first.model,
        window: first.window,
        n: records.len(),
        mae: mae / n,
        mse: mse / n,
        mape: 100.0 * mape / n,
        mspe: mspe / n,
        ll: ll_defined.then_some(ll / n),
    })
}

/// One report per `(model, window)` found in `records`, restricted to `scope`.
pub fn evaluate_records(
    records: &[ForecastRecord],
    scope: MetricScope,
) -> Result<Vec<MetricsReport>> {
    let mut groups: BTreeMap<(ModelFamily, usize), Vec<ForecastRecord>> = BTreeMap::new();
    for r in select_scope(records, scope) {
        groups.entry((r.model, r.window)).or_default().push(r);
    }
    groups.values().map(|g| compute_metrics(g)).collect()
}

/// Reports ordered by model family, then window.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<MetricsReport>,
}

pub fn comparison_table(reports: &[MetricsReport]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument(
            "comparison table needs at least one report".into(),
        ));
    }
    let mut rows = reports.to_vec();
    rows.sort_by_key(|r| (r.model, r.window));
    if let Some(w) = rows
        .windows(2)
        .find(|w| (w[0].model, w[0].window) == (w[1].model, w[1].window))
    {
        return Err(Error::InvalidArgument(format!(
            "duplicate report for {} window {}",
            w[0].model, w[0].window
        )));
    }
    Ok(ComparisonTable { rows })
}

pub fn fixed4(v: f64) -> String {
    format!("{v:.4}")
}

pub fn sci(v: f64) -> String {
    format!("{v:.2e}")
}

fn ll_cell(ll: Option<f64>) -> String {
    ll.map(sci).unwrap_or_else(|| "NA".into())
}

impl ComparisonTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["model", "window", "MAE", "MSE", "MAPE", "MSPE", "LL"])?;
        for r in &self.rows {
            csv.write_record([
                r.model.as_str().to_string(),
                r.window.to_string(),
                fixed4(r.mae),
                fixed4(r.mse),
                fixed4(r.mape),
                sci(r.mspe),
                ll_cell(r.ll),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Competition ranking ("1224"): rank 1 goes to the largest value when
/// `descending`, otherwise to the smallest; equal values share the lower rank.
pub fn competition_ranks(values: &[f64], descending: bool) -> Vec<usize> {
    values
        .iter()
        .map(|v| {
            1 + values
                .iter()
                .filter(|w| if descending { *w > v } else { *w < v })
                .count()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRow {
    pub deleted: VariableCode,
    pub report: MetricsReport,
    /// Per-metric rank in [`METRIC_NAMES`] order; the largest error ranks 1.
    pub ranks: [usize; 5],
    pub mean_rank: f64,
    /// Rank of `mean_rank`, smallest first, ties sharing the lower rank.
    pub average_ranking: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceTable {
    /// Metrics with every feature kept.
    pub baseline: MetricsReport,
    /// One row per deleted feature, in feature order.
    pub rows: Vec<ImportanceRow>,
}

pub fn rank_importance(
    baseline: MetricsReport,
    deleted: Vec<(VariableCode, MetricsReport)>,
) -> ImportanceTable {
    let per_metric: Vec<Vec<usize>> = (0..5)
        .map(|m| {
            let column: Vec<f64> = deleted.iter().map(|(_, r)| r.values()[m]).collect();
            competition_ranks(&column, true)
        })
        .collect();
    let mean_ranks: Vec<f64> = (0..deleted.len())
        .map(|i| per_metric.iter().map(|ranks| ranks[i] as f64).sum::<f64>() / 5.0)
        .collect();
    let average = competition_ranks(&mean_ranks, false);
    let rows = deleted
        .into_iter()
        .enumerate()
        .map(|(i, (code, report))| ImportanceRow {
            deleted: code,
            report,
            ranks: std::array::from_fn(|m| per_metric[m][i]),
            mean_rank: mean_ranks[i],
            average_ranking: average[i],
        })
        .collect();
    ImportanceTable { baseline, rows }
}

fn implementation_report(
    prepared: &PreparedPanel,
    config: &RollConfig,
    features: &FeatureSet,
    params: &TrainParams,
) -> Result<MetricsReport> {
    let config = RollConfig {
        scope: RollScope::Implementation,
        ..config.clone()
    };
    let out = rolling_run_prepared(prepared, &config, features, params)?;
    compute_metrics(&out.records)
}

/// Retrain and score the implementation segment once per deleted feature.
/// Features are named as the model sees them, so hybrids report GSHEA.
pub fn leave_one_out_importance(
    prepared: &PreparedPanel,
    config: &RollConfig,
    features: &FeatureSet,
    params: &TrainParams,
) -> Result<ImportanceTable> {
    if !config.family.is_neural() {
        return Err(Error::InvalidArgument(format!(
            "variable importance applies to recurrent families, not {}",
            config.family
        )));
    }
    let features = features.for_family(config.family);
    if features.len() < 2 {
        return Err(Error::InvalidArgument(
            "importance needs at least two features".into(),
        ));
    }
    let baseline = implementation_report(prepared, config, &features, params)?;
    let deleted = features
        .inputs
        .par_iter()
        .map(|&code| {
            let kept = FeatureSet {
                inputs: features
                    .inputs
                    .iter()
                    .copied()
                    .filter(|c| *c != code)
                    .collect(),
            };
            // A hybrid without GSHEA keeps its own dates, so rows stay comparable.
            let report = implementation_report(prepared, config, &kept, params);
            log::info!("deleted {code}: {:?}", report.as_ref().map(|r| r.mae));
            report.map(|r| (code, r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_importance(baseline, deleted))
}

impl ImportanceTable {
    /// Metrics after each deletion, with the all-features baseline first.
    pub fn write_metrics_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["deleted", "MAE", "MSE", "MAPE", "MSPE", "LL"])?;
        let mut write = |name: &str, r: &MetricsReport| {
            csv.write_record([
                name.to_string(),
                fixed4(r.mae),
                fixed4(r.mse),
                fixed4(r.mape),
                sci(r.mspe),
                ll_cell(r.ll),
            ])
        };
        write("none", &self.baseline)?;
        for row in &self.rows {
            write(row.deleted.as_str(), &row.report)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_ranks_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record([
            "variable",
            "MAE",
            "MSE",
            "MAPE",
            "MSPE",
            "LL",
            "mean_rank",
            "average_ranking",
        ])?;
        for row in &self.rows {
            let mut rec = vec![row.deleted.as_str().to_string()];
            rec.extend(row.ranks.iter().map(|r| r.to_string()));
            rec.push(format!("{}", row.mean_rank));
            rec.push(row.average_ranking.to_string());
            csv.write_record(&rec)?;
        }
        csv.flush()?;
        Ok(())
    }
}
