//! Pipeline stages. Each stage writes its CSV outputs through [`Outputs`],
//! which records every file for the run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use carbon_core::data::{self, format_value, DATE_FORMAT};
use carbon_core::harness::{
    self, grid_search, recursive_feature_elimination, roll_arithmetic, rolling_run_prepared,
    PreparedPanel, RollArithmetic,
};
use carbon_core::metrics::{
    comparison_table, evaluate_records, leave_one_out_importance, ComparisonTable, ImportanceTable,
};
use carbon_core::stats::{self, StatTestResult};
use carbon_core::strategy::{
    evaluate_strategy, generate_signals, iceberg_backtest, perfect_foresight, random_baseline,
    write_baseline_costs, write_strategy_summary, PriceSeries, SignalSeries, StrategyRow,
    TradeLedger,
};
use carbon_core::{
    Error, FeatureSet, ForecastRecord, ModelFamily, ObservationPanel, Segment, TrainParams,
    VariableCode,
};
use chrono::NaiveDate;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::Settings;
use crate::error::{CliError, CliResult, StageContext};
use crate::plot::{emit_series_plot, Series};

pub const PARTIAL_MARKER: &str = ".partial";
pub const MANIFEST: &str = "manifest.json";

/// An output directory that remembers what was written to it.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    written: BTreeSet<String>,
}

impl Outputs {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: BTreeSet::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Relative names of every file written so far, sorted.
    pub fn files(&self) -> impl Iterator<Item = &str> {
        self.written.iter().map(String::as_str)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.insert(name.to_string());
        Ok(())
    }

    /// Render through a core writer, attributing failures to `stage`.
    pub fn write_with(
        &mut self,
        stage: &'static str,
        name: &str,
        render: impl FnOnce(&mut Vec<u8>) -> carbon_core::Result<()>,
    ) -> CliResult<()> {
        let mut buf = Vec::new();
        render(&mut buf).stage(stage)?;
        self.write_bytes(name, &buf)
    }

    pub fn write_rows(
        &mut self,
        stage: &'static str,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> CliResult<()> {
        self.write_with(stage, name, |buf| {
            let mut csv = csv::Writer::from_writer(buf);
            csv.write_record(header)?;
            for r in rows {
                csv.write_record(r)?;
            }
            csv.flush()?;
            Ok(())
        })
    }

    pub fn plot(&mut self, stem: &str, title: &str, series: &[Series]) -> CliResult<()> {
        let name = format!("plots/{stem}");
        let path = self.dir.join(&name);
        emit_series_plot(title, series, path.parent().expect("plots dir"), stem)?;
        self.written.insert(format!("{name}.svg"));
        self.written.insert(format!("{name}.csv"));
        Ok(())
    }
}

fn date_str(d: NaiveDate) -> String {
    d.format(DATE_FORMAT).to_string()
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub raw: ObservationPanel,
    pub clean: ObservationPanel,
}

/// Load the 23-variable panel and fill its gaps.
pub fn ingest(path: &Path) -> CliResult<Ingested> {
    let raw = data::load_panel(path, VariableCode::raw()).stage("ingest")?;
    let clean = data::fill_missing(&raw).stage("ingest")?;
    log::info!(
        "ingest: {} rows x {} columns, {} missing cells filled",
        raw.len(),
        raw.codes().count(),
        raw.missing_count()
    );
    Ok(Ingested { raw, clean })
}

pub fn write_ingest(out: &mut Outputs, ingested: &Ingested) -> CliResult<()> {
    out.write_with("ingest", "panel_clean.csv", |buf| {
        data::write_panel(&ingested.clean, buf)
    })?;
    let rows: Vec<Vec<String>> = ingested
        .raw
        .codes()
        .map(|code| {
            let col = ingested.raw.column(code).expect("listed code");
            vec![
                code.as_str().to_string(),
                col.len().to_string(),
                col.iter().filter(|v| v.is_nan()).count().to_string(),
            ]
        })
        .collect();
    out.write_rows(
        "ingest",
        "ingest_summary.csv",
        &["variable", "rows", "missing_filled"],
        &rows,
    )
}

/// Tests that cannot run on a column (constant, too short) report `NA`.
fn optional(
    code: VariableCode,
    test: &str,
    r: carbon_core::Result<StatTestResult>,
) -> CliResult<Option<StatTestResult>> {
    match r {
        Ok(t) => Ok(Some(t)),
        Err(e @ (Error::Degenerate(_) | Error::InsufficientData(_))) => {
            log::warn!("{test} skipped for {code}: {e}");
            Ok(None)
        }
        Err(e) => Err(e).stage("stats"),
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(format_value).unwrap_or_else(|| "NA".into())
}

/// Descriptive table (ADF on first differences) and the diagnostic battery.
pub fn stats_stage(
    out: &mut Outputs,
    panel: &ObservationPanel,
    settings: &Settings,
) -> CliResult<()> {
    let mut table = Vec::new();
    let mut diagnostics = Vec::new();
    for code in panel.codes() {
        let levels = panel.column(code).stage("stats")?;
        let d = stats::descriptive(levels).stage("stats")?;
        let diff = data::first_difference(levels);
        let lag = |n: usize| {
            settings
                .adf_max_lag
                .unwrap_or_else(|| stats::default_adf_max_lag(n))
        };
        let jb = optional(code, "Jarque-Bera", stats::jarque_bera(levels))?;
        let adf_level = optional(code, "ADF", stats::adf_test(levels, lag(levels.len())))?;
        let adf_diff = optional(code, "ADF", stats::adf_test(&diff, lag(diff.len())))?;
        let returns = data::log_returns(levels).stage("stats")?;
        let arch = optional(
            code,
            "ARCH-LM",
            stats::arch_lm(&returns, settings.arch_lags),
        )?;
        table.push(vec![
            code.as_str().to_string(),
            format_value(d.mean),
            format_value(d.maximum),
            format_value(d.minimum),
            format_value(d.std_dev),
            opt_cell(jb.map(|t| t.statistic)),
            opt_cell(adf_diff.map(|t| t.statistic)),
        ]);
        let arch_name = format!("ARCH-LM({})", settings.arch_lags);
        for (test, series, result) in [
            ("Jarque-Bera", "level", jb),
            ("ADF", "level", adf_level),
            ("ADF", "first_difference", adf_diff),
            (arch_name.as_str(), "log_return", arch),
        ] {
            diagnostics.push(vec![
                code.as_str().to_string(),
                test.to_string(),
                series.to_string(),
                opt_cell(result.map(|t| t.statistic)),
                opt_cell(result.and_then(|t| t.p_value)),
                opt_cell(result.and_then(|t| t.critical_value)),
                result
                    .map(|t| t.reject_at_5pct.to_string())
                    .unwrap_or_else(|| "NA".into()),
            ]);
        }
    }
    out.write_rows(
        "stats",
        "descriptive.csv",
        &[
            "Variable",
            "Mean",
            "Maximum",
            "Minimum",
            "Std. Dev.",
            "Jarque-Bera",
            "ADF",
        ],
        &table,
    )?;
    out.write_rows(
        "stats",
        "diagnostics.csv",
        &[
            "variable",
            "test",
            "series",
            "statistic",
            "p_value",
            "critical_value",
            "reject_5pct",
        ],
        &diagnostics,
    )
}

pub fn prepare(
    panel: &ObservationPanel,
    settings: &Settings,
    with_gshea: bool,
) -> CliResult<PreparedPanel> {
    PreparedPanel::new(
        panel.clone(),
        settings.roll.garch_window,
        &settings.roll.garch_spec,
        with_gshea,
    )
    .stage("gshea")
}

/// `date,SHEA,GSHEA`: GSHEA on a date is the forecast for the next trading day.
pub fn write_gshea(out: &mut Outputs, prepared: &PreparedPanel) -> CliResult<()> {
    let Some(aug) = prepared.augmented() else {
        return Ok(());
    };
    let shea = aug.column(VariableCode::Shea).stage("gshea")?;
    let gshea = aug.column(VariableCode::Gshea).stage("gshea")?;
    let rows: Vec<Vec<String>> = aug
        .dates()
        .iter()
        .zip(shea.iter().zip(gshea))
        .map(|(d, (s, g))| vec![date_str(*d), format_value(*s), format_value(*g)])
        .collect();
    out.write_rows("gshea", "gshea.csv", &["date", "SHEA", "GSHEA"], &rows)
}

pub fn rfe_stage(
    out: &mut Outputs,
    prepared: &PreparedPanel,
    settings: &Settings,
    params: &TrainParams,
) -> CliResult<Option<FeatureSet>> {
    let Some(rfe) = &settings.rfe else {
        return Ok(None);
    };
    let config = settings.roll_for(rfe.family, rfe.window);
    let result = recursive_feature_elimination(prepared, &config, &rfe.start, rfe.target, params)
        .stage("rfe")?;
    let mut rows = vec![vec![
        "0".to_string(),
        "none".to_string(),
        format_value(result.baseline_mse),
        rfe.start.len().to_string(),
    ]];
    for (i, step) in result.eliminated.iter().enumerate() {
        rows.push(vec![
            (i + 1).to_string(),
            step.removed.as_str().to_string(),
            format_value(step.tuning_mse),
            step.remaining.to_string(),
        ]);
    }
    out.write_rows(
        "rfe",
        "rfe.csv",
        &["step", "removed", "tuning_mse", "remaining"],
        &rows,
    )?;
    Ok(Some(result.selected))
}

pub fn grid_stage(
    out: &mut Outputs,
    prepared: &PreparedPanel,
    settings: &Settings,
    features: &FeatureSet,
    params: &TrainParams,
) -> CliResult<Option<TrainParams>> {
    let Some(g) = &settings.grid else {
        return Ok(None);
    };
    let config = settings.roll_for(g.family, g.window);
    let result = grid_search(prepared, &config, features, params, &g.grid).stage("grid")?;
    let rows: Vec<Vec<String>> = result
        .evaluations
        .iter()
        .map(|e| {
            vec![
                format_value(e.dropout),
                e.epochs.to_string(),
                format_value(e.learning_rate),
                format_value(e.tuning_mse),
                (*e == result.best).to_string(),
            ]
        })
        .collect();
    out.write_rows(
        "grid",
        "grid.csv",
        &["dropout", "epochs", "learning_rate", "tuning_mse", "best"],
        &rows,
    )?;
    Ok(Some(result.best_params(params)))
}

/// The (family, window) runs a settings block asks for. GARCH runs once.
pub fn run_plan(settings: &Settings) -> Vec<(ModelFamily, usize)> {
    let mut plan = Vec::new();
    for &family in &settings.families {
        if family == ModelFamily::Garch {
            plan.push((family, settings.windows[0]));
        } else {
            plan.extend(settings.windows.iter().map(|&w| (family, w)));
        }
    }
    plan
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<ForecastRecord>,
    pub arithmetic: Vec<(ModelFamily, usize, RollArithmetic)>,
}

pub fn forecast_stage(
    out: &mut Outputs,
    prepared: &PreparedPanel,
    settings: &Settings,
    features: &FeatureSet,
    params: &TrainParams,
) -> CliResult<RunResult> {
    let mut records = Vec::new();
    let mut arithmetic = Vec::new();
    for (family, n1) in run_plan(settings) {
        let config = settings.roll_for(family, n1);
        let run = rolling_run_prepared(prepared, &config, features, params).stage("run")?;
        arithmetic.push((family, config.record_window(), run.arithmetic));
        records.extend(run.records);
    }
    out.write_with("run", "forecasts.csv", |buf| {
        harness::write_forecasts(&records, buf)
    })?;
    let rows: Vec<Vec<String>> = arithmetic
        .iter()
        .map(|(f, w, a)| {
            vec![
                f.as_str().to_string(),
                w.to_string(),
                a.panel_rows.to_string(),
                a.burn_in_rows.to_string(),
                a.history.to_string(),
                a.rolls.to_string(),
                a.tuning_rolls.to_string(),
                a.implementation_rolls.to_string(),
            ]
        })
        .collect();
    out.write_rows(
        "run",
        "roll_arithmetic.csv",
        &[
            "model",
            "window",
            "panel_rows",
            "burn_in_rows",
            "history",
            "rolls",
            "tuning_rolls",
            "implementation_rolls",
        ],
        &rows,
    )?;
    Ok(RunResult {
        records,
        arithmetic,
    })
}

/// Roll counts without training anything.
pub fn arithmetic_only(
    prepared: &PreparedPanel,
    settings: &Settings,
) -> CliResult<Vec<(ModelFamily, usize, RollArithmetic)>> {
    run_plan(settings)
        .into_iter()
        .map(|(family, n1)| {
            let config = settings.roll_for(family, n1);
            roll_arithmetic(prepared, &config)
                .map(|a| (family, config.record_window(), a))
                .stage("run")
        })
        .collect()
}

pub fn evaluate_stage(
    out: &mut Outputs,
    records: &[ForecastRecord],
    settings: &Settings,
) -> CliResult<ComparisonTable> {
    let reports = evaluate_records(records, settings.metric_scope).stage("evaluate")?;
    let table = comparison_table(&reports).stage("evaluate")?;
    out.write_with("evaluate", "metrics.csv", |buf| table.write_csv(buf))?;
    Ok(table)
}

pub fn importance_stage(
    out: &mut Outputs,
    prepared: &PreparedPanel,
    settings: &Settings,
    features: &FeatureSet,
    params: &TrainParams,
) -> CliResult<Option<ImportanceTable>> {
    let Some((family, window)) = settings.importance else {
        return Ok(None);
    };
    let config = settings.roll_for(family, window);
    let table =
        leave_one_out_importance(prepared, &config, features, params).stage("importance")?;
    out.write_with("importance", "importance_metrics.csv", |buf| {
        table.write_metrics_csv(buf)
    })?;
    out.write_with("importance", "importance_ranks.csv", |buf| {
        table.write_ranks_csv(buf)
    })?;
    Ok(Some(table))
}

/// Implementation-segment forecasts of each family at the strategy window,
/// cut to the dates every family covers.
#[derive(Debug, Clone)]
pub struct StrategyInputs {
    pub forecasts: Vec<(ModelFamily, Vec<ForecastRecord>)>,
    pub prices: PriceSeries,
}

pub fn strategy_inputs(
    records: &[ForecastRecord],
    settings: &Settings,
) -> CliResult<StrategyInputs> {
    let s = &settings.strategy;
    let mut by_family: BTreeMap<ModelFamily, BTreeMap<usize, Vec<ForecastRecord>>> =
        BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.segment == Segment::Implementation)
    {
        by_family
            .entry(r.model)
            .or_default()
            .entry(r.window)
            .or_default()
            .push(r.clone());
    }
    let mut forecasts = Vec::new();
    for (family, windows) in by_family {
        let pick = if family == ModelFamily::Garch {
            windows.into_values().next()
        } else {
            windows.get(&s.window).cloned()
        };
        match pick {
            Some(mut recs) => {
                recs.sort_by_key(|r| r.date);
                forecasts.push((family, recs));
            }
            None => log::warn!(
                "{family} has no window-{} forecasts; left out of the backtest",
                s.window
            ),
        }
    }
    if forecasts.is_empty() {
        return Err(CliError::Usage(format!(
            "no implementation forecasts at window {} to backtest",
            s.window
        )));
    }
    let mut common: BTreeSet<NaiveDate> = forecasts[0].1.iter().map(|r| r.date).collect();
    for (_, recs) in &forecasts[1..] {
        let dates: BTreeSet<NaiveDate> = recs.iter().map(|r| r.date).collect();
        common = common.intersection(&dates).copied().collect();
    }
    common.retain(|d| s.start.is_none_or(|lo| *d >= lo) && s.end.is_none_or(|hi| *d <= hi));
    for (_, recs) in forecasts.iter_mut() {
        recs.retain(|r| common.contains(&r.date));
    }
    let prices = PriceSeries::from_records(&forecasts[0].1).stage("backtest")?;
    if prices.len() < 2 {
        return Err(CliError::Stage {
            stage: "backtest",
            source: Error::InsufficientData(format!("only {} common backtest dates", prices.len())),
        });
    }
    log::info!(
        "backtest window {} to {} ({} days)",
        prices.dates()[0],
        prices.dates()[prices.len() - 1],
        prices.len()
    );
    Ok(StrategyInputs { forecasts, prices })
}

pub fn signal_stage(
    out: &mut Outputs,
    inputs: &StrategyInputs,
    settings: &Settings,
) -> CliResult<Vec<(ModelFamily, SignalSeries)>> {
    let s = &settings.strategy;
    let mut all = Vec::new();
    let mut rows = Vec::new();
    for (family, recs) in &inputs.forecasts {
        let series = generate_signals(recs, s.threshold, s.denominator).stage("signals")?;
        rows.extend(series.signals.iter().map(|sig| {
            vec![
                family.as_str().to_string(),
                date_str(sig.date),
                format_value(sig.delta),
                u8::from(sig.buy).to_string(),
            ]
        }));
        all.push((*family, series));
    }
    out.write_rows(
        "signals",
        "signals.csv",
        &["model", "date", "delta", "signal"],
        &rows,
    )?;
    Ok(all)
}

#[derive(Debug, Clone)]
pub struct BacktestResult {
    pub ledgers: Vec<(ModelFamily, TradeLedger)>,
    pub rows: Vec<StrategyRow>,
    pub baseline: Vec<f64>,
    pub perfect_foresight: f64,
}

pub fn backtest_stage(
    out: &mut Outputs,
    inputs: &StrategyInputs,
    signals: &[(ModelFamily, SignalSeries)],
    settings: &Settings,
) -> CliResult<BacktestResult> {
    let s = &settings.strategy;
    let seed = settings.seed()?;
    let baseline =
        random_baseline(&inputs.prices, s.trials, s.shortfall, s.lot, seed).stage("backtest")?;
    let mut ledgers = Vec::new();
    let mut rows = Vec::new();
    for (family, series) in signals {
        let ledger =
            iceberg_backtest(series, &inputs.prices, s.shortfall, s.lot).stage("backtest")?;
        out.write_with(
            "backtest",
            &format!("ledger_{}.csv", family.as_str()),
            |buf| ledger.write_csv(buf),
        )?;
        rows.push(StrategyRow {
            strategy: family.as_str().to_string(),
            evaluation: evaluate_strategy(ledger.total_cost, &baseline, seed).stage("backtest")?,
            forced_completion: ledger.forced_completion,
        });
        ledgers.push((*family, ledger));
    }
    out.write_with("backtest", "baseline_costs.csv", |buf| {
        write_baseline_costs(&baseline, buf)
    })?;
    out.write_with("backtest", "strategy_summary.csv", |buf| {
        write_strategy_summary(&rows, buf)
    })?;
    let perfect_foresight =
        perfect_foresight(&inputs.prices, s.shortfall, s.lot).stage("backtest")?;
    Ok(BacktestResult {
        ledgers,
        rows,
        baseline,
        perfect_foresight,
    })
}

/// Dated forecast points of one model family.
type FamilyLine = (ModelFamily, Vec<(NaiveDate, f64)>);

pub fn plot_stage(
    out: &mut Outputs,
    panel: &ObservationPanel,
    prepared: &PreparedPanel,
    run: &RunResult,
) -> CliResult<()> {
    let shea = panel.column(VariableCode::Shea).stage("plot")?;
    let dated = |dates: &[NaiveDate], values: &[f64]| {
        dates.iter().copied().zip(values.iter().copied()).collect()
    };
    out.plot(
        "shea",
        "SHEA closing price",
        &[Series::new("SHEA", dated(panel.dates(), shea))],
    )?;
    let returns = data::log_returns(shea).stage("plot")?;
    out.plot(
        "shea_returns",
        "SHEA daily log return",
        &[Series::new(
            "log return",
            dated(&panel.dates()[1..], &returns),
        )],
    )?;
    if let Some(aug) = prepared.augmented() {
        // Shift the lead-aligned forecast onto the day it predicts.
        let gshea = aug.column(VariableCode::Gshea).stage("plot")?;
        let dates = &aug.dates()[1..];
        out.plot(
            "gshea",
            "Rolling GARCH forecast and SHEA",
            &[
                Series::new(
                    "SHEA",
                    dated(dates, &aug.column(VariableCode::Shea).stage("plot")?[1..]),
                ),
                Series::new("GARCH forecast", dated(dates, &gshea[..gshea.len() - 1])),
            ],
        )?;
    }
    let mut by_window: BTreeMap<usize, Vec<FamilyLine>> = BTreeMap::new();
    let mut realized: BTreeMap<usize, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for r in run
        .records
        .iter()
        .filter(|r| r.segment == Segment::Implementation)
    {
        let lines = by_window.entry(r.window).or_default();
        match lines.iter_mut().find(|(f, _)| *f == r.model) {
            Some((_, pts)) => pts.push((r.date, r.pv)),
            None => lines.push((r.model, vec![(r.date, r.pv)])),
        }
        realized.entry(r.window).or_default().insert(r.date, r.rv);
    }
    for (window, lines) in by_window {
        let mut series = vec![Series::new(
            "realized",
            realized[&window].clone().into_iter().collect(),
        )];
        series.extend(
            lines
                .into_iter()
                .map(|(f, pts)| Series::new(f.as_str(), pts)),
        );
        out.plot(
            &format!("forecast_w{window}"),
            &format!("Predicted and realized price, window {window}"),
            &series,
        )?;
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Everything a full run produced.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub features: FeatureSet,
    pub params: TrainParams,
    pub run: RunResult,
    pub metrics: ComparisonTable,
    pub importance: Option<ImportanceTable>,
    pub backtest: BacktestResult,
    pub files: Vec<String>,
}

/// Run every stage into the configured output directory. A `.partial`
/// marker naming the failed stage is left behind on error.
pub fn run_pipeline(settings: &Settings) -> CliResult<PipelineReport> {
    let input = settings.input()?.to_path_buf();
    let seed = settings.seed()?;
    let mut out = Outputs::create(settings.output()?)?;
    let marker = out.dir().join(PARTIAL_MARKER);
    std::fs::write(&marker, "stage: start\n").map_err(|e| CliError::io(&marker, e))?;
    match stages(&mut out, settings, &input, seed) {
        Ok(report) => {
            std::fs::remove_file(&marker).map_err(|e| CliError::io(&marker, e))?;
            Ok(report)
        }
        Err(e) => {
            let stage = match &e {
                CliError::Stage { stage, .. } => stage,
                _ => "pipeline",
            };
            let _ = std::fs::write(&marker, format!("stage: {stage}\nerror: {e}\n"));
            Err(e)
        }
    }
}

fn stages(
    out: &mut Outputs,
    settings: &Settings,
    input: &Path,
    seed: u64,
) -> CliResult<PipelineReport> {
    let ingested = ingest(input)?;
    write_ingest(out, &ingested)?;
    let panel = &ingested.clean;
    stats_stage(out, panel, settings)?;
    let prepared = prepare(panel, settings, settings.needs_gshea())?;
    write_gshea(out, &prepared)?;

    let mut params = settings.params;
    params.seed = seed;
    let features =
        rfe_stage(out, &prepared, settings, &params)?.unwrap_or_else(|| settings.features.clone());
    if let Some(tuned) = grid_stage(out, &prepared, settings, &features, &params)? {
        params = tuned;
    }
    let run = forecast_stage(out, &prepared, settings, &features, &params)?;
    let metrics = evaluate_stage(out, &run.records, settings)?;
    let importance = importance_stage(out, &prepared, settings, &features, &params)?;
    let inputs = strategy_inputs(&run.records, settings)?;
    let signals = signal_stage(out, &inputs, settings)?;
    let backtest = backtest_stage(out, &inputs, &signals, settings)?;
    plot_stage(out, panel, &prepared, &run)?;

    let report = PipelineReport {
        features,
        params,
        run,
        metrics,
        importance,
        backtest,
        files: Vec::new(),
    };
    out.write_bytes(
        "summary.txt",
        summary_text(settings, &ingested, &inputs, &report).as_bytes(),
    )?;
    write_manifest(out, settings, input, &ingested.raw, &report)?;
    Ok(PipelineReport {
        files: out.files().map(String::from).collect(),
        ..report
    })
}

fn summary_text(
    settings: &Settings,
    ingested: &Ingested,
    inputs: &StrategyInputs,
    report: &PipelineReport,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "carbon pipeline summary");
    let _ = writeln!(
        s,
        "panel: {} rows, {} to {}, {} missing cells filled",
        ingested.clean.len(),
        ingested.clean.dates()[0],
        ingested.clean.dates()[ingested.clean.len() - 1],
        ingested.raw.missing_count()
    );
    let _ = writeln!(s, "seed: {}", settings.seed.unwrap_or_default());
    let names: Vec<&str> = report.features.inputs.iter().map(|c| c.as_str()).collect();
    let _ = writeln!(s, "features ({}): {}", names.len(), names.join(" "));
    let p = &report.params;
    let _ = writeln!(
        s,
        "network: hidden {} dropout {} learning rate {} epochs {}",
        p.hidden_dim, p.dropout, p.learning_rate, p.epochs
    );
    let _ = writeln!(s, "\nroll arithmetic");
    for (f, w, a) in &report.run.arithmetic {
        let _ = writeln!(s, "  {f} window {w}: {a}");
    }
    let _ = writeln!(s, "\nforecast errors ({:?} segment)", settings.metric_scope);
    for r in &report.metrics.rows {
        let ll =
            r.ll.map(|v| format!("{v:.3e}"))
                .unwrap_or_else(|| "NA".into());
        let _ = writeln!(
            s,
            "  {:<10} {:>4}  MAE {:.4}  MSE {:.4}  MAPE {:.4}  MSPE {:.3e}  LL {ll}",
            r.model.as_str(),
            r.window,
            r.mae,
            r.mse,
            r.mape,
            r.mspe
        );
    }
    if let Some(best) = report
        .metrics
        .rows
        .iter()
        .min_by(|a, b| a.mae.total_cmp(&b.mae))
    {
        let _ = writeln!(s, "  lowest MAE: {} window {}", best.model, best.window);
    }
    if let Some(t) = &report.importance {
        let mut rows: Vec<_> = t.rows.iter().collect();
        rows.sort_by_key(|r| r.average_ranking);
        let top: Vec<String> = rows
            .iter()
            .take(5)
            .map(|r| format!("{}({})", r.deleted, r.average_ranking))
            .collect();
        let _ = writeln!(s, "\nmost important variables: {}", top.join(" "));
    }
    let prices = &inputs.prices;
    let _ = writeln!(
        s,
        "\nbacktest {} to {} ({} days), shortfall {} t in lots of {} t",
        prices.dates()[0],
        prices.dates()[prices.len() - 1],
        prices.len(),
        settings.strategy.shortfall,
        settings.strategy.lot
    );
    for (row, (_, ledger)) in report.backtest.rows.iter().zip(&report.backtest.ledgers) {
        let e = &row.evaluation;
        let _ =
            writeln!(
            s,
            "  {:<10} cost {:.0}  reduction {:.2}%  cheaper random trials {:.1}%  signal days {}{}",
            row.strategy,
            e.total_cost,
            100.0 * e.reduction_ratio,
            100.0 * e.relative_quantile,
            ledger.signal_days,
            if ledger.forced_completion { "  (forced completion)" } else { "" }
        );
    }
    let b = &report.backtest;
    let mean = b.baseline.iter().sum::<f64>() / b.baseline.len() as f64;
    let _ = writeln!(
        s,
        "  random mean cost {mean:.0} over {} trials",
        b.baseline.len()
    );
    let _ = writeln!(s, "  perfect foresight cost {:.0}", b.perfect_foresight);
    s
}

fn write_manifest(
    out: &mut Outputs,
    settings: &Settings,
    input: &Path,
    raw: &ObservationPanel,
    report: &PipelineReport,
) -> CliResult<()> {
    let mut files = BTreeMap::new();
    for name in out.files() {
        files.insert(name.to_string(), hash_file(&out.dir().join(name))?);
    }
    let config = serde_json::to_value(settings.source.echo()).expect("config serializes");
    let p = &report.params;
    let manifest = json!({
        "tool": "carbon",
        "versions": {
            "carbon-cli": env!("CARGO_PKG_VERSION"),
            "carbon-core": carbon_core::VERSION,
        },
        "seed": settings.seed,
        "input": {
            "path": input.display().to_string(),
            "sha256": hash_file(input)?,
            "rows": raw.len(),
            "missing_cells": raw.missing_count(),
        },
        "config": config,
        "resolved": {
            "features": report.features.inputs.iter().map(|c| c.as_str()).collect::<Vec<_>>(),
            "hidden_dim": p.hidden_dim,
            "dropout": p.dropout,
            "learning_rate": p.learning_rate,
            "epochs": p.epochs,
        },
        "outputs": files,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    // The manifest describes the other files, so it is not listed in itself.
    let path = out.dir().join(MANIFEST);
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

/// Forecast records of a previous `run`, for the stand-alone stages.
pub fn load_records(path: &Path) -> CliResult<Vec<ForecastRecord>> {
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "forecast file {} does not exist",
            path.display()
        )));
    }
    harness::load_forecasts(path).stage("load forecasts")
}
