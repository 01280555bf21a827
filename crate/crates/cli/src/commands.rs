//! Subcommand definitions and dispatch.

use std::path::{Path, PathBuf};

use carbon_core::data::{self, DATE_FORMAT};
use carbon_core::synth::{synthetic_panel, SynthConfig};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, RunConfig, Settings};
use crate::error::{CliError, CliResult, StageContext};
use crate::pipeline::{self, Outputs};
use crate::plot::Series;

#[derive(Debug, Parser)]
#[command(
    name = "carbon",
    version,
    about = "Carbon allowance price forecasting and purchasing backtests"
)]
pub struct Cli {
    /// Worker threads for parallel stages; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Log verbosity (-v info, -vv debug); RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic 23-variable panel.
    Synth(SynthArgs),
    /// Load a panel, fill gaps, write the cleaned panel.
    Ingest(RunArgs),
    /// Descriptive statistics and diagnostic tests.
    Stats(RunArgs),
    /// Rolling GARCH one-step price forecast.
    Gshea(RunArgs),
    /// Recursive feature elimination on the tuning segment.
    Rfe(RunArgs),
    /// Rolling forecasts for every selected family and window.
    Run(RunCmdArgs),
    /// Error metrics (and optional variable importance) from forecasts.
    Evaluate(StageArgs),
    /// Timing signals from forecasts.
    Signals(StageArgs),
    /// Iceberg-order backtest against the random baseline.
    Backtest(StageArgs),
    /// Every stage, with a run manifest.
    Pipeline(RunArgs),
    /// Line chart of columns of a dated CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Destination CSV.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 605)]
    pub days: usize,
    /// Probability that a non-SHEA cell is left blank.
    #[arg(long, default_value_t = 0.0)]
    pub missing: f64,
    /// First trading day, YYYY-MM-DD.
    #[arg(long)]
    pub start: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated model families, e.g. GARCH-GRU,MA.
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    /// Comma-separated sliding windows, e.g. 5,10,20.
    #[arg(long, value_delimiter = ',')]
    pub windows: Option<Vec<usize>>,
    /// Days of history per roll.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub garch_window: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Skip the leave-one-out importance study.
    #[arg(long)]
    pub no_importance: bool,
    /// Run recursive feature elimination before forecasting.
    #[arg(long)]
    pub rfe: bool,
    /// Run the hyperparameter grid search before forecasting.
    #[arg(long)]
    pub grid_search: bool,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Signal denominator: forecast or realized.
    #[arg(long)]
    pub denominator: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunCmdArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Print the roll arithmetic without training.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct StageArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Forecast CSV from `run`; defaults to <output>/forecasts.csv.
    #[arg(long)]
    pub forecasts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// CSV whose first column is `date`.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    /// Columns to plot; all numeric columns by default.
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<String>>,
    #[arg(long)]
    pub title: Option<String>,
    /// File stem of the chart and its CSV.
    #[arg(long, default_value = "plot")]
    pub name: String,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            input: self.input.clone(),
            output: self.output.clone(),
            seed: self.seed,
            families: self.families.clone(),
            windows: self.windows.clone(),
            n: self.n,
            garch_window: self.garch_window,
            epochs: self.epochs,
            hidden_dim: self.hidden_dim,
            importance: self.no_importance.then_some(false),
            rfe: self.rfe.then_some(true),
            grid: self.grid_search.then_some(true),
            threshold: self.threshold,
            denominator: self.denominator.clone(),
            trials: self.trials,
        }
    }

    /// Config file plus flags, validated.
    pub fn settings(&self) -> CliResult<Settings> {
        let mut config = match &self.config {
            Some(path) => {
                if !path.is_file() {
                    return Err(CliError::Usage(format!(
                        "config file {} does not exist",
                        path.display()
                    )));
                }
                RunConfig::load(path)?
            }
            None => RunConfig::default(),
        };
        self.overrides().apply(&mut config);
        Settings::resolve(&config)
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => {
            let s = a.settings()?;
            let ingested = pipeline::ingest(s.input()?)?;
            let mut out = Outputs::create(s.output()?)?;
            pipeline::write_ingest(&mut out, &ingested)
        }
        Command::Stats(a) => {
            let s = a.settings()?;
            let ingested = pipeline::ingest(s.input()?)?;
            let mut out = Outputs::create(s.output()?)?;
            pipeline::stats_stage(&mut out, &ingested.clean, &s)
        }
        Command::Gshea(a) => {
            let s = a.settings()?;
            let ingested = pipeline::ingest(s.input()?)?;
            let mut out = Outputs::create(s.output()?)?;
            let prepared = pipeline::prepare(&ingested.clean, &s, true)?;
            pipeline::write_gshea(&mut out, &prepared)
        }
        Command::Rfe(a) => {
            let mut s = a.settings()?;
            if s.rfe.is_none() {
                s = RunArgs { rfe: true, ..a }.settings()?;
            }
            let seed = s.seed()?;
            let ingested = pipeline::ingest(s.input()?)?;
            let mut out = Outputs::create(s.output()?)?;
            let prepared = pipeline::prepare(&ingested.clean, &s, s.needs_gshea())?;
            let params = carbon_core::TrainParams { seed, ..s.params };
            let selected =
                pipeline::rfe_stage(&mut out, &prepared, &s, &params)?.expect("rfe enabled");
            let names: Vec<&str> = selected.inputs.iter().map(|c| c.as_str()).collect();
            println!("{}", names.join(","));
            Ok(())
        }
        Command::Run(a) => {
            let s = a.run.settings()?;
            let ingested = pipeline::ingest(s.input()?)?;
            let with_gshea = s.families.iter().any(|f| f.uses_garch());
            let prepared = pipeline::prepare(&ingested.clean, &s, with_gshea)?;
            if a.dry_run {
                for (f, w, arith) in pipeline::arithmetic_only(&prepared, &s)? {
                    println!("{f} window {w}: {arith}");
                }
                return Ok(());
            }
            let params = carbon_core::TrainParams {
                seed: s.seed()?,
                ..s.params
            };
            let mut out = Outputs::create(s.output()?)?;
            pipeline::forecast_stage(&mut out, &prepared, &s, &s.features, &params)?;
            Ok(())
        }
        Command::Evaluate(a) => {
            let s = a.run.settings()?;
            let records = pipeline::load_records(&forecast_path(&a, &s)?)?;
            let mut out = Outputs::create(s.output()?)?;
            pipeline::evaluate_stage(&mut out, &records, &s)?;
            if s.importance.is_some() && s.input.is_some() {
                let ingested = pipeline::ingest(s.input()?)?;
                let prepared = pipeline::prepare(&ingested.clean, &s, s.needs_gshea())?;
                let params = carbon_core::TrainParams {
                    seed: s.seed()?,
                    ..s.params
                };
                pipeline::importance_stage(&mut out, &prepared, &s, &s.features, &params)?;
            }
            Ok(())
        }
        Command::Signals(a) => {
            let s = a.run.settings()?;
            let records = pipeline::load_records(&forecast_path(&a, &s)?)?;
            let mut out = Outputs::create(s.output()?)?;
            let inputs = pipeline::strategy_inputs(&records, &s)?;
            pipeline::signal_stage(&mut out, &inputs, &s)?;
            Ok(())
        }
        Command::Backtest(a) => {
            let s = a.run.settings()?;
            s.seed()?;
            let records = pipeline::load_records(&forecast_path(&a, &s)?)?;
            let mut out = Outputs::create(s.output()?)?;
            let inputs = pipeline::strategy_inputs(&records, &s)?;
            let signals = pipeline::signal_stage(&mut out, &inputs, &s)?;
            let result = pipeline::backtest_stage(&mut out, &inputs, &signals, &s)?;
            for row in &result.rows {
                println!(
                    "{}: cost {:.0}, reduction {:.2}%",
                    row.strategy,
                    row.evaluation.total_cost,
                    100.0 * row.evaluation.reduction_ratio
                );
            }
            Ok(())
        }
        Command::Pipeline(a) => {
            let s = a.settings()?;
            let report = pipeline::run_pipeline(&s)?;
            println!(
                "{} files written to {}",
                report.files.len() + 1,
                s.output()?.display()
            );
            Ok(())
        }
        Command::Plot(a) => plot(a),
    }
}

fn forecast_path(a: &StageArgs, s: &Settings) -> CliResult<PathBuf> {
    match &a.forecasts {
        Some(p) => Ok(p.clone()),
        None => Ok(s.output()?.join("forecasts.csv")),
    }
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let mut config = SynthConfig {
        days: a.days,
        seed: a.seed,
        missing_fraction: a.missing,
        ..SynthConfig::default()
    };
    if let Some(start) = &a.start {
        config.start = NaiveDate::parse_from_str(start, DATE_FORMAT)
            .map_err(|e| CliError::Usage(format!("start date `{start}`: {e}")))?;
    }
    let panel = synthetic_panel(&config).stage("synth")?;
    if let Some(parent) = a.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    data::save_panel(&panel, &a.output).stage("synth")
}

/// Read a wide dated CSV; `NA` and empty cells are skipped.
fn read_dated_columns(path: &Path) -> CliResult<Vec<Series>> {
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "input file {} does not exist",
            path.display()
        )));
    }
    let parse_err = |row: usize, column: &str, message: String| CliError::Stage {
        stage: "plot",
        source: carbon_core::Error::Parse {
            row,
            column: column.to_string(),
            message,
        },
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Stage {
        stage: "plot",
        source: e.into(),
    })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Stage {
            stage: "plot",
            source: e.into(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("date") || header.len() < 2 {
        return Err(parse_err(
            1,
            "date",
            "first column must be `date` followed by value columns".into(),
        ));
    }
    let mut series: Vec<Series> = header[1..]
        .iter()
        .map(|h| Series::new(h.clone(), Vec::new()))
        .collect();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| CliError::Stage {
            stage: "plot",
            source: e.into(),
        })?;
        let date = NaiveDate::parse_from_str(rec.get(0).unwrap_or(""), DATE_FORMAT)
            .map_err(|e| parse_err(row, "date", e.to_string()))?;
        for (k, s) in series.iter_mut().enumerate() {
            let cell = rec.get(k + 1).unwrap_or("").trim();
            if cell.is_empty() || cell == "NA" {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(row, &s.name, format!("`{cell}` is not a number")))?;
            s.points.push((date, v));
        }
    }
    Ok(series)
}

fn plot(a: PlotArgs) -> CliResult<()> {
    let mut series = read_dated_columns(&a.input)?;
    if let Some(cols) = &a.columns {
        for c in cols {
            if !series.iter().any(|s| &s.name == c) {
                return Err(CliError::Usage(format!(
                    "column {c} is not in {}",
                    a.input.display()
                )));
            }
        }
        series.retain(|s| cols.contains(&s.name));
    }
    let title = a.title.clone().unwrap_or_else(|| {
        series
            .iter()
            .map(|s| s.name.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    });
    crate::plot::emit_series_plot(&title, &series, &a.output, &a.name)
}
